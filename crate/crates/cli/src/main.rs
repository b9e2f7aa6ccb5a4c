use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use blflow::config::{load_runs, RunConfig};
use blflow::output::{exit_code, out_dir, run_all, write_artifacts, RunInfo};
use blflow::suites::{suite, SUITES};
use blflow_core::datum::catalog_entries;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "blflow",
    version,
    about = "Heat-flow monotonicity experiments for Brascamp-Lieb data"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the seed of every run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "BLFLOW_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a JSON config file.
    Run { config: PathBuf },
    /// Run a built-in suite: lemmas, linear, nonlinear or all.
    Verify { suite: String },
    /// List the catalog data.
    ListCatalog,
}

fn execute(mut runs: Vec<RunConfig>, base: &Path, cli: &Cli) -> Result<i32, String> {
    if let Some(s) = cli.seed {
        for r in &mut runs {
            r.seed = s;
        }
    }
    let jobs = cli.jobs.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| e.to_string())?;
    let started = SystemTime::now();
    let clock = Instant::now();
    let outcomes = pool.install(|| run_all(&runs, base));
    for o in &outcomes {
        match &o.result {
            Ok(r) => {
                let rows = r.measurements.iter().filter(|m| m.pass).count();
                println!(
                    "{:<5} {} ({}/{} rows, {:.1}s)",
                    o.status(),
                    o.config.label(),
                    rows,
                    r.measurements.len(),
                    o.seconds
                );
                for (k, ok) in &r.checks {
                    if !ok {
                        println!("      check failed: {k}");
                    }
                }
            }
            Err(e) => println!("error {}: {} [{}]", o.config.label(), e.message, e.kind),
        }
    }
    let dir = out_dir(cli.out.clone(), &runs, base);
    let info = RunInfo {
        seed: cli.seed,
        jobs,
        started,
        runtime_seconds: clock.elapsed().as_secs_f64(),
    };
    write_artifacts(&dir, &outcomes, &info).map_err(|e| format!("writing {}: {e}", dir.display()))?;
    println!("artifacts in {}", dir.display());
    Ok(exit_code(&outcomes))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ListCatalog => {
            for e in catalog_entries() {
                println!(
                    "{:<20} {:<10} {}",
                    e.name,
                    format!("{:?}", e.kind).to_lowercase(),
                    e.description
                );
            }
            Ok(0)
        }
        Command::Verify { suite: name } => match suite(name) {
            Some(runs) => execute(runs, Path::new("."), &cli),
            None => Err(format!("unknown suite {name:?}; expected one of {}", SUITES.join(", "))),
        },
        Command::Run { config } => {
            let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
            match load_runs(config) {
                Ok(runs) => execute(runs, &base, &cli),
                Err(e) => Err(e.to_string()),
            }
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
