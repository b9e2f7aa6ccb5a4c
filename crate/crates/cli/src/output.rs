//! Batch execution and the on-disk artifacts of a run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use blflow_core::harness::ExperimentReport;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::runner::{run_experiment, ErrorRecord};

pub const CSV_HEADER: [&str; 9] = [
    "experiment",
    "datum",
    "tau",
    "label",
    "lhs",
    "rhs",
    "ratio",
    "bound",
    "pass",
];

#[derive(Debug, Clone)]
pub struct Outcome {
    pub config: RunConfig,
    pub result: Result<ExperimentReport, ErrorRecord>,
    pub seconds: f64,
}

impl Outcome {
    pub fn status(&self) -> &'static str {
        match &self.result {
            Ok(r) if r.pass => "pass",
            Ok(_) => "fail",
            Err(_) => "error",
        }
    }
}

/// Runs every config, in parallel on the current rayon pool. Results keep
/// the input order.
pub fn run_all(runs: &[RunConfig], base: &Path) -> Vec<Outcome> {
    runs.par_iter()
        .map(|cfg| {
            let start = Instant::now();
            let result = run_experiment(cfg, base).map_err(|e| ErrorRecord::from(&e));
            Outcome {
                config: cfg.clone(),
                result,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// 0 when everything passes, 1 on a failed inequality, 2 on any error.
pub fn exit_code(outcomes: &[Outcome]) -> i32 {
    if outcomes.iter().any(|o| o.result.is_err()) {
        2
    } else if outcomes.iter().any(|o| o.status() == "fail") {
        1
    } else {
        0
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn csv_bytes(outcomes: &[Outcome]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for o in outcomes {
        let Ok(rep) = &o.result else { continue };
        for m in &rep.measurements {
            w.write_record([
                o.config.label(),
                rep.datum.clone(),
                m.tau.map(num).unwrap_or_default(),
                m.label.clone(),
                num(m.lhs),
                num(m.rhs),
                num(m.ratio),
                num(m.bound),
                m.pass.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

/// Per-run verdicts, checks and notes. Holds no timing, so it is identical
/// across thread counts.
pub fn summary_json(outcomes: &[Outcome]) -> Value {
    let runs: Vec<Value> = outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(r) => json!({
                "name": o.config.label(),
                "experiment": r.name,
                "datum": r.datum,
                "status": o.status(),
                "parameters": r.parameters,
                "checks": r.checks,
                "summary": r.summary,
            }),
            Err(e) => json!({
                "name": o.config.label(),
                "experiment": o.config.experiment.id(),
                "status": "error",
                "error": e,
            }),
        })
        .collect();
    json!({ "pass": exit_code(outcomes) == 0, "runs": runs })
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub experiment: String,
    pub status: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub runtime_seconds: f64,
    pub experiments: Vec<ManifestEntry>,
    pub artifacts: Vec<String>,
}

pub struct RunInfo {
    pub seed: Option<u64>,
    pub jobs: usize,
    pub started: SystemTime,
    pub runtime_seconds: f64,
}

fn unix(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    fs::write(path, bytes)
}

/// Writes `config.json`, `results.csv`, `summary.json` and `manifest.json`
/// into `dir`.
pub fn write_artifacts(dir: &Path, outcomes: &[Outcome], info: &RunInfo) -> std::io::Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let configs: Vec<&RunConfig> = outcomes.iter().map(|o| &o.config).collect();
    let config = serde_json::to_vec_pretty(&configs).expect("configs serialise");
    let names = ["config.json", "results.csv", "summary.json", "manifest.json"];
    write(&dir.join(names[0]), &config)?;
    write(&dir.join(names[1]), &csv_bytes(outcomes))?;
    let summary = serde_json::to_vec_pretty(&summary_json(outcomes)).expect("summary serialises");
    write(&dir.join(names[2]), &summary)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hex::encode(Sha256::digest(&config)),
        seed: info.seed,
        jobs: info.jobs,
        started_unix: unix(info.started),
        finished_unix: unix(SystemTime::now()),
        runtime_seconds: info.runtime_seconds,
        experiments: outcomes
            .iter()
            .map(|o| ManifestEntry {
                name: o.config.label(),
                experiment: o.config.experiment.id(),
                status: o.status().to_string(),
                seconds: o.seconds,
                error: o.result.as_ref().err().cloned(),
            })
            .collect(),
        artifacts: names.iter().map(|n| dir.join(n).display().to_string()).collect(),
    };
    write(
        &dir.join(names[3]),
        &serde_json::to_vec_pretty(&manifest).expect("manifest serialises"),
    )?;
    Ok(manifest)
}

/// `--out`, then `BLFLOW_OUT` (folded into `flag` by clap), then the first
/// config's `out`, then `blflow-out`.
pub fn out_dir(flag: Option<PathBuf>, runs: &[RunConfig], base: &Path) -> PathBuf {
    flag.or_else(|| {
        runs.iter()
            .find_map(|r| r.out.as_ref())
            .map(|o| crate::config::resolve(base, o))
    })
    .unwrap_or_else(|| PathBuf::from("blflow-out"))
}
