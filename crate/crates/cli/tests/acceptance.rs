//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use blflow::config::{ExperimentKind, RunConfig};
use blflow::output::{run_all, Outcome};
use blflow::suites::{lemmas, linear_suite, nonlinear_suite};
use blflow_core::harness::ExperimentReport;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn select(runs: Vec<RunConfig>, kinds: &[ExperimentKind]) -> Vec<RunConfig> {
    runs.into_iter().filter(|r| kinds.contains(&r.experiment)).collect()
}

fn reports(outcomes: &[Outcome]) -> Result<Vec<(String, &ExperimentReport)>, String> {
    outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(r) => Ok((o.config.label(), r)),
            Err(e) => Err(format!("{}: {}", o.config.label(), e.message)),
        })
        .collect()
}

fn find<'a>(reps: &'a [(String, &'a ExperimentReport)], name: &str) -> &'a ExperimentReport {
    reps.iter()
        .find(|(n, _)| n == name)
        .map(|(_, r)| *r)
        .unwrap_or_else(|| panic!("no run {name}"))
}

fn note(r: &ExperimentReport, key: &str) -> f64 {
    r.summary.get(key).and_then(|v| v.as_f64()).unwrap_or(f64::NAN)
}

fn failing(reps: &[(String, &ExperimentReport)]) -> Vec<String> {
    reps.iter().filter(|(_, r)| !r.pass).map(|(n, _)| n.clone()).collect()
}

fn run(kinds: &[ExperimentKind], runs: Vec<RunConfig>) -> Vec<Outcome> {
    run_all(&select(runs, kinds), Path::new("."))
}

fn oracle_agreement() -> Verdict {
    let out = run(&[ExperimentKind::BlOracle], linear_suite());
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let cases: usize = reps.iter().map(|(_, r)| r.measurements.len()).sum();
    let worst = reps
        .iter()
        .map(|(_, r)| note(r, "max_relative_deviation"))
        .fold(0.0, f64::max);
    let tol_ok = reps.iter().all(|(_, r)| r.measurements.iter().all(|m| m.bound == 1e-6));
    verdict(
        reps.len() == 4 && cases == 400 && tol_ok && failing(&reps).is_empty(),
        format!("{cases} cases on 4 data, max relative deviation {worst:.2e} (tol 1e-6)"),
    )
}

fn extremisers() -> Verdict {
    let out = run(&[ExperimentKind::Extremiser], linear_suite());
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let r = reps[0].1;
    verdict(
        r.pass,
        format!(
            "hölder value 1 +- 1e-10 with equal blocks, lw2d stationary at iterate 0, young search {:.8} vs grid {:.8}",
            note(r, "young_search"),
            note(r, "young_grid")
        ),
    )
}

fn holder_bl(a: [f64; 2]) -> f64 {
    (0.5 * (a[0] + a[1])).powf(-0.5) * (a[0] * a[1]).powf(0.25)
}

fn ball_inequality() -> Verdict {
    let out = run(&[ExperimentKind::BallInequality], linear_suite());
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let h = find(&reps, "ball-inequality/holder-1d");
    let (lhs, rhs) = (h.measurements[0].lhs, h.measurements[0].rhs);
    let oracle = (holder_bl([4.0, 1.0]), holder_bl([4.0 / 5.0, 1.0 / 2.0]));
    let closed = (lhs - oracle.0).abs() < 1e-8
        && (rhs - oracle.1).abs() < 1e-8
        && (lhs - 0.8944).abs() < 1e-4
        && (rhs - 0.9865).abs() < 1e-4
        && lhs <= rhs;
    let lw: Vec<_> = reps
        .iter()
        .filter(|(n, _)| n.starts_with("ball-inequality/loomis-whitney-2d#"))
        .collect();
    let worst = lw
        .iter()
        .flat_map(|(_, r)| r.measurements.iter().map(|m| m.ratio))
        .fold(0.0, f64::max);
    verdict(
        closed && lw.len() == 20 && worst <= 1.0 + 1e-6 && failing(&reps).is_empty(),
        format!("hölder {lhs:.6} <= {rhs:.6}, 20 lw2d mixtures max ratio {worst:.6}"),
    )
}

fn monotone_curves() -> Verdict {
    let out = run(&[ExperimentKind::MonotoneFlow], linear_suite());
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let worst = reps
        .iter()
        .filter_map(|(_, r)| r.measurements.iter().find(|m| m.label == "terminal-deviation"))
        .map(|m| m.lhs)
        .fold(0.0, f64::max);
    verdict(
        reps.len() == 5 && failing(&reps).is_empty(),
        format!("5 catalog linear data nondecreasing, worst terminal deviation {worst:.2e} (tol 1e-4)"),
    )
}

fn lemma_sweeps() -> Verdict {
    use ExperimentKind::*;
    let out = run(
        &[
            LemmaTruncation,
            LemmaLocalConstancy,
            LemmaSwitching,
            LemmaBaseSwitch,
            LemmaPointwise,
        ],
        lemmas(),
    );
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let rows: usize = reps.iter().map(|(_, r)| r.measurements.len()).sum();
    let defaults = out.iter().all(|o| {
        o.config.schedule() == vec![0.2, 0.1, 0.05, 0.02]
            && o.config.params.gamma == 0.9
            && o.config.params.epsilon == 0.05
    });
    let bad = failing(&reps);
    verdict(
        reps.len() == 10 && defaults && bad.is_empty(),
        format!(
            "5 sweeps on 2 data, {rows} rows within bounds{}",
            if bad.is_empty() {
                String::new()
            } else {
                format!(", failing {bad:?}")
            }
        ),
    )
}

fn infinite_convolution() -> Verdict {
    let out = run(&[ExperimentKind::InfiniteConvolution], lemmas());
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let r = reps[0].1;
    let scalar = r
        .measurements
        .iter()
        .find(|m| m.label == "scalar-power")
        .map_or(f64::NAN, |m| m.lhs);
    verdict(
        r.pass,
        format!("constant families within 8 eps, scalar family error {scalar:.1e}, tails below bound"),
    )
}

fn nonlinear_ball() -> Verdict {
    let out = run(&[ExperimentKind::NonlinearBall], nonlinear_suite());
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let p = find(&reps, "nonlinear-ball/perturbed-lw-eps(0.1)");
    let beta = note(p, "beta_fit");
    let fitted = p
        .measurements
        .iter()
        .all(|m| m.lhs <= (1.0 + m.tau.unwrap().powf(beta)) * m.rhs);
    let control = find(&reps, "nonlinear-ball/perturbed-lw-eps(0)");
    let linear = control.measurements.iter().map(|m| m.ratio).fold(0.0, f64::max);
    verdict(
        p.pass && beta > 0.0 && fitted && control.pass && linear <= 1.0 + 1e-6,
        format!("fitted beta {beta}, eps=0 control max ratio {linear:.4} <= 1"),
    )
}

fn local_ratios() -> Verdict {
    let out = run(
        &[ExperimentKind::LocalBl, ExperimentKind::NonlinearBall],
        nonlinear_suite(),
    );
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let beta = note(find(&reps, "nonlinear-ball/perturbed-lw-eps(0.1)"), "beta_fit");
    let r = find(&reps, "local-bl/perturbed-lw-eps(0.1)");
    let ratios: Vec<f64> = r.measurements.iter().map(|m| m.ratio).collect();
    let bounded = r
        .measurements
        .iter()
        .all(|m| m.ratio <= 1.0 + m.tau.unwrap().powf(beta));
    let rise = ratios.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        r.pass && bounded && rise <= 1e-6 && r.checks.get("excess_nonincreasing") == Some(&true),
        format!(
            "ratios {:.7}..{:.7} <= 1 + tau^{beta}, largest rise {rise:.1e} (tol 1e-6)",
            ratios[0],
            ratios[ratios.len() - 1]
        ),
    )
}

fn y_delta() -> Verdict {
    let out = run(&[ExperimentKind::YDeltaField], linear_suite());
    let reps = match reports(&out) {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let r = reps[0].1;
    let fits: Vec<f64> = r
        .summary
        .get("n_fit")
        .and_then(|v| v.as_array())
        .map_or(Vec::new(), |a| a.iter().filter_map(|x| x.as_f64()).collect());
    verdict(
        r.pass && r.measurements.len() == 50 && fits.len() == 4,
        format!(
            "50 probes within summed cell deficits, n_fit [{}] across 4 seeds",
            fits.iter().map(|f| format!("{f:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_blflow");
    let dir = tempfile::tempdir().expect("tempdir");
    let mut csv = Vec::new();
    for jobs in ["1", "4"] {
        let out = dir.path().join(format!("jobs{jobs}"));
        let status = Command::new(bin)
            .args(["verify", "all", "--seed", "0", "--jobs", jobs, "--out"])
            .arg(&out)
            .output()
            .expect("run blflow");
        if status.status.code() != Some(0) {
            return verdict(
                false,
                format!("verify all --jobs {jobs} exited {:?}", status.status.code()),
            );
        }
        csv.push(std::fs::read(out.join("results.csv")).expect("results.csv"));
    }
    verdict(
        csv[0] == csv[1] && !csv[0].is_empty(),
        format!("--jobs 1 and --jobs 4 give {} identical CSV bytes", csv[0].len()),
    )
}

type Criterion = (&'static str, f64, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("bl_g oracle agreement", 120.0, oracle_agreement),
        ("extremiser fixed points", 60.0, extremisers),
        ("ball inequality", 300.0, ball_inequality),
        ("monotone flow curves", f64::INFINITY, monotone_curves),
        ("lemma sweeps", 600.0, lemma_sweeps),
        ("infinite convolution", f64::INFINITY, infinite_convolution),
        ("nonlinear near-monotonicity", 1800.0, nonlinear_ball),
        ("local ratios", f64::INFINITY, local_ratios),
        ("y_delta field", f64::INFINITY, y_delta),
        ("determinism", f64::INFINITY, determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let secs = start.elapsed().as_secs_f64();
        let pass = v.pass && secs < *budget;
        if !pass {
            failures += 1;
        }
        let budget = if budget.is_finite() {
            format!(" < {budget:.0}s")
        } else {
            String::new()
        };
        println!(
            "criterion {:>2} {:<28} {}  {} [{secs:.1}s{budget}]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
