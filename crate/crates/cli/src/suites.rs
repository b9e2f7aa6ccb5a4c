//! Built-in verification suites.

use blflow_core::extremiser::EntryCoord;
use blflow_core::heat_flow::Truncation;

use crate::config::{ExperimentKind, MixtureSpec, RunConfig, YDeltaSpec};

pub const SUITES: [&str; 4] = ["lemmas", "linear", "nonlinear", "all"];

fn nonlinear(kind: ExperimentKind, datum: &str, eps: f64) -> RunConfig {
    RunConfig::new(kind)
        .with_catalog(datum, Some(eps))
        .named(format!("{}/{datum}({eps})", kind.id()))
}

fn linear(kind: ExperimentKind, datum: &str) -> RunConfig {
    RunConfig::new(kind)
        .with_catalog(datum, None)
        .named(format!("{}/{datum}", kind.id()))
}

fn seeded(terms: usize, seeds: &[u64]) -> Vec<MixtureSpec> {
    seeds.iter().map(|&seed| MixtureSpec::Seeded { seed, terms }).collect()
}

pub fn lemmas() -> Vec<RunConfig> {
    use ExperimentKind::*;
    let kinds = [
        LemmaTruncation,
        LemmaLocalConstancy,
        LemmaSwitching,
        LemmaBaseSwitch,
        LemmaPointwise,
        KernelRegime,
    ];
    let mut runs = Vec::new();
    for (datum, eps, point) in [
        ("perturbed-lw-eps", 0.1, vec![0.3, -0.2]),
        ("bent-holder-eps", 0.2, vec![0.3]),
    ] {
        for kind in kinds {
            let mut c = nonlinear(kind, datum, eps);
            c.point = Some(point.clone());
            runs.push(c);
        }
    }
    runs.push(RunConfig::new(InfiniteConvolution).named("infinite-convolution"));
    runs
}

pub fn linear_suite() -> Vec<RunConfig> {
    use ExperimentKind::*;
    let mut runs: Vec<RunConfig> = ["holder-1d", "holder-2d", "loomis-whitney-2d", "young-2-3"]
        .into_iter()
        .map(|d| linear(BlOracle, d))
        .collect();
    runs.push(RunConfig::new(Extremiser).named("extremiser"));

    let mut c = linear(BallInequality, "holder-1d");
    c.inputs = vec![MixtureSpec::Form(vec![vec![4.0]]), MixtureSpec::Form(vec![vec![1.0]])];
    c.taus = vec![1.0];
    runs.push(c);
    for s in 0..20u64 {
        let mut c = linear(BallInequality, "loomis-whitney-2d").named(format!("ball-inequality/loomis-whitney-2d#{s}"));
        c.inputs = seeded(3, &[2 * s, 2 * s + 1]);
        runs.push(c);
    }

    // (datum, maps, terms per input, last k of the grid 2^{k/2})
    for (datum, m, terms, last) in [
        ("holder-1d", 2, 2, 14),
        ("holder-2d", 2, 2, 14),
        ("loomis-whitney-2d", 2, 2, 14),
        ("loomis-whitney-3d", 3, 1, 16),
        ("young-2-3", 3, 2, 14),
    ] {
        let mut c = linear(MonotoneFlow, datum);
        c.inputs = seeded(terms, &(0..m).collect::<Vec<_>>());
        c.taus = (-4..=last).map(|k| 2f64.powf(k as f64 / 2.0)).collect();
        runs.push(c);
    }

    let mut c = linear(YDeltaField, "holder-1d");
    c.y_delta = Some(YDeltaSpec::new(
        vec![EntryCoord { map: 1, row: 0, col: 0 }],
        vec![1.0],
        vec![1.1],
    ));
    runs.push(c);
    runs
}

pub fn nonlinear_suite() -> Vec<RunConfig> {
    use ExperimentKind::*;
    let mut runs = vec![nonlinear(NonlinearBall, "perturbed-lw-eps", 0.1)];
    let mut c = nonlinear(NonlinearBall, "perturbed-lw-eps", 0.0);
    c.truncation = Truncation::None;
    runs.push(c);
    runs.push(nonlinear(NonlinearBall, "bent-holder-eps", 0.2));

    runs.push(nonlinear(TimeStep, "perturbed-lw-eps", 0.1));
    let mut c = nonlinear(TimeStep, "perturbed-lw-eps", 0.0);
    c.truncation = Truncation::None;
    runs.push(c);

    runs.push(nonlinear(Submultiplicativity, "perturbed-lw-eps", 0.1));
    runs.push(RunConfig::new(ChainComposition).named("chain-composition"));
    for datum in ["perturbed-lw-eps", "bulged-lw-eps"] {
        let mut c = nonlinear(LocalBl, datum, 0.1);
        c.point = Some(vec![0.0, 0.0]);
        runs.push(c);
    }
    runs.push(nonlinear(PerturbationDomination, "perturbed-lw-eps", 0.1));
    runs
}

/// Runs of a named suite, or `None` if the name is unknown.
pub fn suite(name: &str) -> Option<Vec<RunConfig>> {
    match name {
        "lemmas" => Some(lemmas()),
        "linear" => Some(linear_suite()),
        "nonlinear" => Some(nonlinear_suite()),
        "all" => Some([lemmas(), linear_suite(), nonlinear_suite()].concat()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn suites_validate_and_names_are_unique() {
        for s in SUITES {
            let runs = suite(s).unwrap();
            let mut names: Vec<String> = runs.iter().map(|r| r.label()).collect();
            for r in &runs {
                r.validate(Path::new(".")).unwrap();
            }
            names.sort();
            names.dedup();
            assert_eq!(names.len(), runs.len(), "{s}");
        }
        assert!(suite("nope").is_none());
    }
}
