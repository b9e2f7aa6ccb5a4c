//! Turns a `RunConfig` into an experiment report.

use std::path::Path;

use blflow_core::datum::linear_catalog;
use blflow_core::datum::{BoxDomain, DatumError, DatumFile, LinearDatum, NonlinearDatum};
use blflow_core::extremiser::{near_extremiser_search, DatumBox, ExtremiserError, SearchConfig};
use blflow_core::harness::{self, ExperimentReport, HarnessError};
use blflow_core::heat_flow::{HeatFlowError, KernelField};
use blflow_core::linalg;
use blflow_core::quadrature::{GaussianMixture, MixtureFile, QuadratureError};
use serde::Serialize;
use thiserror::Error;

use crate::config::{read_json, resolve, ConfigError, DatumSpec, ExperimentKind, MixtureSpec, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Datum(#[from] DatumError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Extremiser(#[from] ExtremiserError),
    #[error(transparent)]
    HeatFlow(#[from] HeatFlowError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// An error as stored in reports: the top-level kind, the message and the
/// full variant chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub detail: String,
}

impl From<&RunError> for ErrorRecord {
    fn from(e: &RunError) -> Self {
        let kind = match e {
            RunError::Config(_) => "ConfigInvalid",
            RunError::Datum(_) => "Datum",
            RunError::Quadrature(_) => "Quadrature",
            RunError::Extremiser(_) => "Extremiser",
            RunError::HeatFlow(_) => "HeatFlow",
            RunError::Harness(_) => "Harness",
        };
        Self {
            kind: kind.to_string(),
            message: e.to_string(),
            detail: format!("{e:?}"),
        }
    }
}

fn datum_file(cfg: &RunConfig, base: &Path) -> Result<DatumFile, RunError> {
    match &cfg.datum {
        Some(DatumSpec::Inline(d)) => Ok(d.clone()),
        Some(DatumSpec::Path(p)) => Ok(read_json(&resolve(base, p))?),
        None => Err(ConfigError::Invalid(format!("{} needs a datum", cfg.experiment.id())).into()),
    }
}

fn datum_label(cfg: &RunConfig) -> String {
    match &cfg.datum {
        Some(DatumSpec::Inline(d)) => d.catalog.clone().unwrap_or_else(|| "inline".into()),
        Some(DatumSpec::Path(p)) => p.clone(),
        None => "none".into(),
    }
}

fn linear(cfg: &RunConfig, base: &Path) -> Result<LinearDatum, RunError> {
    Ok(datum_file(cfg, base)?.to_linear()?)
}

fn nonlinear(cfg: &RunConfig, base: &Path) -> Result<NonlinearDatum, RunError> {
    Ok(datum_file(cfg, base)?.to_nonlinear()?)
}

fn mixture_seed(cfg: &RunConfig, s: u64) -> u64 {
    cfg.seed.wrapping_mul(1_000_003).wrapping_add(s)
}

fn inputs(cfg: &RunConfig, base: &Path, dims: &[usize]) -> Result<Vec<GaussianMixture>, RunError> {
    if cfg.inputs.is_empty() {
        return Ok(dims.iter().map(|&k| GaussianMixture::standard(k)).collect());
    }
    if cfg.inputs.len() != dims.len() {
        return Err(ConfigError::Invalid(format!("{} inputs for {} maps", cfg.inputs.len(), dims.len())).into());
    }
    cfg.inputs
        .iter()
        .zip(dims)
        .map(|(spec, &k)| {
            let m = match spec {
                MixtureSpec::File(p) => read_json::<MixtureFile>(&resolve(base, p))?.to_mixture()?,
                MixtureSpec::Inline(f) => f.to_mixture()?,
                MixtureSpec::Form(rows) => {
                    let a = linalg::from_rows(rows, rows.len())
                        .ok_or_else(|| ConfigError::Invalid("ragged form matrix".into()))?;
                    GaussianMixture::centred_form(&a)?
                }
                MixtureSpec::Seeded { seed, terms } => harness::seeded_mixture(mixture_seed(cfg, *seed), k, *terms),
                MixtureSpec::Standard => GaussianMixture::standard(k),
            };
            if m.dim() != k {
                return Err(
                    ConfigError::Invalid(format!("input of dimension {} for a map into R^{k}", m.dim())).into(),
                );
            }
            Ok(m)
        })
        .collect()
}

fn family(cfg: &RunConfig, dims: &[usize]) -> Vec<Vec<GaussianMixture>> {
    let m = dims.len() as u64;
    (0..cfg.family.size as u64)
        .map(|i| {
            dims.iter()
                .enumerate()
                .map(|(j, &k)| harness::seeded_mixture(mixture_seed(cfg, i * m + j as u64), k, cfg.family.terms))
                .collect()
        })
        .collect()
}

fn centre(d: &BoxDomain) -> Vec<f64> {
    d.lo.iter().zip(&d.hi).map(|(a, b)| 0.5 * (a + b)).collect()
}

fn point(cfg: &RunConfig, nd: &NonlinearDatum) -> Result<Vec<f64>, RunError> {
    let x = cfg.point.clone().unwrap_or_else(|| centre(nd.domain()));
    if x.len() != nd.n() {
        return Err(ConfigError::Invalid(format!(
            "point has {} coordinates, datum lives in R^{}",
            x.len(),
            nd.n()
        ))
        .into());
    }
    Ok(x)
}

fn field(cfg: &RunConfig, nd: NonlinearDatum) -> Result<KernelField, RunError> {
    Ok(KernelField::extremiser(nd, cfg.params, SearchConfig::default())?)
}

fn extremiser_of(d: &LinearDatum) -> Result<blflow_core::gaussian::GaussianInput, RunError> {
    match near_extremiser_search(d, &SearchConfig::default()) {
        Ok(r) => Ok(r.input),
        Err(ExtremiserError::MaxIterExceeded { best }) => Ok(best.input),
        Err(e) => Err(e.into()),
    }
}

/// Runs one validated config. `base` resolves relative paths.
pub fn run_experiment(cfg: &RunConfig, base: &Path) -> Result<ExperimentReport, RunError> {
    use ExperimentKind::*;
    cfg.validate(base)?;
    let taus = cfg.schedule();
    let mut quad = cfg.quadrature.clone();
    quad.seed ^= cfg.seed;
    let label = datum_label(cfg);
    let rep = match cfg.experiment {
        BallInequality | MonotoneFlow | BlOracle => {
            let d = linear(cfg, base)?;
            match cfg.experiment {
                BlOracle => harness::oracle_agreement_report(&label, &d, cfg.count, cfg.seed, cfg.tol, &quad)?,
                kind => {
                    let f = inputs(cfg, base, &d.target_dims())?;
                    let ext = extremiser_of(&d)?;
                    if kind == BallInequality {
                        harness::ball_inequality_check(&label, &d, &f, &ext, &taus, cfg.tol, &quad)?
                    } else {
                        harness::monotone_flow_curve(&label, &d, &f, &ext, &taus, cfg.terminal_tol, &quad)?
                    }
                }
            }
        }
        Extremiser => {
            let holder = vec![
                ("holder-1d", linear_catalog("holder-1d")?),
                ("holder-2d", linear_catalog("holder-2d")?),
            ];
            harness::extremiser_report(
                &holder,
                &linear_catalog("loomis-whitney-2d")?,
                &linear_catalog("young-2-3")?,
                &SearchConfig::default(),
            )?
        }
        InfiniteConvolution => harness::convolution_report(cfg.seed)?,
        ChainComposition => harness::chain_report(&taus, &cfg.chain_k, cfg.beta_trial)?,
        YDeltaField => {
            let spec = cfg.y_delta.as_ref().expect("validated");
            let dom = DatumBox::new(
                linear(cfg, base)?,
                spec.coords.clone(),
                spec.lo.clone(),
                spec.hi.clone(),
            )?;
            harness::y_delta_report(
                &label,
                &dom,
                spec.delta,
                spec.theta,
                spec.probes,
                &spec.deltas,
                &spec.seeds,
                &SearchConfig::default(),
            )?
        }
        _ => {
            let nd = nonlinear(cfg, base)?;
            let dims = nd.target_dims();
            let dom = nd.domain().clone();
            let x = point(cfg, &nd)?;
            let f = inputs(cfg, base, &dims)?;
            let kf = field(cfg, nd)?;
            match cfg.experiment {
                TimeStep => harness::time_step_report(
                    &kf,
                    &family(cfg, &dims),
                    &dom,
                    &taus,
                    cfg.beta_trial,
                    cfg.truncation,
                    cfg.cell,
                    &quad,
                )?,
                Submultiplicativity => harness::submultiplicativity_report(
                    &kf,
                    &family(cfg, &dims),
                    &dom,
                    &cfg.triples,
                    cfg.truncation,
                    cfg.cell,
                    &quad,
                )?,
                NonlinearBall => harness::nonlinear_nball_check(
                    &kf,
                    &f,
                    &dom,
                    &taus,
                    cfg.beta_trial,
                    cfg.truncation,
                    cfg.cell,
                    &quad,
                )?,
                LocalBl => harness::local_bl_check(&kf, &x, &taus, cfg.spread, cfg.beta_trial, &quad)?,
                PerturbationDomination => {
                    let pts = dom.grid(cfg.grid);
                    harness::domination_shift_sweep(&kf, &cfg.shifts, taus[0], &f, &pts)?
                }
                LemmaTruncation => harness::truncation_sweep(&kf, &x, &taus)?,
                LemmaLocalConstancy => harness::local_constancy_sweep(&kf, &x, &taus)?,
                LemmaSwitching => harness::switching_sweep(&kf, &x, &taus)?,
                LemmaBaseSwitch => harness::base_switch_sweep(&kf, &x, &f, &taus)?,
                LemmaPointwise => harness::pointwise_convergence_sweep(&kf, &x, &f, &taus)?,
                KernelRegime => harness::kernel_regime_sweep(&kf, &x, &taus, cfg.fd_step)?,
                _ => unreachable!("linear kinds handled above"),
            }
        }
    };
    Ok(rep)
}
