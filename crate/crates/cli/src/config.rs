//! Run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use blflow_core::datum::DatumFile;
use blflow_core::extremiser::EntryCoord;
use blflow_core::heat_flow::{LemmaParams, Truncation};
use blflow_core::quadrature::{MixtureFile, QuadratureConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("referenced file {0} does not exist")]
    MissingFile(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BallInequality,
    MonotoneFlow,
    TimeStep,
    Submultiplicativity,
    ChainComposition,
    NonlinearBall,
    LocalBl,
    PerturbationDomination,
    LemmaTruncation,
    LemmaLocalConstancy,
    LemmaSwitching,
    LemmaBaseSwitch,
    LemmaPointwise,
    KernelRegime,
    BlOracle,
    Extremiser,
    InfiniteConvolution,
    YDeltaField,
}

impl ExperimentKind {
    pub fn id(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .expect("unit variant")
    }

    fn default_taus(self) -> Vec<f64> {
        use ExperimentKind::*;
        match self {
            BallInequality => vec![0.5, 1.0, 2.0],
            MonotoneFlow => (-4..=14).map(|k| 2f64.powf(k as f64 / 2.0)).collect(),
            TimeStep | NonlinearBall => vec![0.2, 0.1, 0.05],
            PerturbationDomination => vec![0.2],
            ChainComposition => vec![0.1],
            LocalBl | LemmaTruncation | LemmaLocalConstancy | LemmaSwitching | LemmaBaseSwitch | LemmaPointwise
            | KernelRegime => vec![0.2, 0.1, 0.05, 0.02],
            Submultiplicativity | BlOracle | Extremiser | InfiniteConvolution | YDeltaField => Vec::new(),
        }
    }

    pub fn needs_datum(self) -> bool {
        !matches!(
            self,
            ExperimentKind::ChainComposition | ExperimentKind::Extremiser | ExperimentKind::InfiniteConvolution
        )
    }
}

/// A datum by path or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatumSpec {
    Path(String),
    Inline(DatumFile),
}

/// One input function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MixtureSpec {
    /// Path to a mixture JSON file.
    File(String),
    Inline(MixtureFile),
    /// `exp(-pi <A y, y>)` for the given matrix rows.
    Form(Vec<Vec<f64>>),
    /// A seeded random mixture in the dimension of its map.
    Seeded {
        seed: u64,
        terms: usize,
    },
    /// The standard normal density.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySpec {
    pub size: usize,
    pub terms: usize,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self { size: 20, terms: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YDeltaSpec {
    pub coords: Vec<EntryCoord>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_probes")]
    pub probes: usize,
    #[serde(default = "d_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
}

impl YDeltaSpec {
    pub fn new(coords: Vec<EntryCoord>, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self {
            coords,
            lo,
            hi,
            delta: d_delta(),
            theta: d_theta(),
            probes: d_probes(),
            deltas: d_deltas(),
            seeds: d_seeds(),
        }
    }
}

fn d_delta() -> f64 {
    0.05
}
fn d_theta() -> f64 {
    0.4
}
fn d_probes() -> usize {
    50
}
fn d_deltas() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn d_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}
fn d_beta() -> f64 {
    0.5
}
fn d_truncation() -> Truncation {
    Truncation::BASE
}
fn d_cell() -> f64 {
    0.05
}
fn d_spread() -> f64 {
    0.25
}
fn d_shifts() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.2]
}
fn d_grid() -> usize {
    5
}
fn d_tol() -> f64 {
    1e-6
}
fn d_terminal() -> f64 {
    1e-4
}
fn d_count() -> usize {
    100
}
fn d_chain() -> Vec<usize> {
    vec![1, 10, 50]
}
fn d_fd() -> f64 {
    1e-3
}
fn d_triples() -> Vec<(f64, f64, f64)> {
    vec![(0.05, 0.1, 0.2), (0.1, 0.1 * std::f64::consts::SQRT_2, 0.2)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datum: Option<DatumSpec>,
    /// One per map; empty means standard normals.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<MixtureSpec>,
    #[serde(default)]
    pub family: FamilySpec,
    /// Empty means the experiment's default schedule.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub params: LemmaParams,
    #[serde(default = "d_beta")]
    pub beta_trial: f64,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    /// Base point `x` (or `x0`); defaults to the domain centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default = "d_truncation")]
    pub truncation: Truncation,
    /// Cell width of the kernel memo in flowed integrals.
    #[serde(default = "d_cell")]
    pub cell: f64,
    /// Input width in units of `tau` for local ratios.
    #[serde(default = "d_spread")]
    pub spread: f64,
    #[serde(default = "d_shifts")]
    pub shifts: Vec<f64>,
    /// Grid side of domination sample points.
    #[serde(default = "d_grid")]
    pub grid: usize,
    /// Relative tolerance of oracle and inequality checks.
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_terminal")]
    pub terminal_tol: f64,
    #[serde(default = "d_count")]
    pub count: usize,
    #[serde(default = "d_chain")]
    pub chain_k: Vec<usize>,
    #[serde(default = "d_fd")]
    pub fd_step: f64,
    #[serde(default = "d_triples")]
    pub triples: Vec<(f64, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_delta: Option<YDeltaSpec>,
}

impl RunConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        serde_json::from_value(serde_json::json!({ "experiment": experiment })).expect("defaults deserialise")
    }

    pub fn with_catalog(mut self, name: &str, eps: Option<f64>) -> Self {
        self.datum = Some(DatumSpec::Inline(DatumFile::catalog(name, eps)));
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.experiment.id())
    }

    pub fn schedule(&self) -> Vec<f64> {
        if self.taus.is_empty() {
            self.experiment.default_taus()
        } else {
            self.taus.clone()
        }
    }

    /// Checks parameter ranges and that referenced files exist under `base`.
    pub fn validate(&self, base: &Path) -> Result<(), ConfigError> {
        let invalid = |s: String| Err(ConfigError::Invalid(s));
        self.params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.quadrature
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.truncation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return invalid("taus must be positive and finite".into());
        }
        if !(self.beta_trial > 0.0 && self.beta_trial <= 1.0) {
            return invalid(format!("beta_trial = {} outside (0, 1]", self.beta_trial));
        }
        if !(self.cell > 0.0) || !(self.spread > 0.0) || !(self.tol > 0.0) || !(self.terminal_tol > 0.0) {
            return invalid("cell, spread, tol and terminal_tol must be positive".into());
        }
        if self.experiment.needs_datum() && self.datum.is_none() {
            return invalid(format!("{} needs a datum", self.experiment.id()));
        }
        if self.experiment == ExperimentKind::YDeltaField && self.y_delta.is_none() {
            return invalid("y-delta-field needs a y_delta section".into());
        }
        if let Some(DatumSpec::Path(p)) = &self.datum {
            exists(base, p)?;
        }
        for m in &self.inputs {
            if let MixtureSpec::File(p) = m {
                exists(base, p)?;
            }
        }
        Ok(())
    }
}

fn exists(base: &Path, p: &str) -> Result<PathBuf, ConfigError> {
    let path = resolve(base, p);
    if path.is_file() {
        Ok(path)
    } else {
        Err(ConfigError::MissingFile(path.display().to_string()))
    }
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads a config file holding one run or a list of runs.
pub fn load_runs(path: &Path) -> Result<Vec<RunConfig>, ConfigError> {
    let value: serde_json::Value = read_json(path)?;
    let items = match value {
        serde_json::Value::Array(v) => v,
        v => vec![v],
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                message: format!("run {i}: {e}"),
            })
        })
        .collect()
}
