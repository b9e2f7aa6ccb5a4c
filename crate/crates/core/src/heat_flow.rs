//! Heat kernels `G_{x,tau,j}`, truncated flow operators and the local
//! lemma checks, all in euclidean coordinates (exponential maps are
//! translations).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datum::{BoxDomain, DatumError, LinearDatum, NonlinearDatum};
use crate::extremiser::{bl_estimate, near_extremiser_search, ExtremiserError, SearchConfig};
use crate::gaussian::{bl_g, infinite_convolution_limit, GaussianError, GaussianInput, KernelFamily, CONVOLUTION_TOL};
use crate::linalg;
use crate::numerics::{normal_interval, ols};
use crate::quadrature::{
    ball_integrate, integrate_scalar_box, kernel_covariance, GaussianMixture, QuadResult, QuadratureConfig,
    QuadratureError, ScalarField, TruncatedConvolution,
};

#[derive(Debug, Error)]
pub enum HeatFlowError {
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Extremiser(#[from] ExtremiserError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Datum(#[from] DatumError),
    #[error("point at distance {distance} from the base point, admissible radius {radius}")]
    OutOfDomain { distance: f64, radius: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Truncation exponent, regularity exponent, near-extremiser exponent and
/// the lemma error exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaParams {
    pub gamma: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub eta: f64,
}

impl Default for LemmaParams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon: 0.05,
            alpha: 0.03,
            eta: 0.015,
        }
    }
}

impl LemmaParams {
    pub fn validate(&self) -> Result<(), HeatFlowError> {
        let bad = |s: String| Err(HeatFlowError::InvalidParameter(s));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma = {} outside (0, 1)", self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 - self.gamma) {
            return bad(format!("epsilon = {} outside (0, 1 - gamma)", self.epsilon));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if !(self.eta > 0.0 && self.eta < self.alpha) {
            return bad(format!("eta = {} outside (0, alpha)", self.eta));
        }
        Ok(())
    }
}

/// A measured quantity with the analytic bound it must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub measured: f64,
    pub bound: f64,
}

impl Bounded {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }
}

/// Unit-mass kernels `G_j(z) = tau^{-n_j} det(A_j)^{1/2} exp(-pi tau^{-2} <A_j z, z>)`.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    base_point: Vec<f64>,
    tau: f64,
    blocks: GaussianInput,
    gamma: f64,
    epsilon: f64,
    ball_scales: Vec<f64>,
    log_dets: Vec<f64>,
}

/// Norms of the kernel matrices against `tau^{-epsilon}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormRegime {
    pub max_norm: f64,
    pub max_inverse_norm: f64,
    pub max_det: f64,
    pub max_inverse_det: f64,
    /// Finite-difference sup of `|dA|` and `|d det A|`, when measured.
    pub derivative_norm: Option<f64>,
    pub bound: f64,
}

impl NormRegime {
    pub fn holds(&self) -> bool {
        let d = self.derivative_norm.unwrap_or(0.0);
        [
            self.max_norm,
            self.max_inverse_norm,
            self.max_det,
            self.max_inverse_det,
            d,
        ]
        .iter()
        .all(|&v| v <= self.bound)
    }
}

impl HeatKernel {
    /// `ball_scales[j]` is the `|dB_j|` factor in the truncation radius.
    pub fn new(
        base_point: Vec<f64>,
        tau: f64,
        blocks: GaussianInput,
        gamma: f64,
        epsilon: f64,
        ball_scales: Vec<f64>,
    ) -> Result<Self, HeatFlowError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(HeatFlowError::InvalidParameter(format!("tau = {tau}")));
        }
        if ball_scales.len() != blocks.len() || ball_scales.iter().any(|&s| !(s > 0.0)) {
            return Err(HeatFlowError::InvalidParameter(
                "one positive ball scale per block".into(),
            ));
        }
        let log_dets = blocks
            .blocks()
            .iter()
            .enumerate()
            .map(|(j, a)| linalg::spd_logdet(a).ok_or(GaussianError::NotSpd(j + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            base_point,
            tau,
            blocks,
            gamma,
            epsilon,
            ball_scales,
            log_dets,
        })
    }

    pub fn base_point(&self) -> &[f64] {
        &self.base_point
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn blocks(&self) -> &GaussianInput {
        &self.blocks
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn ball_scale(&self, j: usize) -> f64 {
        self.ball_scales[j]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn eval(&self, j: usize, u: &[f64]) -> f64 {
        let a = self.blocks.block(j);
        let k = a.nrows();
        let v = DVector::from_column_slice(u);
        let q = v.dot(&(a * &v));
        (-(k as f64) * self.tau.ln() + 0.5 * self.log_dets[j] - PI * q / (self.tau * self.tau)).exp()
    }

    pub fn covariance(&self, j: usize) -> DMatrix<f64> {
        kernel_covariance(self.blocks.block(j), self.tau)
    }

    /// `kappa tau^gamma |dB_j|`.
    pub fn truncation_radius(&self, j: usize, kappa: f64) -> f64 {
        kappa * self.tau.powf(self.gamma) * self.ball_scales[j]
    }

    pub fn norm_regime(&self) -> NormRegime {
        let mut r = NormRegime {
            max_norm: 0.0,
            max_inverse_norm: 0.0,
            max_det: 0.0,
            max_inverse_det: 0.0,
            derivative_norm: None,
            bound: self.tau.powf(-self.epsilon),
        };
        for (a, ld) in self.blocks.blocks().iter().zip(&self.log_dets) {
            r.max_norm = r.max_norm.max(linalg::max_eigenvalue(a));
            r.max_inverse_norm = r.max_inverse_norm.max(1.0 / linalg::min_eigenvalue(a));
            r.max_det = r.max_det.max(ld.exp());
            r.max_inverse_det = r.max_inverse_det.max((-ld).exp());
        }
        r
    }

    /// Mass of `G_j` in the centred ball of radius `r`.
    pub fn ball_mass(&self, j: usize, r: f64) -> f64 {
        if r.is_infinite() {
            return 1.0;
        }
        let cov = self.covariance(j);
        let k = cov.nrows();
        if k == 1 {
            let s = cov[(0, 0)].sqrt();
            return normal_interval(-r / s, r / s);
        }
        let smin = linalg::min_eigenvalue(&cov).sqrt();
        let panels = ((2.0 * r / smin).ceil() as usize).clamp(2, 256);
        let angular = ((16.0 * PI * r / smin).ceil() as usize).clamp(64, 4096);
        ball_integrate(k, r, 16, panels, angular, &mut |u: &[f64]| self.eval(j, u))
    }
}

/// Result of the near-extremiser test `BL_g(dB(x); A_tau) >= (1 - tau^alpha c) BL`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NearExtremiserCheck {
    pub bl_g: f64,
    pub bl_est: f64,
    /// `1 - bl_g / bl_est`.
    pub deficit: f64,
    /// `(2^{alpha/2} - 1)^{-1}`.
    pub series_constant: f64,
    pub lower_bound: f64,
}

impl NearExtremiserCheck {
    pub fn holds(&self) -> bool {
        self.bl_g >= self.lower_bound
    }
}

/// Blocks of `A_tau(x)` from the infinite convolution of `family`, plus
/// its near-extremiser check against `bl_est = BL(dB(x))`.
pub fn kernel_from_family(
    family: &KernelFamily,
    datum_at_x: &LinearDatum,
    x: &[f64],
    tau: f64,
    params: &LemmaParams,
    ball_scales: Vec<f64>,
    bl_est: f64,
) -> Result<(HeatKernel, NearExtremiserCheck), HeatFlowError> {
    let limit = infinite_convolution_limit(family, tau, CONVOLUTION_TOL)?;
    let value = bl_g(datum_at_x, &limit.input)?.value;
    let a = family.alpha();
    let series_constant = 1.0 / (2f64.powf(a / 2.0) - 1.0);
    let check = NearExtremiserCheck {
        bl_g: value,
        bl_est,
        deficit: 1.0 - value / bl_est,
        series_constant,
        lower_bound: (1.0 - tau.powf(a) * series_constant) * bl_est,
    };
    let kernel = HeatKernel::new(x.to_vec(), tau, limit.input, params.gamma, params.epsilon, ball_scales)?;
    Ok((kernel, check))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Ball of radius `kappa tau^gamma |dB_j|`, `kappa` in `{1, 1.1}`.
    Ball {
        kappa: f64,
    },
    None,
}

impl Truncation {
    pub const BASE: Truncation = Truncation::Ball { kappa: 1.0 };
    pub const WIDE: Truncation = Truncation::Ball { kappa: 1.1 };

    pub fn validate(&self) -> Result<(), HeatFlowError> {
        match *self {
            Truncation::Ball { kappa } if kappa != 1.0 && kappa != 1.1 => Err(HeatFlowError::InvalidParameter(
                format!("kappa = {kappa}, expected 1 or 1.1"),
            )),
            _ => Ok(()),
        }
    }
}

/// `H f(z) = int_{|z - w| <= r} f(w) G_j(z - w) dw`.
#[derive(Debug, Clone)]
pub struct FlowOperator {
    kernel: Arc<HeatKernel>,
    j: usize,
    truncation: Truncation,
    center: Vec<f64>,
    admissible_radius: f64,
}

/// A flowed mixture ready for pointwise evaluation.
#[derive(Debug, Clone)]
pub enum FlowEval {
    Truncated(TruncatedConvolution),
    Exact(GaussianMixture),
}

impl ScalarField for FlowEval {
    fn dim(&self) -> usize {
        match self {
            FlowEval::Truncated(t) => t.dim(),
            FlowEval::Exact(m) => m.dim(),
        }
    }

    fn eval(&self, y: &[f64]) -> f64 {
        match self {
            FlowEval::Truncated(t) => t.eval(y),
            FlowEval::Exact(m) => m.eval(y),
        }
    }

    fn feature_scale(&self) -> f64 {
        match self {
            FlowEval::Truncated(t) => t.feature_scale(),
            FlowEval::Exact(m) => m.feature_scale(),
        }
    }
}

impl FlowOperator {
    /// `center` is `B_j(x)`; evaluation points further than the admissible
    /// radius (unbounded by default) are refused.
    pub fn new(
        kernel: Arc<HeatKernel>,
        j: usize,
        truncation: Truncation,
        center: Vec<f64>,
    ) -> Result<Self, HeatFlowError> {
        truncation.validate()?;
        if j >= kernel.len() {
            return Err(HeatFlowError::InvalidParameter(format!(
                "branch {} of {}",
                j + 1,
                kernel.len()
            )));
        }
        if center.len() != kernel.blocks().block(j).nrows() {
            return Err(HeatFlowError::InvalidParameter("center dimension".into()));
        }
        Ok(Self {
            kernel,
            j,
            truncation,
            center,
            admissible_radius: f64::INFINITY,
        })
    }

    pub fn with_admissible_radius(mut self, r: f64) -> Self {
        self.admissible_radius = r;
        self
    }

    pub fn kernel(&self) -> &HeatKernel {
        &self.kernel
    }

    pub fn branch(&self) -> usize {
        self.j
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        match self.truncation {
            Truncation::Ball { kappa } => self.kernel.truncation_radius(self.j, kappa),
            Truncation::None => f64::INFINITY,
        }
    }

    pub fn evaluator(&self, f: &GaussianMixture) -> Result<FlowEval, HeatFlowError> {
        let a = self.kernel.blocks().block(self.j);
        if f.dim() != a.nrows() {
            return Err(
                QuadratureError::ShapeMismatch(format!("input dim {} vs kernel dim {}", f.dim(), a.nrows())).into(),
            );
        }
        Ok(match self.truncation {
            Truncation::None => FlowEval::Exact(f.convolve_covariance(&self.kernel.covariance(self.j))?),
            Truncation::Ball { .. } => FlowEval::Truncated(TruncatedConvolution::new(
                f.clone(),
                a,
                self.kernel.tau(),
                self.radius(),
            )?),
        })
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn apply_flow(op: &FlowOperator, f: &GaussianMixture, z: &[f64]) -> Result<f64, HeatFlowError> {
    if z.len() != op.center.len() {
        return Err(HeatFlowError::InvalidParameter("point dimension".into()));
    }
    let d = distance(z, &op.center);
    if d > op.admissible_radius {
        return Err(HeatFlowError::OutOfDomain {
            distance: d,
            radius: op.admissible_radius,
        });
    }
    Ok(op.evaluator(f)?.eval(z))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TruncationCheck {
    pub block: usize,
    pub radius: f64,
    /// Ball mass over total mass.
    pub ratio: f64,
    /// `(1 + tau^epsilon)^{-1}`.
    pub bound: f64,
}

impl TruncationCheck {
    pub fn holds(&self) -> bool {
        self.ratio >= self.bound
    }
}

/// Ball-mass ratios per block at radius `kappa tau^gamma |dB_j|`.
pub fn truncation_mass_ratio(kernel: &HeatKernel, kappa: f64) -> Vec<TruncationCheck> {
    let bound = 1.0 / (1.0 + kernel.tau().powf(kernel.epsilon()));
    (0..kernel.len())
        .map(|j| {
            let radius = kernel.truncation_radius(j, kappa);
            TruncationCheck {
                block: j,
                radius,
                ratio: kernel.ball_mass(j, radius).min(1.0),
                bound,
            }
        })
        .collect()
}

/// Global bound on the Hessian norm of a mixture.
fn hessian_bound(f: &GaussianMixture) -> f64 {
    f.terms()
        .iter()
        .map(|t| {
            let k = t.center.len() as f64;
            let ld = linalg::spd_logdet(&t.covariance).expect("SPD");
            let peak = (-0.5 * (k * (2.0 * PI).ln() + ld)).exp();
            t.weight * peak / linalg::min_eigenvalue(&t.covariance)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergencePoint {
    pub tau: f64,
    pub flowed: f64,
    pub initial: f64,
    pub error: f64,
    /// `f(z) (1 - ball mass) + sup|D^2 f| tr(Cov G) / 2`.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceCurve {
    pub points: Vec<ConvergencePoint>,
    /// Log-log slope of error against `tau`, if at least two errors are
    /// nonzero.
    pub order: Option<f64>,
    pub decreasing: bool,
}

/// `|H f(z) - f(z)|` along operators ordered by decreasing `tau`.
pub fn pointwise_convergence_curve(
    ops: &[FlowOperator],
    f: &GaussianMixture,
    z: &[f64],
) -> Result<ConvergenceCurve, HeatFlowError> {
    if ops.windows(2).any(|w| w[1].kernel.tau() >= w[0].kernel.tau()) {
        return Err(HeatFlowError::PreconditionViolated("tau sweep must decrease".into()));
    }
    let h2 = hessian_bound(f);
    let initial = f.eval(z);
    let mut points = Vec::with_capacity(ops.len());
    for op in ops {
        let flowed = apply_flow(op, f, z)?;
        let mass = op.kernel.ball_mass(op.j, op.radius()).min(1.0);
        let tr = op.kernel.covariance(op.j).trace();
        points.push(ConvergencePoint {
            tau: op.kernel.tau(),
            flowed,
            initial,
            error: (flowed - initial).abs(),
            bound: initial * (1.0 - mass) + 0.5 * h2 * tr,
        });
    }
    let floor = 1e-13 * initial.abs().max(f64::MIN_POSITIVE);
    let decreasing = points
        .windows(2)
        .all(|w| w[1].error < w[0].error || w[1].error <= floor);
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.error > floor)
        .map(|p| (p.tau.ln(), p.error.ln()))
        .unzip();
    let order = if xs.len() >= 2 {
        ols(&xs, &ys).map(|(s, _)| s)
    } else {
        None
    };
    Ok(ConvergenceCurve {
        points,
        order,
        decreasing,
    })
}

/// `G_j(v) / G_j(w)` against `exp(2 pi |A_j| |dB_j| tau^{gamma - epsilon})`.
pub fn local_constancy_ratio(kernel: &HeatKernel, j: usize, v: &[f64], w: &[f64]) -> Result<Bounded, HeatFlowError> {
    let tau = kernel.tau();
    let r = kernel.truncation_radius(j, 1.0) * (1.0 + 1e-12);
    if distance(v, w) > tau * tau * (1.0 + 1e-12) {
        return Err(HeatFlowError::PreconditionViolated(format!(
            "|v - w| = {} exceeds tau^2 = {}",
            distance(v, w),
            tau * tau
        )));
    }
    if norm(v) > r || norm(w) > r {
        return Err(HeatFlowError::PreconditionViolated(format!(
            "points outside the ball of radius {r}"
        )));
    }
    let a = kernel.blocks().block(j);
    let (dv, dw) = (DVector::from_column_slice(v), DVector::from_column_slice(w));
    let log_ratio = -PI / (tau * tau) * (dv.dot(&(a * &dv)) - dw.dot(&(a * &dw)));
    let c2 = linalg::max_eigenvalue(a);
    Ok(Bounded {
        measured: log_ratio.exp(),
        bound: (2.0 * c2 * PI * kernel.ball_scale(j) * tau.powf(kernel.gamma() - kernel.epsilon())).exp(),
    })
}

type FamilyFn = dyn Fn(&LinearDatum, &[f64]) -> Result<KernelFamily, HeatFlowError> + Send + Sync;

/// Data attached to one base point `x`.
pub struct FieldPoint {
    pub datum: LinearDatum,
    pub family: KernelFamily,
    bl_est: OnceLock<f64>,
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// The field `x -> (dB(x), a_tau(x), A_tau(x))` with memoised points and
/// kernels.
pub struct KernelField {
    datum: NonlinearDatum,
    params: LemmaParams,
    search: SearchConfig,
    ball_scales: Vec<f64>,
    uniform: bool,
    family_fn: Arc<FamilyFn>,
    points: Mutex<HashMap<Vec<u64>, Arc<FieldPoint>>>,
    kernels: Mutex<HashMap<(Vec<u64>, u64), Arc<HeatKernel>>>,
}

impl std::fmt::Debug for KernelField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelField")
            .field("datum", &self.datum.name())
            .field("params", &self.params)
            .field("uniform", &self.uniform)
            .finish()
    }
}

impl KernelField {
    /// `family_fn(dB(x), x)` gives the scale family at `x`.
    pub fn from_fn<F>(
        datum: NonlinearDatum,
        params: LemmaParams,
        search: SearchConfig,
        family_fn: F,
    ) -> Result<Self, HeatFlowError>
    where
        F: Fn(&LinearDatum, &[f64]) -> Result<KernelFamily, HeatFlowError> + Send + Sync + 'static,
    {
        Self::build(datum, params, search, false, Arc::new(family_fn))
    }

    fn build(
        datum: NonlinearDatum,
        params: LemmaParams,
        search: SearchConfig,
        uniform: bool,
        family_fn: Arc<FamilyFn>,
    ) -> Result<Self, HeatFlowError> {
        params.validate()?;
        let ball_scales = (0..datum.m()).map(|j| datum.derivative_bound(j)).collect();
        Ok(Self {
            datum,
            params,
            search,
            ball_scales,
            uniform,
            family_fn,
            points: Mutex::new(HashMap::new()),
            kernels: Mutex::new(HashMap::new()),
        })
    }

    /// Constant-in-scale family at the near-extremiser found at `dB(x)`.
    pub fn extremiser(datum: NonlinearDatum, params: LemmaParams, search: SearchConfig) -> Result<Self, HeatFlowError> {
        let alpha = params.alpha;
        let cfg = search.clone();
        let f = move |d: &LinearDatum, _: &[f64]| -> Result<KernelFamily, HeatFlowError> {
            let r = near_extremiser_search(d, &cfg)?;
            Ok(KernelFamily::constant(alpha, r.input)?)
        };
        let affine = datum.maps().iter().all(|b| b.degree() <= 1);
        Self::build(datum, params, search, affine, Arc::new(f))
    }

    /// The same input at every point and scale.
    pub fn constant(datum: NonlinearDatum, params: LemmaParams, input: GaussianInput) -> Result<Self, HeatFlowError> {
        let family = KernelFamily::constant(params.alpha, input)?;
        Self::build(
            datum,
            params,
            SearchConfig::default(),
            true,
            Arc::new(move |_: &LinearDatum, _: &[f64]| Ok(family.clone())),
        )
    }

    pub fn datum(&self) -> &NonlinearDatum {
        &self.datum
    }

    pub fn params(&self) -> &LemmaParams {
        &self.params
    }

    pub fn ball_scale(&self, j: usize) -> f64 {
        self.ball_scales[j]
    }

    /// Whether the kernels do not depend on `x`.
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    fn key(&self, x: &[f64]) -> Vec<u64> {
        if self.uniform {
            Vec::new()
        } else {
            bits(x)
        }
    }

    pub fn point(&self, x: &[f64]) -> Result<Arc<FieldPoint>, HeatFlowError> {
        let key = self.key(x);
        if let Some(p) = self.points.lock().expect("poisoned").get(&key) {
            return Ok(p.clone());
        }
        let datum = self.datum.linearization(x)?;
        let family = (self.family_fn)(&datum, x)?;
        let p = Arc::new(FieldPoint {
            datum,
            family,
            bl_est: OnceLock::new(),
        });
        Ok(self.points.lock().expect("poisoned").entry(key).or_insert(p).clone())
    }

    /// `BL(dB(x))` from the extremiser search.
    pub fn bl_est(&self, x: &[f64]) -> Result<f64, HeatFlowError> {
        let p = self.point(x)?;
        if let Some(v) = p.bl_est.get() {
            return Ok(*v);
        }
        let v = bl_estimate(&p.datum, &self.search)?.value;
        Ok(*p.bl_est.get_or_init(|| v))
    }

    pub fn kernel(&self, x: &[f64], tau: f64) -> Result<Arc<HeatKernel>, HeatFlowError> {
        let key = (self.key(x), tau.to_bits());
        if let Some(k) = self.kernels.lock().expect("poisoned").get(&key) {
            return Ok(k.clone());
        }
        let p = self.point(x)?;
        let limit = infinite_convolution_limit(&p.family, tau, CONVOLUTION_TOL)?;
        let k = Arc::new(HeatKernel::new(
            x.to_vec(),
            tau,
            limit.input,
            self.params.gamma,
            self.params.epsilon,
            self.ball_scales.clone(),
        )?);
        Ok(self.kernels.lock().expect("poisoned").entry(key).or_insert(k).clone())
    }

    pub fn near_extremiser_check(&self, x: &[f64], tau: f64) -> Result<NearExtremiserCheck, HeatFlowError> {
        let p = self.point(x)?;
        let bl = self.bl_est(x)?;
        Ok(kernel_from_family(&p.family, &p.datum, x, tau, &self.params, self.ball_scales.clone(), bl)?.1)
    }

    /// `H_{x,tau,j}` centred at `B_j(x)`.
    pub fn flow(&self, x: &[f64], tau: f64, j: usize, truncation: Truncation) -> Result<FlowOperator, HeatFlowError> {
        FlowOperator::new(self.kernel(x, tau)?, j, truncation, self.datum.eval(j, x))
    }

    /// Norm regime at `x` including central differences of `A_tau` and
    /// `det A_tau` with step `h`.
    pub fn c1_regime(&self, x: &[f64], tau: f64, h: f64) -> Result<NormRegime, HeatFlowError> {
        let k0 = self.kernel(x, tau)?;
        let mut regime = k0.norm_regime();
        let mut d: f64 = 0.0;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let (kp, km) = (self.kernel(&xp, tau)?, self.kernel(&xm, tau)?);
            for j in 0..k0.len() {
                let da = (kp.blocks().block(j) - km.blocks().block(j)) / (2.0 * h);
                d = d.max(linalg::op_norm(&da));
                let dd = (kp.log_dets[j].exp() - km.log_dets[j].exp()) / (2.0 * h);
                d = d.max(dd.abs());
            }
        }
        regime.derivative_norm = Some(d);
        Ok(regime)
    }
}

fn log_g(a: &DMatrix<f64>, tau: f64, v: &DVector<f64>) -> f64 {
    -(a.nrows() as f64) * tau.ln() - PI / (tau * tau) * v.dot(&(a * v))
}

/// Ratio of the two sides of the switching inequality, against `1 + tau^eta`.
pub fn switching_factor(field: &KernelField, x: &[f64], y: &[f64], tau: f64) -> Result<Bounded, HeatFlowError> {
    let g = field.params().gamma;
    if distance(x, y) > tau.powf(g) * (1.0 + 1e-12) {
        return Err(HeatFlowError::PreconditionViolated(format!(
            "|x - y| exceeds tau^gamma = {}",
            tau.powf(g)
        )));
    }
    let (px, py) = (field.point(x)?, field.point(y)?);
    let (ax, ay) = (px.family.at(tau)?, py.family.at(tau)?);
    let xy = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
    let yx = -&xy;
    let d = field.datum();
    let mut log_num = field.bl_est(x)?.ln();
    let mut log_den = field.bl_est(y)?.ln();
    for j in 0..d.m() {
        let p = d.p(j);
        if p == 0.0 {
            continue;
        }
        log_num += p * log_g(ay.block(j), tau, &(py.datum.map(j) * &xy));
        log_den += p * log_g(ax.block(j), tau, &(px.datum.map(j) * &yx));
    }
    Ok(Bounded {
        measured: (log_num - log_den).exp(),
        bound: 1.0 + tau.powf(field.params().eta),
    })
}

/// `H_{y,tau,j} f(z) / H_{x,tau,j} f(z)` against `1 + tau^eta`.
pub fn base_switch_factor(
    field: &KernelField,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    tau: f64,
    j: usize,
    f: &GaussianMixture,
) -> Result<Bounded, HeatFlowError> {
    let g = field.params().gamma;
    if distance(x, y) > tau.powf(g) * (1.0 + 1e-12) {
        return Err(HeatFlowError::PreconditionViolated(format!(
            "|x - y| exceeds tau^gamma = {}",
            tau.powf(g)
        )));
    }
    let bx = field.datum().eval(j, x);
    let r = tau.powf(g) * field.ball_scale(j);
    if distance(z, &bx) > r * (1.0 + 1e-12) {
        return Err(HeatFlowError::PreconditionViolated(format!("|z - B_j(x)| exceeds {r}")));
    }
    let hx = apply_flow(&field.flow(x, tau, j, Truncation::BASE)?, f, z)?;
    let hy = apply_flow(&field.flow(y, tau, j, Truncation::BASE)?, f, z)?;
    Ok(Bounded {
        measured: hy / hx,
        bound: 1.0 + tau.powf(field.params().eta),
    })
}

/// `H_tau f(y) = tau^{-k} int f(z) exp(-pi tau^{epsilon - 2} |y - z|^2) dz`.
pub fn isotropic_flow(f: &GaussianMixture, tau: f64, epsilon: f64, y: &[f64]) -> Result<f64, HeatFlowError> {
    let k = f.dim();
    let var = tau.powf(2.0 - epsilon) / (2.0 * PI);
    let conv = f.convolve_covariance(&(DMatrix::identity(k, k) * var))?;
    Ok(tau.powf(-(k as f64) * epsilon / 2.0) * conv.eval(y))
}

/// The factor `K` with `H_{x,tau,j} f(B_j(x)) <= K H_tau f(B~_j(x))` when
/// `|B - B~| <= big_r` and the truncation radius is `r`:
/// `det(A)^{1/2} exp(pi tau^{-2} |A| R (2 r + R))`.
pub fn domination_factor(kernel: &HeatKernel, j: usize, r: f64, big_r: f64) -> Result<f64, HeatFlowError> {
    let a = kernel.blocks().block(j);
    let tau = kernel.tau();
    let floor = tau.powf(kernel.epsilon());
    if linalg::min_eigenvalue(a) < floor {
        return Err(HeatFlowError::PreconditionViolated(format!(
            "smallest eigenvalue below tau^epsilon = {floor}"
        )));
    }
    let log_k = 0.5 * kernel.log_dets[j] + PI / (tau * tau) * linalg::max_eigenvalue(a) * big_r * (2.0 * r + big_r);
    Ok(log_k.exp())
}

/// `x -> prod_j (H_{x,tau,j} f_j)(B_j(x))^{p_j}` with kernels memoised on
/// cells of width `cell`, each evaluated at its centre.
pub struct FlowedProduct<'a> {
    field: &'a KernelField,
    inputs: &'a [GaussianMixture],
    tau: f64,
    truncation: Truncation,
    cell: f64,
    cache: Mutex<HashMap<Vec<i64>, Arc<Vec<FlowEval>>>>,
    error: Mutex<Option<HeatFlowError>>,
}

impl<'a> FlowedProduct<'a> {
    pub fn new(
        field: &'a KernelField,
        inputs: &'a [GaussianMixture],
        tau: f64,
        truncation: Truncation,
        cell: f64,
    ) -> Result<Self, HeatFlowError> {
        truncation.validate()?;
        let d = field.datum();
        if inputs.len() != d.m() {
            return Err(HeatFlowError::InvalidParameter(format!(
                "{} inputs for {} maps",
                inputs.len(),
                d.m()
            )));
        }
        for (j, (f, k)) in inputs.iter().zip(d.target_dims()).enumerate() {
            if f.dim() != k {
                return Err(HeatFlowError::InvalidParameter(format!(
                    "input {} has dim {}, map has {k}",
                    j + 1,
                    f.dim()
                )));
            }
        }
        if !(cell > 0.0) {
            return Err(HeatFlowError::InvalidParameter(format!("cell width {cell}")));
        }
        Ok(Self {
            field,
            inputs,
            tau,
            truncation,
            cell,
            cache: Mutex::new(HashMap::new()),
            error: Mutex::new(None),
        })
    }

    fn evals_at(&self, x: &[f64]) -> Result<Arc<Vec<FlowEval>>, HeatFlowError> {
        let (key, centre): (Vec<i64>, Vec<f64>) = if self.field.is_uniform() {
            (Vec::new(), x.to_vec())
        } else {
            x.iter()
                .map(|&v| {
                    let c = (v / self.cell).floor();
                    (c as i64, (c + 0.5) * self.cell)
                })
                .unzip()
        };
        if let Some(e) = self.cache.lock().expect("poisoned").get(&key) {
            return Ok(e.clone());
        }
        let kernel = self.field.kernel(&centre, self.tau)?;
        let evals = (0..self.inputs.len())
            .map(|j| {
                let op = FlowOperator::new(kernel.clone(), j, self.truncation, vec![0.0; self.inputs[j].dim()])?;
                op.evaluator(&self.inputs[j])
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .cache
            .lock()
            .expect("poisoned")
            .entry(key)
            .or_insert(Arc::new(evals))
            .clone())
    }

    /// Zero when evaluation fails; the error surfaces from `integrate`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let evals = match self.evals_at(x) {
            Ok(e) => e,
            Err(e) => {
                self.error.lock().expect("poisoned").get_or_insert(e);
                return 0.0;
            }
        };
        let d = self.field.datum();
        let mut log = 0.0;
        let mut y = [0.0; 8];
        for (j, h) in evals.iter().enumerate() {
            let p = d.p(j);
            if p == 0.0 {
                continue;
            }
            let b = &d.maps()[j];
            let k = b.out_dim();
            b.eval_into(x, &mut y[..k]);
            let v = h.eval(&y[..k]);
            if v <= 0.0 {
                return 0.0;
            }
            log += p * v.ln();
        }
        log.exp()
    }

    pub fn integrate(&self, domain: &BoxDomain, cfg: &QuadratureConfig) -> Result<QuadResult, HeatFlowError> {
        let centre: Vec<f64> = domain.lo.iter().zip(&domain.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let evals = self.evals_at(&centre)?;
        let feature = evals
            .iter()
            .enumerate()
            .map(|(j, h)| h.feature_scale() / self.field.ball_scale(j).max(1e-12))
            .fold(f64::INFINITY, f64::min);
        let r = integrate_scalar_box(domain, feature, cfg, &|x: &[f64]| self.eval(x))?;
        if let Some(e) = self.error.lock().expect("poisoned").take() {
            return Err(e);
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::{linear_catalog, nonlinear_catalog};
    use crate::numerics::normal_pdf;
    use approx::assert_relative_eq;

    fn iso_kernel(a: &[f64], tau: f64, gamma: f64) -> HeatKernel {
        HeatKernel::new(
            vec![0.0],
            tau,
            GaussianInput::scalars(a).unwrap(),
            gamma,
            0.05,
            vec![1.0; a.len()],
        )
        .unwrap()
    }

    fn holder_field() -> KernelField {
        let d = linear_catalog("holder-1d").unwrap();
        let nd = NonlinearDatum::from_linear("holder-1d", &d, BoxDomain::cube(1, 1.0)).unwrap();
        KernelField::extremiser(nd, LemmaParams::default(), SearchConfig::default()).unwrap()
    }

    #[test]
    fn kernel_has_unit_mass() {
        let k = HeatKernel::new(
            vec![0.0, 0.0],
            0.3,
            GaussianInput::new(vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0])]).unwrap(),
            0.9,
            0.05,
            vec![1.0],
        )
        .unwrap();
        let m = ball_integrate(2, 3.0, 16, 16, 256, &mut |u: &[f64]| k.eval(0, u));
        assert_relative_eq!(m, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn one_dimensional_truncation_is_erf() {
        let k = iso_kernel(&[1.0], 0.01, 0.75);
        let c = truncation_mass_ratio(&k, 1.0);
        let expect = libm::erf(PI.sqrt() * 0.01f64.powf(-0.25));
        assert_relative_eq!(c[0].ratio, expect, max_relative = 1e-15);
        assert!(c[0].ratio >= 1.0 - 1e-12);
        assert!(c[0].holds());
    }

    #[test]
    fn isotropic_2d_ball_mass_closed_form() {
        let k = HeatKernel::new(vec![0.0; 2], 0.2, GaussianInput::identity(&[2]), 0.9, 0.05, vec![1.0]).unwrap();
        let r = k.truncation_radius(0, 1.0);
        let s2 = k.covariance(0)[(0, 0)];
        let exact = 1.0 - (-r * r / (2.0 * s2)).exp();
        assert_relative_eq!(k.ball_mass(0, r), exact, max_relative = 1e-12);
    }

    #[test]
    fn untruncated_flow_matches_exact_convolution() {
        let k = Arc::new(iso_kernel(&[1.0], 0.05, 0.9));
        let f = GaussianMixture::standard(1);
        let exact = FlowOperator::new(k.clone(), 0, Truncation::None, vec![0.0]).unwrap();
        let v = apply_flow(&exact, &f, &[0.0]).unwrap();
        let var = 1.0 + 0.05f64.powi(2) / (2.0 * PI);
        assert_relative_eq!(v, normal_pdf(0.0, var), max_relative = 1e-14);
        let trunc = FlowOperator::new(k.clone(), 0, Truncation::BASE, vec![0.0]).unwrap();
        let t = apply_flow(&trunc, &f, &[0.0]).unwrap();
        let deficit = 1.0 - truncation_mass_ratio(&k, 1.0)[0].ratio;
        assert!(t <= v && v - t <= deficit * f.eval(&[0.0]) + 1e-15);
    }

    #[test]
    fn far_input_is_invisible() {
        let k = Arc::new(iso_kernel(&[1.0], 0.05, 0.9));
        let f = GaussianMixture::new(
            1,
            vec![crate::quadrature::MixtureTerm::new(
                1.0,
                DVector::from_element(1, 5.0),
                DMatrix::from_element(1, 1, 1e-4),
            )
            .unwrap()],
        )
        .unwrap();
        let op = FlowOperator::new(k, 0, Truncation::BASE, vec![0.0]).unwrap();
        assert!(apply_flow(&op, &f, &[0.0]).unwrap() < 1e-300);
    }

    #[test]
    fn out_of_domain_refused() {
        let k = Arc::new(iso_kernel(&[1.0], 0.05, 0.9));
        let op = FlowOperator::new(k, 0, Truncation::BASE, vec![0.0])
            .unwrap()
            .with_admissible_radius(0.5);
        let e = apply_flow(&op, &GaussianMixture::standard(1), &[0.7]).unwrap_err();
        assert!(matches!(e, HeatFlowError::OutOfDomain { .. }));
    }

    #[test]
    fn bad_kappa_refused() {
        let k = Arc::new(iso_kernel(&[1.0], 0.05, 0.9));
        assert!(FlowOperator::new(k, 0, Truncation::Ball { kappa: 1.3 }, vec![0.0]).is_err());
    }

    #[test]
    fn semigroup_untruncated() {
        let f = GaussianMixture::standard(1);
        let k1 = Arc::new(iso_kernel(&[1.7], 0.3, 0.9));
        let k2 = Arc::new(iso_kernel(&[1.7], 0.3 * 2f64.sqrt(), 0.9));
        let once = FlowOperator::new(k1, 0, Truncation::None, vec![0.0]).unwrap();
        let twice = match once.evaluator(&f).unwrap() {
            FlowEval::Exact(m) => m,
            _ => unreachable!(),
        };
        let a = apply_flow(&once, &twice, &[0.4]).unwrap();
        let b = apply_flow(
            &FlowOperator::new(k2, 0, Truncation::None, vec![0.0]).unwrap(),
            &f,
            &[0.4],
        )
        .unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-13);
    }

    #[test]
    fn pointwise_convergence_standard_gaussian() {
        let f = GaussianMixture::standard(1);
        let ops: Vec<FlowOperator> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&t| FlowOperator::new(Arc::new(iso_kernel(&[1.0], t, 0.9)), 0, Truncation::BASE, vec![0.0]).unwrap())
            .collect();
        let c = pointwise_convergence_curve(&ops, &f, &[0.0]).unwrap();
        assert!(c.decreasing);
        assert!(c.order.unwrap() >= 1.0);
        assert!(c.points.iter().all(|p| p.error <= p.bound));
    }

    #[test]
    fn pointwise_convergence_flat_input() {
        let f = GaussianMixture::new(
            1,
            vec![
                crate::quadrature::MixtureTerm::new(1.0, DVector::zeros(1), DMatrix::from_element(1, 1, 1e12)).unwrap(),
            ],
        )
        .unwrap();
        let ops: Vec<FlowOperator> = [0.2, 0.1]
            .iter()
            .map(|&t| FlowOperator::new(Arc::new(iso_kernel(&[1.0], t, 0.9)), 0, Truncation::None, vec![0.0]).unwrap())
            .collect();
        let c = pointwise_convergence_curve(&ops, &f, &[0.0]).unwrap();
        assert!(c.points.iter().all(|p| p.error <= 1e-12 * p.initial));
    }

    #[test]
    fn local_constancy_anisotropic() {
        let tau: f64 = 0.05;
        let k = HeatKernel::new(
            vec![0.0; 2],
            tau,
            GaussianInput::new(vec![DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))]).unwrap(),
            0.8,
            0.05,
            vec![1.0],
        )
        .unwrap();
        let r = tau.powf(0.8);
        let v = [r - tau * tau, 0.0];
        let w = [r, 0.0];
        let b = local_constancy_ratio(&k, 0, &v, &w).unwrap();
        assert!(b.holds(), "{b:?}");
        assert!(b.measured > 1.0);
        let same = local_constancy_ratio(&k, 0, &v, &v).unwrap();
        assert_eq!(same.measured, 1.0);
        let outside = [r + tau * tau, 0.0];
        assert!(matches!(
            local_constancy_ratio(&k, 0, &w, &outside),
            Err(HeatFlowError::PreconditionViolated(_))
        ));
    }

    #[test]
    fn constant_family_kernel_is_the_extremiser() {
        let d = linear_catalog("loomis-whitney-2d").unwrap();
        let input = GaussianInput::identity(&[1, 1]);
        let fam = KernelFamily::constant(0.03, input.clone()).unwrap();
        let (k, c) =
            kernel_from_family(&fam, &d, &[0.0, 0.0], 0.1, &LemmaParams::default(), vec![1.0, 1.0], 1.0).unwrap();
        assert_eq!(k.blocks().max_abs_diff(&input), 0.0);
        assert!(c.deficit.abs() < 1e-15);
    }

    #[test]
    fn perturbed_family_limit_and_deficit() {
        let d = linear_catalog("holder-1d").unwrap();
        let alpha = 0.3;
        let fam = KernelFamily::new(alpha, 1.0, vec![1, 1], move |s| {
            GaussianInput::scalars(&[1.0 + s.powf(alpha), 1.0])
        })
        .unwrap();
        let mut last = f64::INFINITY;
        for tau in [0.2, 0.1, 0.05] {
            let (k, c) =
                kernel_from_family(&fam, &d, &[0.0], tau, &LemmaParams::default(), vec![1.0, 1.0], 1.0).unwrap();
            let series: f64 = (1..200)
                .map(|j| {
                    let s: f64 = tau * 0.5f64.powf(j as f64 / 2.0);
                    0.5f64.powi(j) / (1.0 + s.powf(alpha))
                })
                .sum();
            assert_relative_eq!(k.blocks().block(0)[(0, 0)], 1.0 / series, max_relative = 1e-13);
            assert!(c.deficit >= 0.0 && c.deficit <= last);
            assert!(c.holds());
            last = c.deficit;
        }
    }

    #[test]
    fn switching_linear_is_one() {
        let field = holder_field();
        let b = switching_factor(&field, &[0.0], &[0.05f64.powf(0.9)], 0.05).unwrap();
        assert_relative_eq!(b.measured, 1.0, max_relative = 1e-12);
        assert!(b.holds());
        let same = switching_factor(&field, &[0.3], &[0.3], 0.05).unwrap();
        assert_eq!(same.measured, 1.0);
    }

    #[test]
    fn switching_perturbed_lw() {
        let nd = nonlinear_catalog("perturbed-lw-eps", 0.1).unwrap();
        let field = KernelField::extremiser(nd, LemmaParams::default(), SearchConfig::default()).unwrap();
        let tau: f64 = 0.05;
        let r = tau.powf(0.9);
        for y in [[r, 0.0], [0.0, r], [-r / 2f64.sqrt(), r / 2f64.sqrt()]] {
            let b = switching_factor(&field, &[0.0, 0.0], &y, tau).unwrap();
            assert!(b.holds(), "{b:?}");
        }
        assert!(switching_factor(&field, &[0.0, 0.0], &[2.0 * r, 0.0], tau).is_err());
    }

    #[test]
    fn base_switch_smooth_family() {
        let d = linear_catalog("holder-1d").unwrap();
        let nd = NonlinearDatum::from_linear("holder-1d", &d, BoxDomain::cube(1, 1.0)).unwrap();
        let params = LemmaParams::default();
        let field = KernelField::from_fn(nd, params, SearchConfig::default(), move |_, x| {
            let a = 1.0 + 0.1 * x[0].sin();
            Ok(KernelFamily::constant(params.alpha, GaussianInput::scalars(&[a, a])?)?)
        })
        .unwrap();
        let tau: f64 = 0.05;
        let r = tau.powf(0.9);
        let f = GaussianMixture::standard(1);
        let b = base_switch_factor(&field, &[0.5], &[0.5 + r], &[0.5 + r / 2.0], tau, 0, &f).unwrap();
        assert!(b.holds(), "{b:?}");
        assert!(b.measured != 1.0);
        let same = base_switch_factor(&field, &[0.5], &[0.5], &[0.5], tau, 0, &f).unwrap();
        assert_eq!(same.measured, 1.0);
    }

    #[test]
    fn regime_of_identity_kernel() {
        let field = holder_field();
        let r = field.c1_regime(&[0.2], 0.1, 1e-3).unwrap();
        assert!(r.holds());
        assert_eq!(r.derivative_norm, Some(0.0));
    }

    #[test]
    fn domination_factor_identity_shift() {
        let k = iso_kernel(&[1.0], 0.2, 0.9);
        assert_eq!(domination_factor(&k, 0, 0.2, 0.0).unwrap(), 1.0);
        let small = domination_factor(&k, 0, 0.2, 0.1).unwrap();
        let big = domination_factor(&k, 0, 0.2, 0.2).unwrap();
        assert!(1.0 < small && small < big);
    }

    #[test]
    fn flowed_product_linear_lw_mass() {
        let d = linear_catalog("loomis-whitney-2d").unwrap();
        let nd = NonlinearDatum::from_linear("loomis-whitney-2d", &d, BoxDomain::cube(2, 1.0)).unwrap();
        let field = KernelField::extremiser(nd, LemmaParams::default(), SearchConfig::default()).unwrap();
        let inputs = vec![GaussianMixture::standard(1), GaussianMixture::standard(1)];
        let fp = FlowedProduct::new(&field, &inputs, 0.1, Truncation::None, 0.05).unwrap();
        let r = fp
            .integrate(&BoxDomain::cube(2, 10.0), &QuadratureConfig::default())
            .unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-10);
    }
}
