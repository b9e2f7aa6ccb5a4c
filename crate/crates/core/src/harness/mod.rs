//! End-to-end monotonicity experiments and the lemma sweeps, each reduced
//! to rows `(label, lhs, rhs, ratio, bound)` with `pass = ratio <= bound`.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use thiserror::Error;

mod oracles;

pub use oracles::{
    convolution_report, diagonal_grid_oracle, extremiser_report, oracle_agreement_report, random_input, y_delta_report,
};

use crate::datum::{BoxDomain, DatumError, LinearDatum, Monomial, NonlinearDatum};
use crate::extremiser::{stationarity_residual, ExtremiserError};
use crate::gaussian::{bl_g, GaussianError, GaussianInput};
use crate::heat_flow::{
    apply_flow, base_switch_factor, domination_factor, isotropic_flow, local_constancy_ratio,
    pointwise_convergence_curve, switching_factor, truncation_mass_ratio, FlowOperator, FlowedProduct, HeatFlowError,
    KernelField, Truncation,
};
use crate::quadrature::{
    bl_functional_numeric, integrate_product_ball, integrate_product_nonlinear, kernel_covariance, GaussianMixture,
    MixtureTerm, QuadResult, QuadratureConfig, QuadratureError, ScalarField,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    HeatFlow(#[from] HeatFlowError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Extremiser(#[from] ExtremiserError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Datum(#[from] DatumError),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Relative slack added to quadrature-based comparisons.
pub const QUAD_TOL_FLOOR: f64 = 1e-9;
/// Residual an extremiser must reach before it is used as a flow kernel.
pub const EXTREMISER_RESIDUAL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub label: String,
    pub tau: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub bound: f64,
    /// Refinement error estimate carried by `ratio`.
    pub error: f64,
    pub pass: bool,
}

impl Measurement {
    pub fn new(label: impl Into<String>, tau: Option<f64>, lhs: f64, rhs: f64, bound: f64, error: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        Self {
            label: label.into(),
            tau,
            lhs,
            rhs,
            ratio,
            bound,
            error,
            pass: ratio <= bound,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub datum: String,
    pub parameters: BTreeMap<String, Value>,
    pub measurements: Vec<Measurement>,
    /// Pass conditions that are not single rows.
    pub checks: BTreeMap<String, bool>,
    pub summary: BTreeMap<String, Value>,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn new(name: impl Into<String>, datum: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            datum: datum.into(),
            parameters: BTreeMap::new(),
            measurements: Vec::new(),
            checks: BTreeMap::new(),
            summary: BTreeMap::new(),
            pass: false,
        }
    }

    pub fn param(mut self, key: &str, v: Value) -> Self {
        self.parameters.insert(key.to_string(), v);
        self
    }

    pub fn push(&mut self, m: Measurement) {
        self.measurements.push(m);
    }

    pub fn check(&mut self, key: &str, ok: bool) {
        self.checks.insert(key.to_string(), ok);
    }

    pub fn note(&mut self, key: &str, v: Value) {
        self.summary.insert(key.to_string(), v);
    }

    pub fn finish(mut self) -> Self {
        self.pass = self.measurements.iter().all(|m| m.pass) && self.checks.values().all(|&c| c);
        self
    }
}

/// Largest `beta <= 1` with `ratio <= 1 + tau^beta` at every point, `None`
/// when some excess is at least one.
pub fn fit_beta(points: &[(f64, f64)]) -> Option<f64> {
    let mut beta: f64 = 1.0;
    for &(tau, ratio) in points {
        let excess = ratio - 1.0;
        if excess <= 0.0 {
            continue;
        }
        if excess >= 1.0 || tau >= 1.0 {
            return None;
        }
        beta = beta.min(excess.ln() / tau.ln());
    }
    Some(beta)
}

/// Largest `tau` such that every row at or below it passes.
fn empirical_threshold(rows: &[Measurement]) -> Option<f64> {
    let mut sorted: Vec<&Measurement> = rows.iter().filter(|m| m.tau.is_some()).collect();
    sorted.sort_by(|a, b| a.tau.partial_cmp(&b.tau).expect("finite tau"));
    let mut best = None;
    for m in sorted {
        if !m.pass {
            break;
        }
        best = m.tau;
    }
    best
}

fn rel_err(q: &QuadResult) -> f64 {
    if q.value == 0.0 {
        0.0
    } else {
        q.error_estimate / q.value.abs()
    }
}

/// `weight * N(c, S)` terms drawn from a seeded stream.
pub fn seeded_mixture(seed: u64, dim: usize, terms: usize) -> GaussianMixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = (0..terms)
        .map(|_| {
            let w: f64 = rng.random_range(0.3..1.0);
            let c = DVector::from_fn(dim, |_, _| 0.7 * rng.sample::<f64, _>(StandardNormal));
            let b = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let cov = DMatrix::identity(dim, dim) * 0.3 + (&b * b.transpose()) * (0.5 / dim as f64);
            MixtureTerm::new(w, c, cov).expect("SPD by construction")
        })
        .collect();
    GaussianMixture::new(dim, ts).expect("nonempty")
}

fn convolve_all(
    inputs: &[GaussianMixture],
    kernel: &GaussianInput,
    tau: f64,
) -> Result<Vec<GaussianMixture>, HarnessError> {
    inputs
        .iter()
        .zip(kernel.blocks())
        .map(|(f, a)| Ok(f.convolve_covariance(&kernel_covariance(a, tau))?))
        .collect()
}

fn check_extremiser(datum: &LinearDatum, extremiser: &GaussianInput) -> Result<(), HarnessError> {
    let r = stationarity_residual(datum, extremiser)?;
    if r >= EXTREMISER_RESIDUAL {
        return Err(HarnessError::PreconditionViolated(format!("extremiser residual {r:e}")));
    }
    Ok(())
}

/// `BL(f) <= BL(f * g_tau)` with `g_tau` the extremiser at scale `tau`.
pub fn ball_inequality_check(
    name: &str,
    datum: &LinearDatum,
    inputs: &[GaussianMixture],
    extremiser: &GaussianInput,
    taus: &[f64],
    tol: f64,
    cfg: &QuadratureConfig,
) -> Result<ExperimentReport, HarnessError> {
    check_extremiser(datum, extremiser)?;
    let base = bl_functional_numeric(datum, inputs, cfg)?;
    let mut rep = ExperimentReport::new("ball-inequality", name)
        .param("taus", json!(taus))
        .param("tol", json!(tol));
    for &tau in taus {
        let flowed = convolve_all(inputs, extremiser, tau)?;
        let v = bl_functional_numeric(datum, &flowed, cfg)?;
        let err = base.error_estimate / base.value + v.error_estimate / v.value;
        rep.push(Measurement::new(
            format!("tau={tau}"),
            Some(tau),
            base.value,
            v.value,
            1.0 + tol.max(err),
            err,
        ));
    }
    rep.note("bl_f", json!(base.value));
    Ok(rep.finish())
}

/// Curve `tau -> BL(f * g_tau)` over an increasing grid, with the terminal
/// value compared to `BL_g` at the extremiser.
pub fn monotone_flow_curve(
    name: &str,
    datum: &LinearDatum,
    inputs: &[GaussianMixture],
    extremiser: &GaussianInput,
    taus: &[f64],
    terminal_tol: f64,
    cfg: &QuadratureConfig,
) -> Result<ExperimentReport, HarnessError> {
    check_extremiser(datum, extremiser)?;
    if taus.is_empty() || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::InvalidParameter(
            "tau grid must be nonempty and increasing".into(),
        ));
    }
    let mut rep = ExperimentReport::new("monotone-flow", name).param("taus", json!(taus));
    let mut prev = bl_functional_numeric(datum, inputs, cfg)?;
    let mut prev_label = "initial".to_string();
    let mut curve = vec![prev.value];
    for &tau in taus {
        let v = bl_functional_numeric(datum, &convolve_all(inputs, extremiser, tau)?, cfg)?;
        let err = rel_err(&prev.numerator) + rel_err(&v.numerator);
        rep.push(Measurement::new(
            format!("{prev_label}->tau={tau}"),
            Some(tau),
            prev.value,
            v.value,
            1.0 + err.max(QUAD_TOL_FLOOR),
            err,
        ));
        curve.push(v.value);
        prev_label = format!("tau={tau}");
        prev = v;
    }
    let target = bl_g(datum, extremiser)?.value;
    rep.push(Measurement::new(
        "terminal-deviation",
        taus.last().copied(),
        (prev.value - target).abs(),
        target,
        terminal_tol,
        rel_err(&prev.numerator),
    ));
    rep.note("curve", json!(curve));
    rep.note("bl_g_extremiser", json!(target));
    Ok(rep.finish())
}

/// `int_{U + s^gamma} prod_j (H_{x,s,j} f_j)(B_j(x))^{p_j} dx`.
pub fn flowed_integral(
    field: &KernelField,
    inputs: &[GaussianMixture],
    domain: &BoxDomain,
    s: f64,
    truncation: Truncation,
    cell: f64,
    cfg: &QuadratureConfig,
) -> Result<QuadResult, HarnessError> {
    let fp = FlowedProduct::new(field, inputs, s, truncation, cell)?;
    let grown = domain.inflate(s.powf(field.params().gamma));
    Ok(fp.integrate(&grown, cfg)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeStepEstimate {
    pub tau: f64,
    /// Per-input `I_tau / I_{sqrt2 tau}`.
    pub ratios: Vec<f64>,
    pub errors: Vec<f64>,
    /// Max of `ratios`: a lower estimate of `C(tau, sqrt2 tau)`.
    pub constant: f64,
}

/// Lower estimate of the one-step constant over a family of input tuples.
pub fn time_step_constant(
    field: &KernelField,
    family: &[Vec<GaussianMixture>],
    domain: &BoxDomain,
    tau: f64,
    truncation: Truncation,
    cell: f64,
    cfg: &QuadratureConfig,
) -> Result<TimeStepEstimate, HarnessError> {
    constant_between(field, family, domain, tau, tau * 2f64.sqrt(), truncation, cell, cfg)
}

/// Lower estimate of `C(s, t)`.
#[allow(clippy::too_many_arguments)]
pub fn constant_between(
    field: &KernelField,
    family: &[Vec<GaussianMixture>],
    domain: &BoxDomain,
    s: f64,
    t: f64,
    truncation: Truncation,
    cell: f64,
    cfg: &QuadratureConfig,
) -> Result<TimeStepEstimate, HarnessError> {
    let mut ratios = Vec::with_capacity(family.len());
    let mut errors = Vec::with_capacity(family.len());
    for inputs in family {
        let a = flowed_integral(field, inputs, domain, s, truncation, cell, cfg)?;
        let b = flowed_integral(field, inputs, domain, t, truncation, cell, cfg)?;
        ratios.push(a.value / b.value);
        errors.push(rel_err(&a) + rel_err(&b));
    }
    let constant = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TimeStepEstimate {
        tau: s,
        ratios,
        errors,
        constant,
    })
}

/// One-step constants over a `tau` sweep compared with `1 + tau^beta_trial`,
/// plus the fitted `beta`.
#[allow(clippy::too_many_arguments)]
pub fn time_step_report(
    field: &KernelField,
    family: &[Vec<GaussianMixture>],
    domain: &BoxDomain,
    taus: &[f64],
    beta_trial: f64,
    truncation: Truncation,
    cell: f64,
    cfg: &QuadratureConfig,
) -> Result<ExperimentReport, HarnessError> {
    if family.len() < 20 {
        return Err(HarnessError::PreconditionViolated(format!(
            "test family has {} members, need 20",
            family.len()
        )));
    }
    let mut rep = ExperimentReport::new("time-step", field.datum().name())
        .param("taus", json!(taus))
        .param("beta_trial", json!(beta_trial))
        .param("family_size", json!(family.len()));
    let mut pts = Vec::new();
    for &tau in taus {
        let est = time_step_constant(field, family, domain, tau, truncation, cell, cfg)?;
        let err = est.errors.iter().copied().fold(0.0, f64::max);
        rep.push(Measurement::new(
            format!("C(tau,sqrt2 tau) tau={tau}"),
            Some(tau),
            est.constant,
            1.0,
            (1.0 + tau.powf(beta_trial)) * (1.0 + err.max(QUAD_TOL_FLOOR)),
            err,
        ));
        pts.push((tau, est.constant));
    }
    let beta = fit_beta(&pts);
    rep.note("beta_fit", json!(beta));
    rep.check("beta_positive", beta.is_some_and(|b| b > 0.0));
    Ok(rep.finish())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChainComposition {
    pub product: f64,
    pub bound: f64,
}

impl ChainComposition {
    pub fn holds(&self) -> bool {
        self.product <= self.bound
    }
}

/// `prod_{k=1}^K (1 + tau_k^beta)` with `tau_k = 2^{-k/2} tau`, against
/// `exp(tau^beta / (2^{beta/2} - 1))`.
pub fn chain_composition(tau: f64, k: usize, beta: f64) -> Result<ChainComposition, HarnessError> {
    if !(beta > 0.0 && beta <= 1.0) || k == 0 || !(tau > 0.0) {
        return Err(HarnessError::InvalidParameter(format!("tau {tau}, K {k}, beta {beta}")));
    }
    let log: f64 = (1..=k)
        .map(|i| (tau * 0.5f64.powf(i as f64 / 2.0)).powf(beta).ln_1p())
        .sum();
    Ok(ChainComposition {
        product: log.exp(),
        bound: (tau.powf(beta) / (2f64.powf(beta / 2.0) - 1.0)).exp(),
    })
}

/// Chain products against their closed-form bound over `taus x ks`.
pub fn chain_report(taus: &[f64], ks: &[usize], beta: f64) -> Result<ExperimentReport, HarnessError> {
    let mut rep = ExperimentReport::new("chain-composition", "scalar")
        .param("taus", json!(taus))
        .param("ks", json!(ks))
        .param("beta", json!(beta));
    for &tau in taus {
        for &k in ks {
            let c = chain_composition(tau, k, beta)?;
            rep.push(Measurement::new(
                format!("K={k}"),
                Some(tau),
                c.product,
                c.bound,
                1.0,
                0.0,
            ));
        }
    }
    Ok(rep.finish())
}

/// `C(r, t) <= C(r, s) C(s, t)` on estimated constants for `r < s < t`.
#[allow(clippy::too_many_arguments)]
pub fn submultiplicativity_report(
    field: &KernelField,
    family: &[Vec<GaussianMixture>],
    domain: &BoxDomain,
    triples: &[(f64, f64, f64)],
    truncation: Truncation,
    cell: f64,
    cfg: &QuadratureConfig,
) -> Result<ExperimentReport, HarnessError> {
    let mut rep = ExperimentReport::new("submultiplicativity", field.datum().name())
        .param("triples", json!(triples))
        .param("family_size", json!(family.len()));
    for &(r, s, t) in triples {
        if !(r < s && s < t) {
            return Err(HarnessError::InvalidParameter(format!(
                "need r < s < t, got {r}, {s}, {t}"
            )));
        }
        let crt = constant_between(field, family, domain, r, t, truncation, cell, cfg)?;
        let crs = constant_between(field, family, domain, r, s, truncation, cell, cfg)?;
        let cst = constant_between(field, family, domain, s, t, truncation, cell, cfg)?;
        let err = [&crt, &crs, &cst]
            .iter()
            .flat_map(|e| e.errors.iter().copied())
            .fold(0.0, f64::max);
        rep.push(Measurement::new(
            format!("r={r} s={s} t={t}"),
            Some(r),
            crt.constant,
            crs.constant * cst.constant,
            1.0 + 3.0 * err.max(QUAD_TOL_FLOOR),
            err,
        ));
    }
    Ok(rep.finish())
}

/// `int_U prod_j (f_j o B_j)^{p_j} <= (1 + tau^beta) int_{U + tau^gamma}
/// prod_j (H_{x,tau,j} f_j o B_j)^{p_j}` over a `tau` sweep.
#[allow(clippy::too_many_arguments)]
pub fn nonlinear_nball_check(
    field: &KernelField,
    inputs: &[GaussianMixture],
    domain: &BoxDomain,
    taus: &[f64],
    beta_trial: f64,
    truncation: Truncation,
    cell: f64,
    cfg: &QuadratureConfig,
) -> Result<ExperimentReport, HarnessError> {
    let d = field.datum();
    let fields: Vec<&dyn ScalarField> = inputs.iter().map(|f| f as &dyn ScalarField).collect();
    let lhs = integrate_product_nonlinear(d, &fields, domain, cfg)?;
    let mut rep = ExperimentReport::new("nonlinear-ball", d.name())
        .param("taus", json!(taus))
        .param("beta_trial", json!(beta_trial))
        .param("domain", json!({"lo": domain.lo, "hi": domain.hi}))
        .param("truncation", json!(truncation));
    let mut pts = Vec::new();
    for &tau in taus {
        let rhs = flowed_integral(field, inputs, domain, tau, truncation, cell, cfg)?;
        let err = rel_err(&lhs) + rel_err(&rhs);
        let m = Measurement::new(
            format!("tau={tau}"),
            Some(tau),
            lhs.value,
            rhs.value,
            (1.0 + tau.powf(beta_trial)) * (1.0 + err.max(QUAD_TOL_FLOOR)),
            err,
        );
        pts.push((tau, m.ratio));
        rep.push(m);
    }
    let beta = fit_beta(&pts);
    rep.note("beta_fit", json!(beta));
    rep.note("empirical_threshold", json!(empirical_threshold(&rep.measurements)));
    rep.check("beta_positive", beta.is_some_and(|b| b > 0.0));
    Ok(rep.finish())
}

/// Inputs `N(B_j(x0), (spread tau)^2 I)` concentrated at `B_j(x0)`.
pub fn concentrated_inputs(datum: &NonlinearDatum, x0: &[f64], tau: f64, spread: f64) -> Vec<GaussianMixture> {
    (0..datum.m())
        .map(|j| {
            let c = datum.eval(j, x0);
            let k = c.len();
            let s = spread * tau;
            GaussianMixture::new(
                k,
                vec![MixtureTerm::new(1.0, DVector::from_vec(c), DMatrix::identity(k, k) * (s * s)).expect("SPD")],
            )
            .expect("nonempty")
        })
        .collect()
}

/// `int_{|x - x0| <= tau} prod_j (f_j o B_j)^{p_j} / (BL(dB(x0)) prod_j
/// (int f_j)^{p_j})` for inputs concentrated at scale `spread * tau`.
pub fn local_bl_check(
    field: &KernelField,
    x0: &[f64],
    taus: &[f64],
    spread: f64,
    beta_trial: f64,
    cfg: &QuadratureConfig,
) -> Result<ExperimentReport, HarnessError> {
    if taus.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HarnessError::InvalidParameter("tau sweep must decrease".into()));
    }
    let d = field.datum();
    let bl = field.bl_est(x0)?;
    let mut rep = ExperimentReport::new("local-bl", d.name())
        .param("x0", json!(x0))
        .param("taus", json!(taus))
        .param("spread", json!(spread))
        .param("beta_trial", json!(beta_trial));
    let mut pts = Vec::new();
    let mut excess = Vec::new();
    for &tau in taus {
        let inputs = concentrated_inputs(d, x0, tau, spread);
        let fields: Vec<&dyn ScalarField> = inputs.iter().map(|f| f as &dyn ScalarField).collect();
        let q = integrate_product_ball(d, &fields, x0, tau, cfg)?;
        let mass: f64 = (0..d.m()).map(|j| inputs[j].mass().powf(d.p(j))).product();
        let err = rel_err(&q);
        let m = Measurement::new(
            format!("tau={tau}"),
            Some(tau),
            q.value,
            bl * mass,
            (1.0 + tau.powf(beta_trial)) * (1.0 + err.max(QUAD_TOL_FLOOR)),
            err,
        );
        pts.push((tau, m.ratio));
        excess.push(((m.ratio - 1.0).max(0.0), err));
        rep.push(m);
    }
    let beta = fit_beta(&pts);
    let nonincreasing = excess
        .windows(2)
        .all(|w| w[1].0 <= w[0].0 + 2.0 * (w[0].1 + w[1].1).max(QUAD_TOL_FLOOR));
    rep.note("bl_est", json!(bl));
    rep.note("beta_fit", json!(beta));
    rep.note("excess", json!(excess.iter().map(|e| e.0).collect::<Vec<_>>()));
    rep.check("beta_positive", beta.is_some_and(|b| b > 0.0));
    rep.check("excess_nonincreasing", nonincreasing);
    Ok(rep.finish())
}

/// `B_j + shift` in every output coordinate.
pub fn shifted_datum(datum: &NonlinearDatum, shift: f64) -> Result<NonlinearDatum, HarnessError> {
    let n = datum.n();
    let maps = datum
        .maps()
        .iter()
        .map(|b| {
            let mut b = b.clone();
            for comp in &mut b.components {
                comp.push(Monomial {
                    coeff: shift,
                    powers: vec![0; n],
                });
            }
            b
        })
        .collect();
    Ok(NonlinearDatum::new(
        format!("{}+{shift}", datum.name()),
        n,
        maps,
        datum.exponents().to_vec(),
        datum.domain().clone(),
        None,
    )?)
}

/// Pointwise `H_{x,tau,j} f_j(B_j(x)) <= K H_tau f_j(B~_j(x))` on `points`.
pub fn perturbation_domination_check(
    field: &KernelField,
    tilde: &NonlinearDatum,
    tau: f64,
    inputs: &[GaussianMixture],
    points: &[Vec<f64>],
) -> Result<ExperimentReport, HarnessError> {
    let d = field.datum();
    if tilde.m() != d.m() || tilde.n() != d.n() || tilde.target_dims() != d.target_dims() {
        return Err(HarnessError::InvalidParameter(
            "perturbed datum has a different shape".into(),
        ));
    }
    let sample: Vec<Vec<f64>> = d.domain().grid(17).into_iter().chain(points.iter().cloned()).collect();
    let big_r: Vec<f64> = (0..d.m())
        .map(|j| {
            sample
                .iter()
                .map(|x| {
                    let (a, b) = (d.eval(j, x), tilde.eval(j, x));
                    a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let eps = field.params().epsilon;
    let mut rep = ExperimentReport::new("perturbation-domination", d.name())
        .param("tilde", json!(tilde.name()))
        .param("tau", json!(tau))
        .param("points", json!(points.len()));
    let mut factors = vec![0.0f64; d.m()];
    for (i, x) in points.iter().enumerate() {
        for j in 0..d.m() {
            let op = field.flow(x, tau, j, Truncation::BASE)?;
            let k = domination_factor(op.kernel(), j, op.radius(), big_r[j])?;
            factors[j] = factors[j].max(k);
            let lhs = apply_flow(&op, &inputs[j], &d.eval(j, x))?;
            let rhs = k * isotropic_flow(&inputs[j], tau, eps, &tilde.eval(j, x))?;
            rep.push(Measurement::new(
                format!("x{i} j={}", j + 1),
                Some(tau),
                lhs,
                rhs,
                1.0,
                0.0,
            ));
        }
    }
    rep.note("sup_distance", json!(big_r));
    rep.note("factor", json!(factors));
    Ok(rep.finish())
}

/// Domination over a sweep of constant shifts, with `log K` increasing in `R`.
pub fn domination_shift_sweep(
    field: &KernelField,
    shifts: &[f64],
    tau: f64,
    inputs: &[GaussianMixture],
    points: &[Vec<f64>],
) -> Result<ExperimentReport, HarnessError> {
    let d = field.datum();
    let mut rep = ExperimentReport::new("perturbation-sweep", d.name())
        .param("shifts", json!(shifts))
        .param("tau", json!(tau));
    let mut log_k = Vec::new();
    for &s in shifts {
        let tilde = shifted_datum(d, s)?;
        let r = perturbation_domination_check(field, &tilde, tau, inputs, points)?;
        let worst = r
            .measurements
            .iter()
            .max_by(|a, b| a.ratio.partial_cmp(&b.ratio).expect("finite"))
            .expect("nonempty")
            .clone();
        let k: Vec<f64> = serde_json::from_value(r.summary["factor"].clone()).expect("factor list");
        log_k.push(k.iter().map(|v| v.ln()).fold(f64::NEG_INFINITY, f64::max));
        rep.push(Measurement {
            label: format!("shift={s}"),
            ..worst
        });
    }
    rep.check("log_factor_increasing", log_k.windows(2).all(|w| w[1] > w[0]));
    rep.note("log_factor", json!(log_k));
    Ok(rep.finish())
}

/// Truncation ratios (stated as `bound <= ratio`) at `x` over a sweep.
pub fn truncation_sweep(field: &KernelField, x: &[f64], taus: &[f64]) -> Result<ExperimentReport, HarnessError> {
    let mut rep = ExperimentReport::new("lemma-truncation", field.datum().name()).param("taus", json!(taus));
    for &tau in taus {
        let k = field.kernel(x, tau)?;
        for kappa in [1.0, 1.1] {
            for c in truncation_mass_ratio(&k, kappa) {
                rep.push(Measurement::new(
                    format!("kappa={kappa} j={}", c.block + 1),
                    Some(tau),
                    c.bound,
                    c.ratio,
                    1.0,
                    0.0,
                ));
            }
        }
    }
    Ok(rep.finish())
}

/// Local constancy of `G_j` between `v` and `v + tau^2 e` near the ball edge.
pub fn local_constancy_sweep(field: &KernelField, x: &[f64], taus: &[f64]) -> Result<ExperimentReport, HarnessError> {
    let mut rep = ExperimentReport::new("lemma-local-constancy", field.datum().name()).param("taus", json!(taus));
    for &tau in taus {
        let k = field.kernel(x, tau)?;
        for j in 0..k.len() {
            let dim = k.blocks().block(j).nrows();
            let r = k.truncation_radius(j, 1.0);
            let mut w = vec![0.0; dim];
            w[0] = r;
            let mut v = w.clone();
            v[0] = r - tau * tau;
            for (tag, a, b) in [("inward", &w, &v), ("outward", &v, &w)] {
                let c = local_constancy_ratio(&k, j, a, b)?;
                rep.push(Measurement::new(
                    format!("{tag} j={}", j + 1),
                    Some(tau),
                    c.measured,
                    c.bound,
                    1.0,
                    0.0,
                ));
            }
        }
    }
    Ok(rep.finish())
}

/// Switching ratios from `x` to points at distance `tau^gamma` along each
/// axis and the diagonal.
pub fn switching_sweep(field: &KernelField, x: &[f64], taus: &[f64]) -> Result<ExperimentReport, HarnessError> {
    let n = x.len();
    let mut rep = ExperimentReport::new("lemma-switching", field.datum().name()).param("taus", json!(taus));
    for &tau in taus {
        let r = tau.powf(field.params().gamma);
        let mut dirs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect();
        dirs.push(vec![1.0 / (n as f64).sqrt(); n]);
        for (i, e) in dirs.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let y: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + sign * r * b).collect();
                let b = switching_factor(field, x, &y, tau)?;
                rep.push(Measurement::new(
                    format!("dir{i}{}", if sign > 0.0 { "+" } else { "-" }),
                    Some(tau),
                    b.measured,
                    b.bound,
                    1.0,
                    0.0,
                ));
            }
        }
    }
    Ok(rep.finish())
}

/// `H_y f(z) / H_x f(z)` with `y = x + tau^gamma e_1` and `z` half-way to
/// the edge of the admissible ball.
pub fn base_switch_sweep(
    field: &KernelField,
    x: &[f64],
    inputs: &[GaussianMixture],
    taus: &[f64],
) -> Result<ExperimentReport, HarnessError> {
    let d = field.datum();
    let mut rep = ExperimentReport::new("lemma-base-switch", d.name()).param("taus", json!(taus));
    for &tau in taus {
        let r = tau.powf(field.params().gamma);
        let mut y = x.to_vec();
        y[0] += r;
        for j in 0..d.m() {
            let mut z = d.eval(j, x);
            z[0] += 0.5 * r * field.ball_scale(j);
            let b = base_switch_factor(field, x, &y, &z, tau, j, &inputs[j])?;
            rep.push(Measurement::new(
                format!("j={}", j + 1),
                Some(tau),
                b.measured,
                b.bound,
                1.0,
                0.0,
            ));
        }
    }
    Ok(rep.finish())
}

/// `|H f(B_j(x)) - f(B_j(x))|` against its analytic bound, plus the fitted
/// convergence order.
pub fn pointwise_convergence_sweep(
    field: &KernelField,
    x: &[f64],
    inputs: &[GaussianMixture],
    taus: &[f64],
) -> Result<ExperimentReport, HarnessError> {
    let d = field.datum();
    let mut rep = ExperimentReport::new("lemma-pointwise", d.name()).param("taus", json!(taus));
    let mut orders = Vec::new();
    for j in 0..d.m() {
        let ops = taus
            .iter()
            .map(|&t| field.flow(x, t, j, Truncation::BASE))
            .collect::<Result<Vec<FlowOperator>, _>>()?;
        let curve = pointwise_convergence_curve(&ops, &inputs[j], &d.eval(j, x))?;
        for p in &curve.points {
            rep.push(Measurement::new(
                format!("j={}", j + 1),
                Some(p.tau),
                p.error,
                p.bound,
                1.0,
                0.0,
            ));
        }
        rep.check(&format!("decreasing j={}", j + 1), curve.decreasing);
        orders.push(curve.order);
    }
    rep.note("orders", json!(orders));
    Ok(rep.finish())
}

/// Kernel near-extremiser checks `deficit / BL_est <= tau^alpha c` over a
/// sweep, and the norm regime as informational rows (bound `inf`) with the
/// empirical `tau` below which it holds.
pub fn kernel_regime_sweep(
    field: &KernelField,
    x: &[f64],
    taus: &[f64],
    fd_step: f64,
) -> Result<ExperimentReport, HarnessError> {
    let mut rep = ExperimentReport::new("kernel-regime", field.datum().name())
        .param("x", json!(x))
        .param("taus", json!(taus));
    let alpha = field.params().alpha;
    let mut regime = Vec::new();
    for &tau in taus {
        let c = field.near_extremiser_check(x, tau)?;
        rep.push(Measurement::new(
            "near-extremiser",
            Some(tau),
            c.deficit,
            1.0,
            tau.powf(alpha) * c.series_constant,
            0.0,
        ));
        let r = field.c1_regime(x, tau, fd_step)?;
        let worst = [
            r.max_norm,
            r.max_inverse_norm,
            r.max_det,
            r.max_inverse_det,
            r.derivative_norm.unwrap_or(0.0),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        rep.push(Measurement::new(
            "norm-regime",
            Some(tau),
            worst,
            r.bound,
            f64::INFINITY,
            0.0,
        ));
        regime.push(Measurement::new("", Some(tau), worst, r.bound, 1.0, 0.0));
    }
    rep.note("norm_regime_threshold", json!(empirical_threshold(&regime)));
    Ok(rep.finish())
}

/// Hölder datum `(1), (1)` with exponents `(1/2, 1/2)` and extremiser
/// `c`: `BL_g(a)` and `BL_g` of the inputs flowed to scale `tau`, from
/// `BL_g(a) = (a_1 a_2)^{1/4} ((a_1 + a_2)/2)^{-1/2}`.
pub fn holder_closed_form(a: &[f64], extremiser: f64, tau: f64) -> (f64, f64) {
    let bl = |x: &[f64]| (x[0] * x[1]).powf(0.25) / ((x[0] + x[1]) / 2.0).sqrt();
    let s = tau * tau / extremiser;
    let flowed: Vec<f64> = a.iter().map(|&v| v / (1.0 + v * s)).collect();
    (bl(a), bl(&flowed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::{linear_catalog, nonlinear_catalog};
    use crate::extremiser::SearchConfig;
    use crate::heat_flow::LemmaParams;
    use approx::assert_relative_eq;

    fn forms(a: &[f64]) -> Vec<GaussianMixture> {
        a.iter()
            .map(|&v| GaussianMixture::centred_form(&DMatrix::from_element(1, 1, v)).unwrap())
            .collect()
    }

    #[test]
    fn holder_closed_form_values() {
        let (l, r) = holder_closed_form(&[4.0, 1.0], 1.0, 1.0);
        assert_relative_eq!(l, 2f64.sqrt() / 2.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(r, 0.4f64.powf(0.25) / 0.65f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn holder_ball_inequality() {
        let d = linear_catalog("holder-1d").unwrap();
        let ext = GaussianInput::scalars(&[1.0, 1.0]).unwrap();
        let rep = ball_inequality_check(
            "holder-1d",
            &d,
            &forms(&[4.0, 1.0]),
            &ext,
            &[1.0],
            1e-6,
            &QuadratureConfig::default(),
        )
        .unwrap();
        assert!(rep.pass);
        let m = &rep.measurements[0];
        let (l, r) = holder_closed_form(&[4.0, 1.0], 1.0, 1.0);
        assert_relative_eq!(m.lhs, l, max_relative = 1e-10);
        assert_relative_eq!(m.rhs, r, max_relative = 1e-10);
    }

    #[test]
    fn extremiser_inputs_give_equality() {
        let d = linear_catalog("holder-1d").unwrap();
        let ext = GaussianInput::scalars(&[1.0, 1.0]).unwrap();
        let rep = ball_inequality_check(
            "holder-1d",
            &d,
            &forms(&[1.0, 1.0]),
            &ext,
            &[0.5, 2.0],
            1e-6,
            &QuadratureConfig::default(),
        )
        .unwrap();
        assert!(rep.pass);
        for m in &rep.measurements {
            assert_relative_eq!(m.ratio, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn non_stationary_kernel_refused() {
        let d = linear_catalog("holder-1d").unwrap();
        let bad = GaussianInput::scalars(&[1.0, 3.0]).unwrap();
        let e = ball_inequality_check(
            "h",
            &d,
            &forms(&[1.0, 1.0]),
            &bad,
            &[1.0],
            1e-6,
            &QuadratureConfig::default(),
        );
        assert!(matches!(e, Err(HarnessError::PreconditionViolated(_))));
    }

    #[test]
    fn chain_examples() {
        let one = chain_composition(0.1, 1, 0.5).unwrap();
        assert_relative_eq!(one.product, 1.0 + (0.1f64 / 2f64.sqrt()).sqrt(), max_relative = 1e-15);
        assert!(one.product < 1.0 + 0.1f64.sqrt());
        assert!(one.holds());
        let c = chain_composition(0.1, 50, 0.5).unwrap();
        assert!(c.holds());
        assert_relative_eq!(
            c.bound,
            (0.1f64.sqrt() / (2f64.powf(0.25) - 1.0)).exp(),
            max_relative = 1e-14
        );
        let tiny = chain_composition(1e-12, 50, 0.5).unwrap();
        assert!(tiny.product - 1.0 < 1e-5);
    }

    #[test]
    fn beta_fit_cases() {
        assert_eq!(fit_beta(&[(0.1, 0.9), (0.05, 1.0)]), Some(1.0));
        let b = fit_beta(&[(0.1, 1.5)]).unwrap();
        assert_relative_eq!(0.1f64.powf(b), 0.5, max_relative = 1e-12);
        assert_eq!(fit_beta(&[(0.1, 1.01)]), Some(1.0));
        assert_eq!(fit_beta(&[(0.1, 2.5)]), None);
    }

    #[test]
    fn far_inputs_give_zero_lhs() {
        let nd = nonlinear_catalog("perturbed-lw-eps", 0.1).unwrap();
        let field = KernelField::extremiser(nd, LemmaParams::default(), SearchConfig::default()).unwrap();
        let far = GaussianMixture::new(
            1,
            vec![MixtureTerm::new(1.0, DVector::from_element(1, 100.0), DMatrix::identity(1, 1)).unwrap()],
        )
        .unwrap();
        let inputs = vec![far.clone(), far];
        let rep = nonlinear_nball_check(
            &field,
            &inputs,
            &BoxDomain::cube(2, 1.0),
            &[0.2],
            0.5,
            Truncation::BASE,
            0.05,
            &QuadratureConfig::default(),
        )
        .unwrap();
        assert!(rep.measurements[0].lhs < 1e-300);
        assert!(rep.pass);
    }

    #[test]
    fn shift_changes_maps_by_constant() {
        let nd = nonlinear_catalog("perturbed-lw-eps", 0.1).unwrap();
        let t = shifted_datum(&nd, 0.1).unwrap();
        let x = [0.3, -0.2];
        for j in 0..2 {
            assert_relative_eq!(t.eval(j, &x)[0], nd.eval(j, &x)[0] + 0.1, max_relative = 1e-15);
        }
    }
}
