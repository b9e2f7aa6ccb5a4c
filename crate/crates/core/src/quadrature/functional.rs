use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::mixture::{GaussianMixture, ScalarField};
use super::rules::{ball_integrate, box_points, integrate_box};
use super::{Method, QuadResult, QuadratureConfig, QuadratureError};
use crate::datum::{BoxDomain, LinearDatum, NonlinearDatum};
use crate::linalg;
use crate::numerics::{pairwise_sum, Neumaier};

const MAX_TUPLES: usize = 10_000;
const MC_CHUNK: usize = 8192;
/// Relative floor added to refinement error estimates.
pub const QUAD_NOISE_FLOOR: f64 = 1e-14;

/// One product of mixture terms, itself a scaled gaussian on `R^n`.
struct TupleGaussian {
    center: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    max_precision_eig: f64,
    log_mass: f64,
}

fn active_maps(datum: &LinearDatum) -> Vec<usize> {
    (0..datum.m()).filter(|&j| datum.p(j) > 0.0).collect()
}

fn tuple_gaussians(datum: &LinearDatum, inputs: &[GaussianMixture]) -> Result<Vec<TupleGaussian>, QuadratureError> {
    let n = datum.n();
    let active = active_maps(datum);
    let sizes: Vec<usize> = active.iter().map(|&j| inputs[j].terms().len()).collect();
    let total = sizes
        .iter()
        .try_fold(1usize, |a, &s| a.checked_mul(s))
        .unwrap_or(usize::MAX);
    if total > MAX_TUPLES {
        return Err(QuadratureError::BudgetExceeded(total));
    }
    let two_pi_ln = (2.0 * std::f64::consts::PI).ln();
    let mut out = Vec::with_capacity(total);
    'tuples: for mut idx in 0..total {
        let mut p_mat = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut c0 = 0.0;
        for (a, &j) in active.iter().enumerate() {
            let t = &inputs[j].terms()[idx % sizes[a]];
            idx /= sizes[a];
            if t.weight == 0.0 {
                continue 'tuples;
            }
            let p = datum.p(j);
            let l = datum.map(j);
            let pl = t.precision() * l;
            p_mat += l.transpose() * &pl * p;
            let pm = t.precision() * &t.center;
            b += l.transpose() * &pm * p;
            c0 += p * (t.weight.ln() + t.log_norm() - 0.5 * t.center.dot(&pm));
        }
        let p_mat = linalg::symmetrize(&p_mat);
        let cov = linalg::spd_inverse(&p_mat).ok_or(QuadratureError::Divergent)?;
        let center = &cov * &b;
        let ld = linalg::spd_logdet(&p_mat).ok_or(QuadratureError::Divergent)?;
        let log_mass = c0 + 0.5 * b.dot(&center) + 0.5 * n as f64 * two_pi_ln - 0.5 * ld;
        let chol = cov.clone().cholesky().ok_or(QuadratureError::Divergent)?.l();
        out.push(TupleGaussian {
            center,
            max_precision_eig: linalg::max_eigenvalue(&p_mat),
            cov,
            chol,
            log_mass,
        });
    }
    if out.is_empty() {
        return Err(QuadratureError::InvalidMixture("all weights vanish".into()));
    }
    Ok(out)
}

struct LinearIntegrand<'a> {
    rows: Vec<(usize, f64, Vec<Vec<f64>>)>,
    inputs: &'a [GaussianMixture],
}

impl<'a> LinearIntegrand<'a> {
    fn new(datum: &LinearDatum, inputs: &'a [GaussianMixture]) -> Self {
        let rows = active_maps(datum)
            .into_iter()
            .map(|j| (j, datum.p(j), linalg::to_rows(datum.map(j))))
            .collect();
        Self { rows, inputs }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut log = 0.0;
        let mut y = [0.0; 8];
        for (j, p, l) in &self.rows {
            let k = l.len();
            for (r, row) in l.iter().enumerate() {
                y[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
            let v = self.inputs[*j].eval(&y[..k]);
            if v <= 0.0 {
                return 0.0;
            }
            log += p * v.ln();
        }
        log.exp()
    }
}

/// Numerator, closed-form denominator and their ratio.
#[derive(Debug, Clone)]
pub struct BlFunctionalValue {
    pub value: f64,
    pub error_estimate: f64,
    pub numerator: QuadResult,
    pub denominator: f64,
}

fn check_inputs(datum: &LinearDatum, inputs: &[GaussianMixture]) -> Result<(), QuadratureError> {
    if inputs.len() != datum.m() {
        return Err(QuadratureError::ShapeMismatch(format!(
            "{} inputs for {} maps",
            inputs.len(),
            datum.m()
        )));
    }
    for (j, (f, k)) in inputs.iter().zip(datum.target_dims()).enumerate() {
        if f.dim() != k {
            return Err(QuadratureError::ShapeMismatch(format!(
                "input {} has dim {}, map has {k}",
                j + 1,
                f.dim()
            )));
        }
    }
    Ok(())
}

/// `int prod_j f_j(L_j x)^{p_j} dx / prod_j (int f_j)^{p_j}`.
pub fn bl_functional_numeric(
    datum: &LinearDatum,
    inputs: &[GaussianMixture],
    cfg: &QuadratureConfig,
) -> Result<BlFunctionalValue, QuadratureError> {
    cfg.validate()?;
    check_inputs(datum, inputs)?;
    if !datum.check_scaling().holds {
        return Err(QuadratureError::ScalingViolated);
    }
    let tuples = tuple_gaussians(datum, inputs)?;
    let integrand = LinearIntegrand::new(datum, inputs);
    let numerator = match cfg.method {
        Method::TensorGrid => tensor_numerator(datum.n(), &tuples, &integrand, cfg)?,
        Method::MonteCarlo => monte_carlo_numerator(&tuples, &integrand, cfg),
    };
    let denominator: f64 = active_maps(datum)
        .iter()
        .map(|&j| inputs[j].mass().powf(datum.p(j)))
        .product();
    Ok(BlFunctionalValue {
        value: numerator.value / denominator,
        error_estimate: numerator.error_estimate / denominator,
        numerator,
        denominator,
    })
}

fn tensor_numerator(
    n: usize,
    tuples: &[TupleGaussian],
    integrand: &LinearIntegrand<'_>,
    cfg: &QuadratureConfig,
) -> Result<QuadResult, QuadratureError> {
    if n > 3 {
        return Err(QuadratureError::Dimension(n));
    }
    let r = cfg.truncation_sigmas;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut feature = f64::INFINITY;
    for t in tuples {
        for i in 0..n {
            let s = t.cov[(i, i)].sqrt();
            lo[i] = lo[i].min(t.center[i] - r * s);
            hi[i] = hi[i].max(t.center[i] + r * s);
        }
        feature = feature.min(1.0 / t.max_precision_eig.sqrt());
    }
    let panels: Vec<usize> = (0..n)
        .map(|i| ((hi[i] - lo[i]) / (cfg.panel_width * feature)).ceil().max(1.0) as usize)
        .collect();
    refine_box(&lo, &hi, &panels, cfg, &|x: &[f64]| integrand.eval(x))
}

/// `int_domain f` with panels sized from `feature`, the shortest length on
/// which `f` varies.
pub fn integrate_scalar_box<F>(
    domain: &BoxDomain,
    feature: f64,
    cfg: &QuadratureConfig,
    f: &F,
) -> Result<QuadResult, QuadratureError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if !(feature > 0.0) {
        return Err(QuadratureError::InvalidConfig(format!("feature scale {feature}")));
    }
    let n = domain.dim();
    if n > 3 {
        return Err(QuadratureError::Dimension(n));
    }
    let panels: Vec<usize> = (0..n)
        .map(|i| {
            ((domain.hi[i] - domain.lo[i]) / (cfg.panel_width * feature))
                .ceil()
                .max(1.0) as usize
        })
        .collect();
    refine_box(&domain.lo, &domain.hi, &panels, cfg, f)
}

/// Integrates at `points_per_axis` and at twice that order; reports the
/// finer value with the difference (plus a noise floor) as error.
fn refine_box<F>(
    lo: &[f64],
    hi: &[f64],
    panels: &[usize],
    cfg: &QuadratureConfig,
    f: &F,
) -> Result<QuadResult, QuadratureError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let order = cfg.points_per_axis;
    let points = box_points(2 * order, panels);
    if points > cfg.max_points {
        return Err(QuadratureError::BudgetExceeded(points));
    }
    let coarse = integrate_box(lo, hi, order, panels, f);
    let fine = integrate_box(lo, hi, 2 * order, panels, f);
    Ok(QuadResult {
        value: fine,
        error_estimate: (fine - coarse).abs() + QUAD_NOISE_FLOOR * fine.abs(),
        points: points + box_points(order, panels),
    })
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (chunk as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn monte_carlo_numerator(
    tuples: &[TupleGaussian],
    integrand: &LinearIntegrand<'_>,
    cfg: &QuadratureConfig,
) -> QuadResult {
    let n = tuples[0].center.len();
    let max_log = tuples.iter().map(|t| t.log_mass).fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = tuples.iter().map(|t| (t.log_mass - max_log).exp()).collect();
    let total_rel: f64 = rel.iter().sum();
    let weights: Vec<f64> = rel.iter().map(|r| r / total_rel).collect();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let two_pi_ln = (2.0 * std::f64::consts::PI).ln();
    let log_norms: Vec<f64> = tuples
        .iter()
        .map(|t| -0.5 * (n as f64 * two_pi_ln + linalg::spd_logdet(&t.cov).expect("SPD")))
        .collect();
    let precisions: Vec<DMatrix<f64>> = tuples
        .iter()
        .map(|t| linalg::spd_inverse(&t.cov).expect("SPD"))
        .collect();
    let proposal = |x: &DVector<f64>| -> f64 {
        let mut s = 0.0;
        for (i, t) in tuples.iter().enumerate() {
            let d = x - &t.center;
            let q = d.dot(&(&precisions[i] * &d));
            s += weights[i] * (log_norms[i] - 0.5 * q).exp();
        }
        s
    };
    let chunks = cfg.mc_samples.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(cfg.seed, c);
            let count = MC_CHUNK.min(cfg.mc_samples - c * MC_CHUNK);
            let mut s1 = Neumaier::new();
            let mut s2 = Neumaier::new();
            for _ in 0..count {
                let u: f64 = rng.random();
                let k = cumulative.iter().position(|&cu| u < cu).unwrap_or(tuples.len() - 1);
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = &tuples[k].center + &tuples[k].chol * z;
                let q = proposal(&x);
                let r = if q > 0.0 { integrand.eval(x.as_slice()) / q } else { 0.0 };
                s1.add(r);
                s2.add(r * r);
            }
            (s1.value(), s2.value())
        })
        .collect();
    let ns = cfg.mc_samples as f64;
    let mean = pairwise_sum(&sums.iter().map(|s| s.0).collect::<Vec<_>>()) / ns;
    let second = pairwise_sum(&sums.iter().map(|s| s.1).collect::<Vec<_>>()) / ns;
    let var = (second - mean * mean).max(0.0);
    QuadResult {
        value: mean,
        error_estimate: (var / ns).sqrt(),
        points: cfg.mc_samples,
    }
}

/// Integrand `prod_j field_j(B_j(x))^{p_j}` on the smooth datum.
fn nonlinear_integrand(nd: &NonlinearDatum, fields: &[&dyn ScalarField], x: &[f64]) -> f64 {
    let mut log = 0.0;
    let mut y = [0.0; 8];
    for (j, f) in fields.iter().enumerate() {
        let p = nd.p(j);
        if p == 0.0 {
            continue;
        }
        let b = &nd.maps()[j];
        let k = b.out_dim();
        b.eval_into(x, &mut y[..k]);
        let v = f.eval(&y[..k]);
        if v <= 0.0 {
            return 0.0;
        }
        log += p * v.ln();
    }
    log.exp()
}

fn nonlinear_feature(nd: &NonlinearDatum, fields: &[&dyn ScalarField]) -> f64 {
    fields
        .iter()
        .enumerate()
        .filter(|(j, _)| nd.p(*j) > 0.0)
        .map(|(j, f)| f.feature_scale() / nd.derivative_bound(j).max(1e-12))
        .fold(f64::INFINITY, f64::min)
}

fn check_fields(nd: &NonlinearDatum, fields: &[&dyn ScalarField]) -> Result<(), QuadratureError> {
    if fields.len() != nd.m() {
        return Err(QuadratureError::ShapeMismatch(format!(
            "{} fields for {} maps",
            fields.len(),
            nd.m()
        )));
    }
    for (j, (f, k)) in fields.iter().zip(nd.target_dims()).enumerate() {
        if f.dim() != k {
            return Err(QuadratureError::ShapeMismatch(format!(
                "field {} has dim {}, map has {k}",
                j + 1,
                f.dim()
            )));
        }
    }
    Ok(())
}

/// `int_domain prod_j field_j(B_j(x))^{p_j} dx` by tensor quadrature.
pub fn integrate_product_nonlinear(
    nd: &NonlinearDatum,
    fields: &[&dyn ScalarField],
    domain: &BoxDomain,
    cfg: &QuadratureConfig,
) -> Result<QuadResult, QuadratureError> {
    cfg.validate()?;
    check_fields(nd, fields)?;
    let n = nd.n();
    if domain.dim() != n {
        return Err(QuadratureError::ShapeMismatch("domain dimension".into()));
    }
    if n > 3 {
        return Err(QuadratureError::Dimension(n));
    }
    let feature = nonlinear_feature(nd, fields);
    let panels: Vec<usize> = (0..n)
        .map(|i| {
            ((domain.hi[i] - domain.lo[i]) / (cfg.panel_width * feature))
                .ceil()
                .max(1.0) as usize
        })
        .collect();
    refine_box(&domain.lo, &domain.hi, &panels, cfg, &|x: &[f64]| {
        nonlinear_integrand(nd, fields, x)
    })
}

/// The same integrand over the euclidean ball `|x - center| <= radius`.
pub fn integrate_product_ball(
    nd: &NonlinearDatum,
    fields: &[&dyn ScalarField],
    center: &[f64],
    radius: f64,
    cfg: &QuadratureConfig,
) -> Result<QuadResult, QuadratureError> {
    cfg.validate()?;
    check_fields(nd, fields)?;
    let n = nd.n();
    if center.len() != n {
        return Err(QuadratureError::ShapeMismatch("center dimension".into()));
    }
    if !(1..=3).contains(&n) {
        return Err(QuadratureError::Dimension(n));
    }
    let feature = nonlinear_feature(nd, fields);
    let radial = ((radius / (cfg.panel_width * feature)).ceil() as usize).max(2);
    let angular = ((4.0 * std::f64::consts::PI * radius / feature).ceil() as usize).clamp(64, 8192);
    let points = radial * 2 * cfg.points_per_axis * angular.pow(n.saturating_sub(1) as u32);
    if points > cfg.max_points {
        return Err(QuadratureError::BudgetExceeded(points));
    }
    let run = |order: usize, ang: usize| {
        let mut x = vec![0.0; n];
        ball_integrate(n, radius, order, radial, ang, &mut |u: &[f64]| {
            for i in 0..n {
                x[i] = center[i] + u[i];
            }
            nonlinear_integrand(nd, fields, &x)
        })
    };
    let coarse = run(cfg.points_per_axis, angular);
    let fine = run(2 * cfg.points_per_axis, 2 * angular);
    Ok(QuadResult {
        value: fine,
        error_estimate: (fine - coarse).abs() + QUAD_NOISE_FLOOR * fine.abs(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::linear_catalog;
    use crate::gaussian::{bl_g, GaussianInput};
    use approx::assert_relative_eq;

    fn forms(a: &[f64]) -> Vec<GaussianMixture> {
        a.iter()
            .map(|&v| GaussianMixture::centred_form(&DMatrix::from_element(1, 1, v)).unwrap())
            .collect()
    }

    #[test]
    fn holder_quadrature_matches_closed_form() {
        let d = linear_catalog("holder-1d").unwrap();
        let q = bl_functional_numeric(&d, &forms(&[4.0, 1.0]), &QuadratureConfig::default()).unwrap();
        let exact = bl_g(&d, &GaussianInput::scalars(&[4.0, 1.0]).unwrap()).unwrap().value;
        assert_relative_eq!(q.value, exact, max_relative = 1e-10);
        assert!(q.error_estimate < 1e-8);
    }

    #[test]
    fn monte_carlo_agrees_with_grid() {
        let d = linear_catalog("young-2-3").unwrap();
        let inputs = forms(&[2.0, 0.7, 1.3]);
        let g = bl_functional_numeric(&d, &inputs, &QuadratureConfig::default()).unwrap();
        let cfg = QuadratureConfig {
            method: Method::MonteCarlo,
            mc_samples: 20_000,
            seed: 9,
            ..Default::default()
        };
        let m = bl_functional_numeric(&d, &inputs, &cfg).unwrap();
        let se = (m.error_estimate.powi(2) + g.error_estimate.powi(2)).sqrt();
        assert!(
            (m.value - g.value).abs() <= 3.0 * se,
            "{} vs {} (se {se})",
            m.value,
            g.value
        );
    }

    #[test]
    fn zero_exponent_factor_is_dropped() {
        let d = LinearDatum::from_floats(
            1,
            vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)],
            &[1.0, 0.0],
        )
        .unwrap();
        let q = bl_functional_numeric(&d, &forms(&[2.0, 5.0]), &QuadratureConfig::default()).unwrap();
        assert_relative_eq!(q.value, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn scaling_violation_refused() {
        let d = LinearDatum::from_floats(1, vec![DMatrix::from_element(1, 1, 1.0)], &[0.5]).unwrap();
        let e = bl_functional_numeric(&d, &forms(&[1.0]), &QuadratureConfig::default()).unwrap_err();
        assert!(matches!(e, QuadratureError::ScalingViolated));
    }
}
