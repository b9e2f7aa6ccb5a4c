//! Centred gaussian inputs `exp(-pi <A_j x, x>)` and their algebra.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::datum::LinearDatum;
use crate::linalg;
use crate::numerics::Neumaier;

/// `det M` below this is treated as singular.
pub const DET_M_FLOOR: f64 = 1e-300;
/// Default relative termination tolerance for the infinite convolution:
/// further terms no longer change the rounded sum.
pub const CONVOLUTION_TOL: f64 = f64::EPSILON / 4.0;
const MAX_CONVOLUTION_TERMS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("block {0} is not symmetric positive definite")]
    NotSpd(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("M is singular (log det M = {0})")]
    SingularM(f64),
    #[error("infinite convolution does not converge: {0}")]
    NoConvergence(String),
    #[error("invalid kernel family: {0}")]
    InvalidFamily(String),
}

/// A tuple of SPD blocks `A_j`, symmetrised on construction.
#[derive(Clone, PartialEq)]
pub struct GaussianInput {
    blocks: Vec<DMatrix<f64>>,
}

impl fmt::Debug for GaussianInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<_> = self.blocks.iter().map(linalg::to_rows).collect();
        f.debug_struct("GaussianInput").field("blocks", &rows).finish()
    }
}

impl GaussianInput {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self, GaussianError> {
        let mut out = Vec::with_capacity(blocks.len());
        for (j, b) in blocks.into_iter().enumerate() {
            if !b.is_square() || b.nrows() == 0 {
                return Err(GaussianError::ShapeMismatch(format!(
                    "block {} is {}x{}",
                    j + 1,
                    b.nrows(),
                    b.ncols()
                )));
            }
            let s = linalg::symmetrize(&b);
            if !linalg::is_spd(&s) {
                return Err(GaussianError::NotSpd(j + 1));
            }
            out.push(s);
        }
        Ok(Self { blocks: out })
    }

    /// Scalar blocks `a_j` (every `n_j = 1`).
    pub fn scalars(a: &[f64]) -> Result<Self, GaussianError> {
        Self::new(a.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect())
    }

    pub fn identity(dims: &[usize]) -> Self {
        Self {
            blocks: dims.iter().map(|&d| DMatrix::identity(d, d)).collect(),
        }
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &DMatrix<f64> {
        &self.blocks[j]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn scaled(&self, c: f64) -> Result<Self, GaussianError> {
        Self::new(self.blocks.iter().map(|b| b * c).collect())
    }

    /// Blockwise inverse.
    pub fn inverse(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| linalg::spd_inverse(b).expect("SPD by construction"))
                .collect(),
        }
    }

    /// Largest blockwise `max(|A_j|, |A_j^{-1}|)`.
    pub fn max_norm_with_inverse(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| linalg::max_eigenvalue(b).max(1.0 / linalg::min_eigenvalue(b)))
            .fold(0.0, f64::max)
    }

    /// Largest blockwise spectral condition number.
    pub fn max_condition(&self) -> f64 {
        self.blocks.iter().map(linalg::spd_condition).fold(1.0, f64::max)
    }

    /// Blockwise maximum absolute entry difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    fn check_dims(&self, datum: &LinearDatum) -> Result<(), GaussianError> {
        if self.dims() != datum.target_dims() {
            return Err(GaussianError::ShapeMismatch(format!(
                "input dims {:?} vs datum target dims {:?}",
                self.dims(),
                datum.target_dims()
            )));
        }
        Ok(())
    }
}

/// `bl_g` together with the matrix `M = sum_j p_j L_j^T A_j L_j`.
#[derive(Debug, Clone)]
pub struct BlgEvaluation {
    pub value: f64,
    pub log_value: f64,
    pub m: DMatrix<f64>,
}

pub fn m_matrix(datum: &LinearDatum, input: &GaussianInput) -> Result<DMatrix<f64>, GaussianError> {
    input.check_dims(datum)?;
    let n = datum.n();
    let mut m = DMatrix::zeros(n, n);
    for (j, (l, a)) in datum.maps().iter().zip(input.blocks()).enumerate() {
        let p = datum.p(j);
        if p == 0.0 {
            continue;
        }
        m += (l.transpose() * a * l) * p;
    }
    Ok(linalg::symmetrize(&m))
}

/// `prod_j det(A_j)^{p_j/2} / det(M)^{1/2}`.
pub fn bl_g(datum: &LinearDatum, input: &GaussianInput) -> Result<BlgEvaluation, GaussianError> {
    let m = m_matrix(datum, input)?;
    let logdet_m = linalg::spd_logdet(&m).ok_or(GaussianError::SingularM(f64::NEG_INFINITY))?;
    if logdet_m < DET_M_FLOOR.ln() {
        return Err(GaussianError::SingularM(logdet_m));
    }
    let mut log_value = -0.5 * logdet_m;
    for (j, a) in input.blocks().iter().enumerate() {
        let p = datum.p(j);
        if p == 0.0 {
            continue;
        }
        log_value += 0.5 * p * linalg::spd_logdet(a).expect("SPD by construction");
    }
    Ok(BlgEvaluation {
        value: log_value.exp(),
        log_value,
        m,
    })
}

/// Blockwise `(X^{-1} + Y^{-1})^{-1}`.
pub fn harmonic_add(x: &GaussianInput, y: &GaussianInput) -> Result<GaussianInput, GaussianError> {
    if x.dims() != y.dims() {
        return Err(GaussianError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    let blocks = x
        .blocks()
        .iter()
        .zip(y.blocks())
        .map(|(a, b)| {
            let s = linalg::spd_inverse(a).expect("SPD") + linalg::spd_inverse(b).expect("SPD");
            linalg::spd_inverse(&s).expect("sum of SPD is SPD")
        })
        .collect();
    GaussianInput::new(blocks)
}

/// Weighted harmonic blend `(sum_i w_i X_i^{-1})^{-1}` with `w_i > 0`.
pub fn harmonic_blend(items: &[(f64, &GaussianInput)]) -> Result<GaussianInput, GaussianError> {
    let first = items
        .first()
        .ok_or_else(|| GaussianError::ShapeMismatch("empty blend".into()))?
        .1;
    let dims = first.dims();
    let mut acc: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    for (w, x) in items {
        if x.dims() != dims {
            return Err(GaussianError::ShapeMismatch(format!("{:?} vs {:?}", x.dims(), dims)));
        }
        for (a, b) in acc.iter_mut().zip(x.blocks()) {
            *a += linalg::spd_inverse(b).expect("SPD") * *w;
        }
    }
    let blocks = acc
        .iter()
        .enumerate()
        .map(|(j, a)| linalg::spd_inverse(a).ok_or(GaussianError::NotSpd(j + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    GaussianInput::new(blocks)
}

/// `A_j det(A_j)^{-1/n_j}`; scalar blocks map to exactly one.
pub fn normalize_det(x: &GaussianInput) -> GaussianInput {
    let blocks = x
        .blocks()
        .iter()
        .map(|a| {
            let d = a.nrows();
            if d == 1 {
                DMatrix::from_element(1, 1, 1.0)
            } else {
                let ld = linalg::spd_logdet(a).expect("SPD");
                a * (-ld / d as f64).exp()
            }
        })
        .collect();
    GaussianInput { blocks }
}

/// Convolve kernel pairs `(X, tau)` and `(Y, sigma)`, where the pair
/// `(A, s)` stands for `exp(-pi s^{-2} <A z, z>)`.
///
/// Returns the blocks at the output scale `sqrt(tau^2 + sigma^2)`.
pub fn convolve_inputs(
    x: &GaussianInput,
    tau: f64,
    y: &GaussianInput,
    sigma: f64,
) -> Result<(GaussianInput, f64), GaussianError> {
    if x.dims() != y.dims() {
        return Err(GaussianError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    let s2 = tau * tau + sigma * sigma;
    let blocks = x
        .blocks()
        .iter()
        .zip(y.blocks())
        .map(|(a, b)| {
            let cov = linalg::spd_inverse(a).expect("SPD") * (tau * tau)
                + linalg::spd_inverse(b).expect("SPD") * (sigma * sigma);
            linalg::spd_inverse(&cov).expect("SPD") * s2
        })
        .collect();
    Ok((GaussianInput::new(blocks)?, s2.sqrt()))
}

type Generator = dyn Fn(f64) -> Result<GaussianInput, GaussianError> + Send + Sync;

/// A scale-indexed family `s -> a_s` with an insert-once cache.
#[derive(Clone)]
pub struct KernelFamily {
    alpha: f64,
    asserted_n: f64,
    dims: Vec<usize>,
    generator: Arc<Generator>,
    cache: Arc<Mutex<HashMap<u64, GaussianInput>>>,
}

impl fmt::Debug for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelFamily")
            .field("alpha", &self.alpha)
            .field("asserted_n", &self.asserted_n)
            .field("dims", &self.dims)
            .finish()
    }
}

impl KernelFamily {
    /// `asserted_n` is the `N` in `|a_s|, |a_s^{-1}| <= s^{-alpha N}`.
    pub fn new<F>(alpha: f64, asserted_n: f64, dims: Vec<usize>, generator: F) -> Result<Self, GaussianError>
    where
        F: Fn(f64) -> Result<GaussianInput, GaussianError> + Send + Sync + 'static,
    {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(GaussianError::InvalidFamily(format!("alpha = {alpha} outside (0, 1)")));
        }
        if !(asserted_n > 0.0) || !asserted_n.is_finite() {
            return Err(GaussianError::InvalidFamily(format!(
                "N = {asserted_n} must be positive"
            )));
        }
        Ok(Self {
            alpha,
            asserted_n,
            dims,
            generator: Arc::new(generator),
            cache: Arc::new(Mutex::new(HashMap::new())),
        })
    }

    /// `a_s = A` for every scale.
    pub fn constant(alpha: f64, input: GaussianInput) -> Result<Self, GaussianError> {
        let dims = input.dims();
        Self::new(alpha, 1.0, dims, move |_| Ok(input.clone()))
    }

    /// `a_s = s^alpha I` on blocks of the given dimensions.
    pub fn scalar_power(alpha: f64, dims: Vec<usize>) -> Result<Self, GaussianError> {
        let d = dims.clone();
        Self::new(alpha, 1.0, dims, move |s| {
            GaussianInput::new(d.iter().map(|&k| DMatrix::identity(k, k) * s.powf(alpha)).collect())
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn asserted_n(&self) -> f64 {
        self.asserted_n
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Whether `alpha < 2 / (3N)`.
    pub fn in_lemma_regime(&self) -> bool {
        self.alpha < 2.0 / (3.0 * self.asserted_n)
    }

    pub fn at(&self, s: f64) -> Result<GaussianInput, GaussianError> {
        let key = s.to_bits();
        if let Some(v) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        let v = (self.generator)(s)?;
        if v.dims() != self.dims {
            return Err(GaussianError::ShapeMismatch(format!(
                "generator produced {:?}, family declares {:?}",
                v.dims(),
                self.dims
            )));
        }
        let mut guard = self.cache.lock().expect("cache poisoned");
        Ok(guard.entry(key).or_insert(v).clone())
    }

    /// `2^{(alpha N / 2 - 1) K} tau^{-alpha N}`.
    pub fn tail_bound(&self, tau: f64, k: usize) -> f64 {
        let an = self.alpha * self.asserted_n;
        (2f64.ln() * (0.5 * an - 1.0) * k as f64).exp() * tau.powf(-an)
    }

    /// Bound on `|C_{K+l}^{-1} - C_K^{-1}|`.
    pub fn increment_bound(&self, tau: f64, k: usize, l: usize) -> f64 {
        let r = 2f64.powf(0.5 * self.alpha * self.asserted_n - 1.0);
        let geo: f64 = (1..=l).map(|i| r.powi(i as i32)).sum();
        self.tail_bound(tau, k) * geo
    }

    /// Blocks of `C_K^{-1} = sum_{k=1}^K 2^{-k} a^{-1}_{2^{-k/2} tau}`.
    pub fn partial_inverse(&self, tau: f64, k_max: usize) -> Result<Vec<DMatrix<f64>>, GaussianError> {
        let mut acc = SumAccumulator::new(&self.dims);
        for k in 1..=k_max {
            let (s, w) = term_scale(tau, k);
            acc.add(&self.at(s)?.inverse(), w);
        }
        Ok(acc.value())
    }
}

fn term_scale(tau: f64, k: usize) -> (f64, f64) {
    let w = 0.5f64.powi(k as i32);
    (tau * w.sqrt(), w)
}

struct SumAccumulator {
    dims: Vec<usize>,
    acc: Vec<Vec<Neumaier>>,
}

impl SumAccumulator {
    fn new(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            acc: dims.iter().map(|&d| vec![Neumaier::new(); d * d]).collect(),
        }
    }

    /// Adds `w * x` and returns the largest absolute entry of the increment.
    fn add(&mut self, x: &GaussianInput, w: f64) -> f64 {
        let mut inc: f64 = 0.0;
        for (a, b) in self.acc.iter_mut().zip(x.blocks()) {
            for (slot, v) in a.iter_mut().zip(b.iter()) {
                let t = w * v;
                inc = inc.max(t.abs());
                slot.add(t);
            }
        }
        inc
    }

    fn max_abs(&self) -> f64 {
        self.acc
            .iter()
            .flat_map(|a| a.iter())
            .map(|s| s.value().abs())
            .fold(0.0, f64::max)
    }

    fn value(&self) -> Vec<DMatrix<f64>> {
        self.dims
            .iter()
            .zip(&self.acc)
            .map(|(&d, a)| DMatrix::from_iterator(d, d, a.iter().map(|s| s.value())))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ConvolutionLimit {
    pub input: GaussianInput,
    pub terms: usize,
    pub last_increment: f64,
    pub tail_bound: f64,
}

/// `A_tau = lim_K C_K`, stopping once the blockwise increment is below
/// `tol` times the largest accumulated entry.
pub fn infinite_convolution_limit(
    family: &KernelFamily,
    tau: f64,
    tol: f64,
) -> Result<ConvolutionLimit, GaussianError> {
    if !(tau > 0.0) {
        return Err(GaussianError::InvalidFamily(format!("tau = {tau} must be positive")));
    }
    if 0.5 * family.alpha * family.asserted_n >= 1.0 {
        return Err(GaussianError::NoConvergence(format!(
            "alpha N / 2 = {} >= 1, tail bound does not decrease",
            0.5 * family.alpha * family.asserted_n
        )));
    }
    let mut acc = SumAccumulator::new(&family.dims);
    for k in 1..=MAX_CONVOLUTION_TERMS {
        let (s, w) = term_scale(tau, k);
        let inc = acc.add(&family.at(s)?.inverse(), w);
        if inc <= tol * acc.max_abs() {
            let blocks = acc
                .value()
                .iter()
                .enumerate()
                .map(|(j, c)| linalg::spd_inverse(c).ok_or(GaussianError::NotSpd(j + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(ConvolutionLimit {
                input: GaussianInput::new(blocks)?,
                terms: k,
                last_increment: inc,
                tail_bound: family.tail_bound(tau, k),
            });
        }
    }
    Err(GaussianError::NoConvergence(format!(
        "increment still above {tol} after {MAX_CONVOLUTION_TERMS} terms"
    )))
}
