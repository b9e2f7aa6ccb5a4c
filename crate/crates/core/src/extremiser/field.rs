use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bl_estimate, near_extremiser_search, ExtremiserError, SearchConfig};
use crate::datum::{DatumError, LinearDatum};
use crate::gaussian::{bl_g, harmonic_blend, normalize_det, GaussianInput};
use crate::numerics::ols;

/// Zero-based position of one matrix entry of a datum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntryCoord {
    pub map: usize,
    pub row: usize,
    pub col: usize,
}

/// A box of data: the listed entries of `base` range over `[lo, hi]`,
/// all other entries stay fixed.
#[derive(Debug, Clone)]
pub struct DatumBox {
    base: LinearDatum,
    coords: Vec<EntryCoord>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl DatumBox {
    pub fn new(
        base: LinearDatum,
        coords: Vec<EntryCoord>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    ) -> Result<Self, ExtremiserError> {
        if coords.is_empty() || coords.len() != lo.len() || lo.len() != hi.len() {
            return Err(ExtremiserError::InvalidParameter(
                "box coordinates and bounds disagree".into(),
            ));
        }
        for c in &coords {
            let ok = c.map < base.m() && c.row < base.map(c.map).nrows() && c.col < base.n();
            if !ok {
                return Err(ExtremiserError::InvalidParameter(format!("entry {c:?} out of range")));
            }
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(ExtremiserError::InvalidParameter("need lo <= hi".into()));
        }
        let out = Self { base, coords, lo, hi };
        out.datum_at(&out.lo.clone())?;
        out.datum_at(&out.hi.clone())?;
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| a <= v && v <= b)
    }

    pub fn datum_at(&self, x: &[f64]) -> Result<LinearDatum, DatumError> {
        let mut maps = self.base.maps().to_vec();
        for (c, &v) in self.coords.iter().zip(x) {
            maps[c.map][(c.row, c.col)] = v;
        }
        LinearDatum::new(self.base.n(), maps, self.base.exponents().to_vec())
    }

    /// A point `lo + t (hi - lo)` for `t` in the unit cube.
    pub fn point(&self, t: &[f64]) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(t)
            .map(|((a, b), s)| a + (b - a) * s)
            .collect()
    }
}

/// Blend weights, cell extremisers and the blended field at one point.
#[derive(Debug, Clone)]
pub struct FieldValue {
    /// Unit-determinant field value.
    pub value: GaussianInput,
    /// Harmonic blend before determinant normalisation.
    pub blend: GaussianInput,
    pub cells: Vec<(f64, GaussianInput)>,
    /// `max_i |grad rho_i|` times the cube width.
    pub scaled_gradient_sup: f64,
}

#[derive(Debug, Clone)]
pub struct FieldCertificate {
    pub bl_est: f64,
    /// `1 - bl_g(L, blend) / BL_est`.
    pub blend_deficit: f64,
    /// `sum_i max(0, 1 - bl_g(L, Y0_i) / BL_est)` over contributing cells.
    pub cell_deficit_sum: f64,
    /// `1 - bl_g(L, value) / BL_est` for the normalised field.
    pub normalized_deficit: f64,
}

/// Lazily evaluated smooth near-extremiser field on a datum box.
#[derive(Debug)]
pub struct YDeltaField {
    domain: DatumBox,
    delta: f64,
    theta: f64,
    spacing: f64,
    width: f64,
    node_lo: Vec<i64>,
    node_hi: Vec<i64>,
    degenerate: Vec<bool>,
    search: SearchConfig,
    node_budget: usize,
    cache: Mutex<HashMap<Vec<i64>, GaussianInput>>,
}

pub const DEFAULT_NODE_BUDGET: usize = 200_000;

/// Grid of spacing `(delta/100)^{1/theta}`, cubes of width `(delta/10)^{1/theta}`.
pub fn build_y_delta_field(
    domain: DatumBox,
    delta: f64,
    theta: f64,
    search: SearchConfig,
) -> Result<YDeltaField, ExtremiserError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ExtremiserError::InvalidParameter(format!(
            "delta = {delta} outside (0, 1)"
        )));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(ExtremiserError::InvalidParameter(format!(
            "theta = {theta} outside (0, 1]"
        )));
    }
    let spacing = (delta / 100.0).powf(1.0 / theta);
    let width = (delta / 10.0).powf(1.0 / theta);
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(ExtremiserError::GridTooCoarse(format!(
            "spacing {spacing} not representable"
        )));
    }
    let d = domain.dim();
    let mut node_lo = vec![0; d];
    let mut node_hi = vec![0; d];
    let mut degenerate = vec![false; d];
    for i in 0..d {
        let (a, b) = (domain.lo[i], domain.hi[i]);
        if a == b {
            degenerate[i] = true;
            continue;
        }
        let klo = (a / spacing).ceil();
        let khi = (b / spacing).floor();
        if klo > khi || khi - klo > 1e15 {
            return Err(ExtremiserError::GridTooCoarse(format!(
                "axis {i}: no usable grid nodes in [{a}, {b}] at spacing {spacing}"
            )));
        }
        if klo * spacing - a >= 0.5 * width || b - khi * spacing >= 0.5 * width {
            return Err(ExtremiserError::GridTooCoarse(format!(
                "axis {i}: cubes do not cover the box"
            )));
        }
        node_lo[i] = klo as i64;
        node_hi[i] = khi as i64;
    }
    Ok(YDeltaField {
        domain,
        delta,
        theta,
        spacing,
        width,
        node_lo,
        node_hi,
        degenerate,
        search,
        node_budget: DEFAULT_NODE_BUDGET,
        cache: Mutex::new(HashMap::new()),
    })
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// `psi'(s) / psi(s)`.
fn bump_log_derivative(s: f64) -> f64 {
    -2.0 * s / (1.0 - s * s).powi(2)
}

impl YDeltaField {
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn domain(&self) -> &DatumBox {
        &self.domain
    }

    pub fn with_node_budget(mut self, budget: usize) -> Self {
        self.node_budget = budget;
        self
    }

    fn node_point(&self, k: &[i64]) -> Vec<f64> {
        k.iter()
            .enumerate()
            .map(|(i, &ki)| {
                if self.degenerate[i] {
                    self.domain.lo[i]
                } else {
                    ki as f64 * self.spacing
                }
            })
            .collect()
    }

    fn node_extremiser(&self, k: &[i64]) -> Result<GaussianInput, ExtremiserError> {
        if let Some(v) = self.cache.lock().expect("cache poisoned").get(k) {
            return Ok(v.clone());
        }
        let datum = self.domain.datum_at(&self.node_point(k))?;
        let y0 = match near_extremiser_search(&datum, &self.search) {
            Ok(r) => r.input,
            Err(ExtremiserError::MaxIterExceeded { best }) => best.input,
            Err(e) => return Err(e),
        };
        let mut guard = self.cache.lock().expect("cache poisoned");
        Ok(guard.entry(k.to_vec()).or_insert(y0).clone())
    }

    /// Number of grid nodes whose extremiser has been computed.
    pub fn cached_nodes(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<FieldValue, ExtremiserError> {
        if !self.domain.contains(x) {
            return Err(ExtremiserError::InvalidParameter(format!(
                "{x:?} outside the datum box"
            )));
        }
        let d = self.domain.dim();
        let half = 0.5 * self.width;
        let mut ranges = Vec::with_capacity(d);
        let mut count = 1usize;
        for i in 0..d {
            if self.degenerate[i] {
                ranges.push((0i64, 0i64));
                continue;
            }
            let lo = ((x[i] - half) / self.spacing).ceil() as i64;
            let hi = ((x[i] + half) / self.spacing).floor() as i64;
            let lo = lo.max(self.node_lo[i]);
            let hi = hi.min(self.node_hi[i]);
            if lo > hi {
                return Err(ExtremiserError::GridTooCoarse(format!("no cube covers {x:?}")));
            }
            count = count.saturating_mul((hi - lo + 1) as usize);
            ranges.push((lo, hi));
        }
        if count > self.node_budget {
            return Err(ExtremiserError::NodeBudget(count));
        }
        let mut nodes = Vec::with_capacity(count);
        for mut idx in 0..count {
            let mut k = Vec::with_capacity(d);
            for &(lo, hi) in &ranges {
                let len = (hi - lo + 1) as usize;
                k.push(lo + (idx % len) as i64);
                idx /= len;
            }
            nodes.push(k);
        }
        let mut phis = Vec::with_capacity(count);
        let mut logdiffs = Vec::with_capacity(count);
        for k in &nodes {
            let c = self.node_point(k);
            let mut phi = 1.0;
            let mut ld = vec![0.0; d];
            for i in 0..d {
                if self.degenerate[i] {
                    continue;
                }
                let s = (x[i] - c[i]) / half;
                phi *= bump(s);
                ld[i] = bump_log_derivative(s) / half;
            }
            phis.push(phi);
            logdiffs.push(ld);
        }
        let total: f64 = phis.iter().sum();
        if !(total > 0.0) {
            return Err(ExtremiserError::GridTooCoarse(format!(
                "partition of unity vanishes at {x:?}"
            )));
        }
        let mut grad_total = vec![0.0; d];
        for (phi, ld) in phis.iter().zip(&logdiffs) {
            for i in 0..d {
                grad_total[i] += phi * ld[i];
            }
        }
        let mut scaled_gradient_sup: f64 = 0.0;
        let mut cells = Vec::new();
        for ((k, phi), ld) in nodes.iter().zip(&phis).zip(&logdiffs) {
            if *phi == 0.0 {
                continue;
            }
            let rho = phi / total;
            let g: f64 = (0..d)
                .map(|i| ((phi * ld[i] * total - phi * grad_total[i]) / (total * total)).powi(2))
                .sum::<f64>()
                .sqrt();
            scaled_gradient_sup = scaled_gradient_sup.max(g * self.width);
            cells.push((rho, self.node_extremiser(k)?));
        }
        let refs: Vec<(f64, &GaussianInput)> = cells.iter().map(|(w, y)| (*w, y)).collect();
        let blend = harmonic_blend(&refs)?;
        Ok(FieldValue {
            value: normalize_det(&blend),
            blend,
            cells,
            scaled_gradient_sup,
        })
    }

    /// Compares the field and its blend against `BL_est` at `x`.
    pub fn certify(&self, x: &[f64]) -> Result<FieldCertificate, ExtremiserError> {
        let fv = self.eval(x)?;
        let datum = self.domain.datum_at(x)?;
        let est = bl_estimate(&datum, &self.search)?.value;
        let deficit = |y: &GaussianInput| -> Result<f64, ExtremiserError> { Ok(1.0 - bl_g(&datum, y)?.value / est) };
        let mut cell_sum = 0.0;
        for (_, y) in &fv.cells {
            cell_sum += deficit(y)?.max(0.0);
        }
        Ok(FieldCertificate {
            bl_est: est,
            blend_deficit: deficit(&fv.blend)?,
            cell_deficit_sum: cell_sum,
            normalized_deficit: deficit(&fv.value)?,
        })
    }
}

fn value_norm(y: &GaussianInput) -> f64 {
    y.max_norm_with_inverse()
}

#[derive(Debug, Clone)]
pub struct C1Estimate {
    pub value_sup: f64,
    pub derivative_sup: f64,
    pub blend_value_sup: f64,
    pub blend_derivative_sup: f64,
    /// Every derivative agrees with its half-step estimate.
    pub consistent: bool,
}

impl C1Estimate {
    pub fn norm(&self) -> f64 {
        self.value_sup.max(self.derivative_sup)
    }

    pub fn blend_norm(&self) -> f64 {
        self.blend_value_sup.max(self.blend_derivative_sup)
    }
}

/// Relative tolerance between full- and half-step derivative estimates.
pub const FD_HALVING_RTOL: f64 = 0.05;

fn blocks_diff(a: &GaussianInput, b: &GaussianInput, h: f64) -> Vec<DMatrix<f64>> {
    a.blocks().iter().zip(b.blocks()).map(|(x, y)| (x - y) / h).collect()
}

/// Central-difference sup of the field and its derivatives over `probes`.
pub fn estimate_c1_norm(field: &YDeltaField, probes: &[Vec<f64>], fd_step: f64) -> Result<C1Estimate, ExtremiserError> {
    if !(fd_step > 0.0 && fd_step < field.spacing / 10.0) {
        return Err(ExtremiserError::InvalidParameter(format!(
            "fd_step {fd_step} must be below spacing/10 = {}",
            field.spacing / 10.0
        )));
    }
    let dom = field.domain();
    let per_probe: Vec<Result<C1Estimate, ExtremiserError>> = probes
        .par_iter()
        .map(|x| {
            let fv = field.eval(x)?;
            let mut est = C1Estimate {
                value_sup: value_norm(&fv.value),
                derivative_sup: 0.0,
                blend_value_sup: value_norm(&fv.blend),
                blend_derivative_sup: 0.0,
                consistent: true,
            };
            for i in 0..dom.dim() {
                if dom.lo[i] == dom.hi[i] {
                    continue;
                }
                let at = |h: f64| -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>), ExtremiserError> {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] = (x[i] + h).min(dom.hi[i]);
                    xm[i] = (x[i] - h).max(dom.lo[i]);
                    let span = xp[i] - xm[i];
                    let fp = field.eval(&xp)?;
                    let fm = field.eval(&xm)?;
                    Ok((
                        blocks_diff(&fp.value, &fm.value, span),
                        blocks_diff(&fp.blend, &fm.blend, span),
                    ))
                };
                let (dv, db) = at(fd_step)?;
                let (dv2, db2) = at(0.5 * fd_step)?;
                for (full, half, sup, vsup) in [
                    (&dv, &dv2, &mut est.derivative_sup, est.value_sup),
                    (&db, &db2, &mut est.blend_derivative_sup, est.blend_value_sup),
                ] {
                    let floor = 1e3 * f64::EPSILON * vsup / (0.5 * fd_step);
                    for (a, b) in full.iter().zip(half) {
                        *sup = sup.max(a.amax());
                        for (u, v) in a.iter().zip(b.iter()) {
                            if (u - v).abs() > FD_HALVING_RTOL * u.abs().max(v.abs()) + floor {
                                est.consistent = false;
                            }
                        }
                    }
                }
            }
            Ok(est)
        })
        .collect();
    let mut out = C1Estimate {
        value_sup: 0.0,
        derivative_sup: 0.0,
        blend_value_sup: 0.0,
        blend_derivative_sup: 0.0,
        consistent: true,
    };
    for r in per_probe {
        let r = r?;
        out.value_sup = out.value_sup.max(r.value_sup);
        out.derivative_sup = out.derivative_sup.max(r.derivative_sup);
        out.blend_value_sup = out.blend_value_sup.max(r.blend_value_sup);
        out.blend_derivative_sup = out.blend_derivative_sup.max(r.blend_derivative_sup);
        out.consistent &= r.consistent;
    }
    Ok(out)
}

/// `C^1` norms along a `delta` sweep and the fitted growth `delta^{-N}`.
#[derive(Debug, Clone)]
pub struct NFit {
    pub deltas: Vec<f64>,
    pub norms: Vec<f64>,
    pub blend_norms: Vec<f64>,
    pub n_fit: f64,
    pub n_fit_blend: f64,
    pub consistent: bool,
}

/// `fd_step` at each `delta` is `spacing / 20`.
pub fn fit_n(
    domain: &DatumBox,
    deltas: &[f64],
    theta: f64,
    probes: &[Vec<f64>],
    search: &SearchConfig,
) -> Result<NFit, ExtremiserError> {
    if deltas.len() < 2 {
        return Err(ExtremiserError::InvalidParameter("need at least two deltas".into()));
    }
    let mut norms = Vec::new();
    let mut blend_norms = Vec::new();
    let mut consistent = true;
    for &delta in deltas {
        let field = build_y_delta_field(domain.clone(), delta, theta, search.clone())?;
        let c1 = estimate_c1_norm(&field, probes, field.spacing() / 20.0)?;
        norms.push(c1.norm());
        blend_norms.push(c1.blend_norm());
        consistent &= c1.consistent;
    }
    let lx: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let fit = |ys: &[f64]| -> f64 {
        let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
        ols(&lx, &ly).map(|(s, _)| -s).unwrap_or(f64::NAN)
    };
    Ok(NFit {
        deltas: deltas.to_vec(),
        n_fit: fit(&norms),
        n_fit_blend: fit(&blend_norms),
        norms,
        blend_norms,
        consistent,
    })
}
