use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DatumError, Exponent, LinearDatum};
use crate::linalg;

/// `coeff * prod_i x_i^powers[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// A polynomial map `R^n -> R^k`, one monomial list per output component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialMap {
    pub in_dim: usize,
    pub components: Vec<Vec<Monomial>>,
}

impl PolynomialMap {
    pub fn linear(l: &DMatrix<f64>) -> Self {
        let n = l.ncols();
        let components = (0..l.nrows())
            .map(|r| {
                (0..n)
                    .filter(|&c| l[(r, c)] != 0.0)
                    .map(|c| {
                        let mut powers = vec![0; n];
                        powers[c] = 1;
                        Monomial {
                            coeff: l[(r, c)],
                            powers,
                        }
                    })
                    .collect()
            })
            .collect();
        Self { in_dim: n, components }
    }

    /// Largest total degree among the monomials.
    pub fn degree(&self) -> u32 {
        self.components
            .iter()
            .flatten()
            .map(|m| m.powers.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.components.len()
    }

    fn check(&self) -> Result<(), String> {
        if self.components.is_empty() {
            return Err("map has no components".into());
        }
        for comp in &self.components {
            for m in comp {
                if m.powers.len() != self.in_dim {
                    return Err(format!(
                        "monomial has {} powers for input dimension {}",
                        m.powers.len(),
                        self.in_dim
                    ));
                }
                if !m.coeff.is_finite() {
                    return Err("non-finite coefficient".into());
                }
            }
        }
        Ok(())
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.components) {
            let mut s = 0.0;
            for m in comp {
                let mut t = m.coeff;
                for (xi, &e) in x.iter().zip(&m.powers) {
                    if e > 0 {
                        t *= xi.powi(e as i32);
                    }
                }
                s += t;
            }
            *o = s;
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.out_dim(), self.in_dim);
        for (r, comp) in self.components.iter().enumerate() {
            for m in comp {
                for c in 0..self.in_dim {
                    let e = m.powers[c];
                    if e == 0 {
                        continue;
                    }
                    let mut t = m.coeff * e as f64;
                    for (i, (&xi, &ei)) in x.iter().zip(&m.powers).enumerate() {
                        let k = if i == c { ei - 1 } else { ei };
                        if k > 0 {
                            t *= xi.powi(k as i32);
                        }
                    }
                    jac[(r, c)] += t;
                }
            }
        }
        jac
    }
}

/// Axis-aligned box `prod_i [lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DatumError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(DatumError::InvalidDomain("bound lengths differ".into()));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite())
        {
            return Err(DatumError::InvalidDomain("need finite lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(n: usize, r: f64) -> Self {
        Self {
            lo: vec![-r; n],
            hi: vec![r; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn inflate(&self, r: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|v| v - r).collect(),
            hi: self.hi.iter().map(|v| v + r).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| a <= v && v <= b)
    }

    /// Tensor grid with `k` points per axis (endpoints included).
    pub fn grid(&self, k: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let k = k.max(1);
        let total = k.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                (0..n)
                    .map(|i| {
                        let t = idx % k;
                        idx /= k;
                        if k == 1 {
                            0.5 * (self.lo[i] + self.hi[i])
                        } else {
                            self.lo[i] + (self.hi[i] - self.lo[i]) * t as f64 / (k - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

const SUBMERSION_GRID: usize = 9;

/// Smooth data `B_j : U -> R^{n_j}` on a box `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearDatum {
    name: String,
    n: usize,
    maps: Vec<PolynomialMap>,
    exponents: Vec<Exponent>,
    domain: BoxDomain,
    derivative_bounds: Vec<f64>,
}

impl NonlinearDatum {
    /// Validates submersion on a sample grid and measures `sup |dB_j|` there.
    /// If `asserted_bounds` is given, every sampled norm must respect it.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        maps: Vec<PolynomialMap>,
        exponents: Vec<Exponent>,
        domain: BoxDomain,
        asserted_bounds: Option<Vec<f64>>,
    ) -> Result<Self, DatumError> {
        if n == 0 {
            return Err(DatumError::ZeroDimension);
        }
        if maps.is_empty() {
            return Err(DatumError::Empty);
        }
        if exponents.len() != maps.len() {
            return Err(DatumError::ExponentCount {
                expected: maps.len(),
                found: exponents.len(),
            });
        }
        if domain.dim() != n {
            return Err(DatumError::InvalidDomain(format!(
                "domain dimension {} for ambient dimension {n}",
                domain.dim()
            )));
        }
        for (j, b) in maps.iter().enumerate() {
            if b.in_dim != n || b.out_dim() > n {
                return Err(DatumError::ShapeMismatch(
                    j + 1,
                    format!("{} -> {}", b.in_dim, b.out_dim()),
                ));
            }
            b.check().map_err(|e| DatumError::ShapeMismatch(j + 1, e))?;
        }
        for (j, p) in exponents.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.value()) {
                return Err(DatumError::ExponentOutOfRange(j + 1));
            }
        }
        let mut bounds = vec![0.0f64; maps.len()];
        for x in domain.grid(SUBMERSION_GRID) {
            for (j, b) in maps.iter().enumerate() {
                let d = b.jacobian(&x);
                if linalg::rank(&d) != b.out_dim() {
                    return Err(DatumError::NotSubmersive { map: j + 1, point: x });
                }
                bounds[j] = bounds[j].max(linalg::op_norm(&d));
            }
        }
        if let Some(asserted) = asserted_bounds {
            for (j, (&found, &bound)) in bounds.iter().zip(&asserted).enumerate() {
                if found > bound {
                    return Err(DatumError::DerivativeBound {
                        map: j + 1,
                        found,
                        bound,
                    });
                }
            }
            bounds = asserted;
        }
        Ok(Self {
            name: name.into(),
            n,
            maps,
            exponents,
            domain,
            derivative_bounds: bounds,
        })
    }

    pub fn from_linear(name: impl Into<String>, datum: &LinearDatum, domain: BoxDomain) -> Result<Self, DatumError> {
        let maps = datum.maps().iter().map(PolynomialMap::linear).collect();
        Self::new(name, datum.n(), maps, datum.exponents().to_vec(), domain, None)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[PolynomialMap] {
        &self.maps
    }

    pub fn exponents(&self) -> &[Exponent] {
        &self.exponents
    }

    pub fn p(&self, j: usize) -> f64 {
        self.exponents[j].value()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn target_dims(&self) -> Vec<usize> {
        self.maps.iter().map(|b| b.out_dim()).collect()
    }

    /// Sampled `sup_U |dB_j|` (or the asserted bound).
    pub fn derivative_bound(&self, j: usize) -> f64 {
        self.derivative_bounds[j]
    }

    pub fn eval(&self, j: usize, x: &[f64]) -> Vec<f64> {
        self.maps[j].eval(x)
    }

    /// The linear datum `dB(x)`.
    pub fn linearization(&self, x: &[f64]) -> Result<LinearDatum, DatumError> {
        LinearDatum::new(
            self.n,
            self.maps.iter().map(|b| b.jacobian(x)).collect(),
            self.exponents.clone(),
        )
    }
}
