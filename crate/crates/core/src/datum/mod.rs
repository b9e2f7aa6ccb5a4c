//! Brascamp-Lieb data: linear maps with exponents, subspace conditions and
//! smooth nonlinear data.

mod catalog;
mod io;
mod nonlinear;
mod subspace;

pub use catalog::{catalog_entries, linear_catalog, nonlinear_catalog, CatalogEntry, CatalogKind};
pub use io::{DatumFile, ExponentRepr};
pub use nonlinear::{BoxDomain, Monomial, NonlinearDatum, PolynomialMap};
pub use subspace::{
    check_subspace, feasibility_probe, FeasibilityReport, ProbeSource, ProbeWitness, SubspaceReport, Verdict,
};

use nalgebra::DMatrix;
use num_rational::Ratio;
use thiserror::Error;

use crate::linalg;

/// Tolerance for floating-point scaling and dimension comparisons.
pub const SCALING_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatumError {
    #[error("datum has no maps")]
    Empty,
    #[error("ambient dimension must be positive")]
    ZeroDimension,
    #[error("map {0} has the wrong shape: {1}")]
    ShapeMismatch(usize, String),
    #[error("map {0} is not surjective")]
    RankDeficient(usize),
    #[error("exponent {0} is outside [0, 1]")]
    ExponentOutOfRange(usize),
    #[error("map {0} has non-finite entries")]
    NonFinite(usize),
    #[error("exponent count {found} does not match map count {expected}")]
    ExponentCount { expected: usize, found: usize },
    #[error("invalid rational exponent: {0}")]
    InvalidExponent(String),
    #[error("subspace basis vectors are linearly dependent")]
    DependentBasis,
    #[error("subspace basis has {found} rows, expected {expected}")]
    BasisShape { expected: usize, found: usize },
    #[error("image dimension of map {0} disagrees between rank and kernel computations")]
    InconsistentImageDimension(usize),
    #[error("differential of map {map} loses rank at {point:?}")]
    NotSubmersive { map: usize, point: Vec<f64> },
    #[error("differential of map {map} exceeds its asserted bound: {found} > {bound}")]
    DerivativeBound { map: usize, found: f64, bound: f64 },
    #[error("unknown catalog entry: {0}")]
    UnknownCatalog(String),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("json: {0}")]
    Json(String),
}

/// An exponent `p_j`, optionally carried as an exact rational.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent {
    value: f64,
    ratio: Option<(i64, i64)>,
}

impl Exponent {
    pub fn float(value: f64) -> Self {
        Self { value, ratio: None }
    }

    pub fn rational(num: i64, den: i64) -> Result<Self, DatumError> {
        if den == 0 {
            return Err(DatumError::InvalidExponent(format!("{num}/{den}")));
        }
        let r = Ratio::new(num, den);
        Ok(Self {
            value: *r.numer() as f64 / *r.denom() as f64,
            ratio: Some((*r.numer(), *r.denom())),
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn ratio(&self) -> Option<Ratio<i64>> {
        self.ratio.map(|(a, b)| Ratio::new(a, b))
    }

    /// Parse `"a/b"` or a decimal literal.
    pub fn parse(s: &str) -> Result<Self, DatumError> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let num: i64 = a.trim().parse().map_err(|_| DatumError::InvalidExponent(s.into()))?;
            let den: i64 = b.trim().parse().map_err(|_| DatumError::InvalidExponent(s.into()))?;
            Self::rational(num, den)
        } else {
            s.parse::<f64>()
                .map(Self::float)
                .map_err(|_| DatumError::InvalidExponent(s.into()))
        }
    }
}

impl std::fmt::Display for Exponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.ratio {
            Some((a, 1)) => write!(f, "{a}"),
            Some((a, b)) => write!(f, "{a}/{b}"),
            None => write!(f, "{}", self.value),
        }
    }
}

/// Outcome of the scaling test `sum_j p_j n_j = n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub weighted_dim: f64,
    pub ambient_dim: usize,
    /// `Some` when every exponent is rational and the test was exact.
    pub exact: Option<bool>,
    pub holds: bool,
}

/// A linear datum `(L, p)` with surjective `L_j : R^n -> R^{n_j}`.
///
/// Error indices are 1-based positions of the offending map.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDatum {
    n: usize,
    maps: Vec<DMatrix<f64>>,
    exponents: Vec<Exponent>,
}

impl LinearDatum {
    pub fn new(n: usize, maps: Vec<DMatrix<f64>>, exponents: Vec<Exponent>) -> Result<Self, DatumError> {
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
        for (j, l) in maps.iter().enumerate() {
            let idx = j + 1;
            if l.ncols() != n || l.nrows() == 0 || l.nrows() > n {
                return Err(DatumError::ShapeMismatch(
                    idx,
                    format!("{}x{} for ambient dimension {n}", l.nrows(), l.ncols()),
                ));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(DatumError::NonFinite(idx));
            }
            if linalg::rank(l) != l.nrows() {
                return Err(DatumError::RankDeficient(idx));
            }
        }
        for (j, p) in exponents.iter().enumerate() {
            let v = p.value();
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(DatumError::ExponentOutOfRange(j + 1));
            }
        }
        Ok(Self { n, maps, exponents })
    }

    /// Convenience constructor from float exponents.
    pub fn from_floats(n: usize, maps: Vec<DMatrix<f64>>, p: &[f64]) -> Result<Self, DatumError> {
        Self::new(n, maps, p.iter().map(|&v| Exponent::float(v)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[DMatrix<f64>] {
        &self.maps
    }

    pub fn map(&self, j: usize) -> &DMatrix<f64> {
        &self.maps[j]
    }

    pub fn exponents(&self) -> &[Exponent] {
        &self.exponents
    }

    pub fn p(&self, j: usize) -> f64 {
        self.exponents[j].value()
    }

    pub fn target_dims(&self) -> Vec<usize> {
        self.maps.iter().map(|l| l.nrows()).collect()
    }

    /// Rational exponents if every exponent carries one.
    pub(crate) fn rational_exponents(&self) -> Option<Vec<Ratio<i64>>> {
        self.exponents.iter().map(|e| e.ratio()).collect()
    }

    pub fn check_scaling(&self) -> ScalingReport {
        let weighted: f64 = self
            .maps
            .iter()
            .zip(&self.exponents)
            .map(|(l, p)| p.value() * l.nrows() as f64)
            .sum();
        let exact = self.rational_exponents().map(|ps| {
            let s: Ratio<i64> = ps
                .iter()
                .zip(&self.maps)
                .map(|(p, l)| p * Ratio::from_integer(l.nrows() as i64))
                .sum();
            s == Ratio::from_integer(self.n as i64)
        });
        let holds = match exact {
            Some(e) => e,
            None => (weighted - self.n as f64).abs() <= SCALING_TOL,
        };
        ScalingReport {
            weighted_dim: weighted,
            ambient_dim: self.n,
            exact,
            holds,
        }
    }

    /// A copy with map `j` replaced.
    pub fn with_map(&self, j: usize, l: DMatrix<f64>) -> Result<Self, DatumError> {
        let mut maps = self.maps.clone();
        maps[j] = l;
        Self::new(self.n, maps, self.exponents.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lw2() -> LinearDatum {
        LinearDatum::from_floats(
            2,
            vec![
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            ],
            &[1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn loomis_whitney_scaling_holds() {
        let r = lw2().check_scaling();
        assert!(r.holds);
        assert_eq!(r.weighted_dim, 2.0);
    }

    #[test]
    fn rational_young_scaling_is_exact() {
        let p = Exponent::rational(2, 3).unwrap();
        let d = LinearDatum::new(
            2,
            vec![
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            ],
            vec![p; 3],
        )
        .unwrap();
        assert_eq!(d.check_scaling().exact, Some(true));
    }

    #[test]
    fn rank_deficient_map_rejected() {
        let err = LinearDatum::from_floats(
            2,
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            ],
            &[0.5, 1.0],
        )
        .unwrap_err();
        assert_eq!(err, DatumError::RankDeficient(1));
    }

    #[test]
    fn exponent_range_checked() {
        let err = LinearDatum::from_floats(1, vec![DMatrix::from_row_slice(1, 1, &[1.0])], &[1.5]).unwrap_err();
        assert_eq!(err, DatumError::ExponentOutOfRange(1));
    }

    #[test]
    fn exponent_parsing() {
        assert_eq!(Exponent::parse("2/4").unwrap().to_string(), "1/2");
        assert_eq!(Exponent::parse("0.25").unwrap().value(), 0.25);
        assert!(Exponent::parse("1/0").is_err());
    }
}
