use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::rules::ball_integrate;
use super::QuadratureError;
use crate::linalg;
use crate::numerics::{normal_interval, normal_pdf};

/// Something that can be evaluated pointwise on `R^k`.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64]) -> f64;
    /// Smallest length scale on which the field varies.
    fn feature_scale(&self) -> f64;
}

/// `weight * N(center, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTerm {
    pub weight: f64,
    pub center: DVector<f64>,
    pub covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl MixtureTerm {
    pub fn new(weight: f64, center: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, QuadratureError> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(QuadratureError::InvalidMixture(format!("weight {weight}")));
        }
        if center.len() != covariance.nrows() || !covariance.is_square() {
            return Err(QuadratureError::InvalidMixture(
                "center and covariance sizes differ".into(),
            ));
        }
        let covariance = linalg::symmetrize(&covariance);
        let ld = linalg::spd_logdet(&covariance)
            .ok_or_else(|| QuadratureError::InvalidMixture("covariance not SPD".into()))?;
        let precision = linalg::spd_inverse(&covariance).expect("SPD");
        let k = center.len() as f64;
        let log_norm = -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + ld);
        Ok(Self {
            weight,
            center,
            covariance,
            precision,
            log_norm,
        })
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        if self.weight == 0.0 {
            return 0.0;
        }
        let k = y.len();
        let mut q = 0.0;
        for a in 0..k {
            let da = y[a] - self.center[a];
            for b in 0..k {
                q += da * self.precision[(a, b)] * (y[b] - self.center[b]);
            }
        }
        self.weight * (self.log_norm - 0.5 * q).exp()
    }
}

/// A finite nonnegative combination of gaussian densities on `R^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    terms: Vec<MixtureTerm>,
}

/// Covariance of the unit-mass kernel `exp(-pi tau^{-2} <A z, z>)`.
pub fn kernel_covariance(a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    linalg::spd_inverse(a).expect("SPD kernel") * (tau * tau / (2.0 * std::f64::consts::PI))
}

impl GaussianMixture {
    pub fn new(dim: usize, terms: Vec<MixtureTerm>) -> Result<Self, QuadratureError> {
        if terms.is_empty() {
            return Err(QuadratureError::InvalidMixture("no terms".into()));
        }
        if terms.iter().any(|t| t.center.len() != dim) {
            return Err(QuadratureError::InvalidMixture("term dimension mismatch".into()));
        }
        Ok(Self { dim, terms })
    }

    /// The function `exp(-pi <A x, x>)` as a one-term mixture.
    pub fn centred_form(a: &DMatrix<f64>) -> Result<Self, QuadratureError> {
        let d = a.nrows();
        let ld = linalg::spd_logdet(a).ok_or_else(|| QuadratureError::InvalidMixture("form not SPD".into()))?;
        let term = MixtureTerm::new((-0.5 * ld).exp(), DVector::zeros(d), kernel_covariance(a, 1.0))?;
        Self::new(d, vec![term])
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(
            dim,
            vec![MixtureTerm::new(1.0, DVector::zeros(dim), DMatrix::identity(dim, dim)).expect("valid")],
        )
        .expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[MixtureTerm] {
        &self.terms
    }

    pub fn mass(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(y)).sum()
    }

    /// Exact convolution with a unit-mass centred gaussian of covariance `cov`.
    pub fn convolve_covariance(&self, cov: &DMatrix<f64>) -> Result<Self, QuadratureError> {
        if cov.nrows() != self.dim {
            return Err(QuadratureError::ShapeMismatch(format!(
                "kernel dim {} vs mixture dim {}",
                cov.nrows(),
                self.dim
            )));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| MixtureTerm::new(t.weight, t.center.clone(), &t.covariance + cov))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(self.dim, terms)
    }

    pub fn smallest_std(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| linalg::min_eigenvalue(&t.covariance).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_file(&self) -> MixtureFile {
        MixtureFile {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|t| TermFile {
                    weight: t.weight,
                    center: t.center.iter().cloned().collect(),
                    covariance: linalg::to_rows(&t.covariance),
                })
                .collect(),
        }
    }
}

impl ScalarField for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, y: &[f64]) -> f64 {
        GaussianMixture::eval(self, y)
    }

    fn feature_scale(&self) -> f64 {
        self.smallest_std()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermFile {
    pub weight: f64,
    pub center: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// On-disk mixture: `(weight, center, covariance)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFile {
    pub dim: usize,
    pub terms: Vec<TermFile>,
}

impl MixtureFile {
    pub fn to_mixture(&self) -> Result<GaussianMixture, QuadratureError> {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let cov = linalg::from_rows(&t.covariance, self.dim)
                    .ok_or_else(|| QuadratureError::InvalidMixture("ragged covariance".into()))?;
                MixtureTerm::new(t.weight, DVector::from_vec(t.center.clone()), cov)
            })
            .collect::<Result<Vec<_>, _>>()?;
        GaussianMixture::new(self.dim, terms)
    }
}

/// `f * (G 1_{|u| <= radius})` for a mixture `f` and the unit-mass kernel
/// `G(u) = tau^{-k} det(A)^{1/2} exp(-pi tau^{-2} <A u, u>)`.
#[derive(Debug, Clone)]
pub struct TruncatedConvolution {
    mixture: GaussianMixture,
    kernel_cov: DMatrix<f64>,
    kernel_prec: DMatrix<f64>,
    kernel_log_norm: f64,
    radius: f64,
    radial_panels: usize,
    angular_points: usize,
}

const BALL_ORDER: usize = 16;

impl TruncatedConvolution {
    pub fn new(mixture: GaussianMixture, form: &DMatrix<f64>, tau: f64, radius: f64) -> Result<Self, QuadratureError> {
        let k = mixture.dim();
        if form.nrows() != k {
            return Err(QuadratureError::ShapeMismatch(format!(
                "kernel dim {} vs mixture dim {k}",
                form.nrows()
            )));
        }
        if k > 3 {
            return Err(QuadratureError::Dimension(k));
        }
        if !(radius > 0.0) || !(tau > 0.0) {
            return Err(QuadratureError::InvalidConfig(format!("radius {radius}, tau {tau}")));
        }
        let kernel_cov = kernel_covariance(form, tau);
        let kernel_prec = linalg::spd_inverse(&kernel_cov).expect("SPD");
        let ld = linalg::spd_logdet(&kernel_cov).expect("SPD");
        let kernel_log_norm = -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + ld);
        let scale = linalg::min_eigenvalue(&kernel_cov).sqrt().min(mixture.smallest_std());
        let radial_panels = ((radius / scale).ceil() as usize).clamp(2, 64);
        let angular_points = ((8.0 * std::f64::consts::PI * radius / scale).ceil() as usize).clamp(32, 1024);
        Ok(Self {
            mixture,
            kernel_cov,
            kernel_prec,
            kernel_log_norm,
            radius,
            radial_panels,
            angular_points,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    fn kernel(&self, u: &[f64]) -> f64 {
        let k = u.len();
        let mut q = 0.0;
        for a in 0..k {
            for b in 0..k {
                q += u[a] * self.kernel_prec[(a, b)] * u[b];
            }
        }
        (self.kernel_log_norm - 0.5 * q).exp()
    }

    /// Closed form for `k = 1` through the normal distribution function.
    fn eval_1d(&self, z: f64) -> f64 {
        let s2k = self.kernel_cov[(0, 0)];
        let r = self.radius;
        self.mixture
            .terms()
            .iter()
            .map(|t| {
                let s2 = t.covariance[(0, 0)];
                let d = z - t.center[0];
                let tot = s2 + s2k;
                let m = d * s2k / tot;
                let v = (s2 * s2k / tot).sqrt();
                t.weight * normal_pdf(d, tot) * normal_interval((-r - m) / v, (r - m) / v)
            })
            .sum()
    }

    /// Numerical ball quadrature, also valid for `k = 1`.
    pub fn eval_numeric(&self, z: &[f64]) -> f64 {
        let k = z.len();
        let mut w = vec![0.0; k];
        ball_integrate(
            k,
            self.radius,
            BALL_ORDER,
            self.radial_panels,
            self.angular_points,
            &mut |u: &[f64]| {
                for i in 0..k {
                    w[i] = z[i] - u[i];
                }
                self.mixture.eval(&w) * self.kernel(u)
            },
        )
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        if z.len() == 1 {
            self.eval_1d(z[0])
        } else {
            self.eval_numeric(z)
        }
    }
}

impl ScalarField for TruncatedConvolution {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn eval(&self, y: &[f64]) -> f64 {
        TruncatedConvolution::eval(self, y)
    }

    fn feature_scale(&self) -> f64 {
        self.mixture.smallest_std()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn centred_form_mass() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = GaussianMixture::centred_form(&a).unwrap();
        assert_relative_eq!(f.mass(), a.determinant().powf(-0.5), epsilon = 1e-14);
        assert_relative_eq!(f.eval(&[0.0, 0.0]), 1.0, epsilon = 1e-14);
        let x = [0.3, -0.2];
        let q = 2.0 * 0.09 + 2.0 * 0.5 * 0.3 * -0.2 + 0.04;
        assert_relative_eq!(f.eval(&x), (-std::f64::consts::PI * q).exp(), epsilon = 1e-14);
    }

    #[test]
    fn one_dimensional_truncation_matches_quadrature() {
        let f = GaussianMixture::new(
            1,
            vec![
                MixtureTerm::new(0.7, DVector::from_vec(vec![0.2]), DMatrix::from_element(1, 1, 0.05)).unwrap(),
                MixtureTerm::new(0.3, DVector::from_vec(vec![-0.4]), DMatrix::from_element(1, 1, 0.5)).unwrap(),
            ],
        )
        .unwrap();
        let t = TruncatedConvolution::new(f, &DMatrix::from_element(1, 1, 1.3), 0.2, 0.2f64.powf(0.9)).unwrap();
        for z in [-0.5, 0.0, 0.13, 0.6] {
            assert_relative_eq!(t.eval(&[z]), t.eval_numeric(&[z]), max_relative = 1e-10);
        }
    }

    #[test]
    fn large_radius_recovers_full_convolution() {
        let f = GaussianMixture::standard(2);
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let t = TruncatedConvolution::new(f.clone(), &a, 0.3, 3.0).unwrap();
        let full = f.convolve_covariance(&kernel_covariance(&a, 0.3)).unwrap();
        for z in [[0.0, 0.0], [0.4, -0.3]] {
            assert_relative_eq!(t.eval(&z), full.eval(&z), max_relative = 1e-9);
        }
    }
}
