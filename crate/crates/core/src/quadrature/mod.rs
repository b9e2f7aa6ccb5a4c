//! Numerical integration of Brascamp-Lieb functionals.

mod functional;
mod mixture;
mod rules;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use functional::{
    bl_functional_numeric, integrate_product_ball, integrate_product_nonlinear, integrate_scalar_box,
    BlFunctionalValue, QUAD_NOISE_FLOOR,
};
pub use mixture::{
    kernel_covariance, GaussianMixture, MixtureFile, MixtureTerm, ScalarField, TermFile, TruncatedConvolution,
};
pub use rules::{ball_integrate, box_points, integrate_box};

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported dimension {0}")]
    Dimension(usize),
    #[error("invalid quadrature config: {0}")]
    InvalidConfig(String),
    #[error("scaling condition fails, functional is unbounded")]
    ScalingViolated,
    #[error("quadrature needs {0} points, over budget")]
    BudgetExceeded(usize),
    #[error("integrand is not integrable (degenerate product form)")]
    Divergent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TensorGrid,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub method: Method,
    /// Gauss-Legendre order per panel; the error check doubles it.
    pub points_per_axis: usize,
    /// Panel width in units of the integrand's feature scale.
    pub panel_width: f64,
    /// Half-width of the integration box in standard deviations.
    pub truncation_sigmas: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub max_points: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            method: Method::TensorGrid,
            points_per_axis: 16,
            panel_width: 4.0,
            truncation_sigmas: 8.0,
            mc_samples: 100_000,
            seed: 0,
            max_points: 50_000_000,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        if self.points_per_axis < 16 {
            return Err(QuadratureError::InvalidConfig(format!(
                "points_per_axis {} below 16",
                self.points_per_axis
            )));
        }
        if !(self.panel_width > 0.0 && self.panel_width.is_finite()) {
            return Err(QuadratureError::InvalidConfig("panel_width must be positive".into()));
        }
        if !(self.truncation_sigmas >= 8.0 && self.truncation_sigmas.is_finite()) {
            return Err(QuadratureError::InvalidConfig(
                "truncation_sigmas must be at least 8".into(),
            ));
        }
        if self.method == Method::MonteCarlo && self.mc_samples < 10_000 {
            return Err(QuadratureError::InvalidConfig(format!(
                "mc_samples {} below 1e4",
                self.mc_samples
            )));
        }
        Ok(())
    }
}

/// Integral value with an a-posteriori error estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub points: usize,
}
