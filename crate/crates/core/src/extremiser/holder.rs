use super::{bl_estimate, ExtremiserError, SearchConfig};
use crate::datum::LinearDatum;
use crate::numerics::ols;

pub const MIN_HOLDER_PAIRS: usize = 20;

/// Fit of `|BL(L) - BL(L')| <= C |L - L'|^theta` over sampled pairs.
#[derive(Debug, Clone)]
pub struct HolderFit {
    /// Log-log regression slope capped at one.
    pub theta: f64,
    pub raw_slope: f64,
    /// Smallest `C` valid for every pair at exponent `theta`.
    pub constant: f64,
    pub pairs_used: usize,
}

fn datum_distance(a: &LinearDatum, b: &LinearDatum) -> f64 {
    a.maps()
        .iter()
        .zip(b.maps())
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Pairs with zero datum distance or equal BL estimates are skipped.
pub fn holder_probe(pairs: &[(LinearDatum, LinearDatum)], cfg: &SearchConfig) -> Result<HolderFit, ExtremiserError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (a, b) in pairs {
        let dist = datum_distance(a, b);
        let diff = (bl_estimate(a, cfg)?.value - bl_estimate(b, cfg)?.value).abs();
        if dist > 0.0 && diff > 0.0 {
            xs.push(dist.ln());
            ys.push(diff.ln());
        }
    }
    if xs.len() < MIN_HOLDER_PAIRS {
        return Err(ExtremiserError::InsufficientPairs(xs.len()));
    }
    let (raw_slope, _) = ols(&xs, &ys).ok_or(ExtremiserError::InsufficientPairs(xs.len()))?;
    // Exponents above one force constant functions on connected sets.
    let theta = raw_slope.min(1.0);
    let constant = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - theta * x).exp())
        .fold(0.0, f64::max);
    Ok(HolderFit {
        theta,
        raw_slope,
        constant,
        pairs_used: xs.len(),
    })
}
