use std::f64::consts::PI;

use rayon::prelude::*;

use crate::numerics::{composite_rule, gauss_legendre, pairwise_sum, Neumaier};

/// Tensor composite Gauss-Legendre over a box.
///
/// Work is split by outer-axis node, each chunk is summed with Neumaier
/// compensation and chunks are combined in a fixed pairwise tree, so the
/// result does not depend on the thread count.
pub fn integrate_box<F>(lo: &[f64], hi: &[f64], order: usize, panels: &[usize], f: &F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = lo.len();
    let axes: Vec<Vec<(f64, f64)>> = (0..n).map(|i| composite_rule(lo[i], hi[i], order, panels[i])).collect();
    if n == 0 {
        return f(&[]);
    }
    let inner: usize = axes[1..].iter().map(|a| a.len()).product();
    let partials: Vec<f64> = axes[0]
        .par_iter()
        .map(|&(x0, w0)| {
            let mut acc = Neumaier::new();
            let mut x = vec![0.0; n];
            x[0] = x0;
            for mut idx in 0..inner {
                let mut w = w0;
                for i in 1..n {
                    let len = axes[i].len();
                    let (xi, wi) = axes[i][idx % len];
                    idx /= len;
                    x[i] = xi;
                    w *= wi;
                }
                acc.add(w * f(&x));
            }
            acc.value()
        })
        .collect();
    pairwise_sum(&partials)
}

pub fn box_points(order: usize, panels: &[usize]) -> usize {
    panels.iter().fold(1usize, |acc, &p| acc.saturating_mul(p * order))
}

/// Integral over the centred ball of radius `r` in dimension 1, 2 or 3.
///
/// Radial direction: composite Gauss-Legendre; angles: periodic trapezoid
/// in the azimuth and Gauss-Legendre in the polar cosine.
pub fn ball_integrate(
    k: usize,
    r: f64,
    order: usize,
    radial_panels: usize,
    angular: usize,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> f64 {
    match k {
        1 => {
            let mut acc = Neumaier::new();
            for (x, w) in composite_rule(-r, r, order, 2 * radial_panels) {
                acc.add(w * f(&[x]));
            }
            acc.value()
        }
        2 => {
            let mut acc = Neumaier::new();
            let dphi = 2.0 * PI / angular as f64;
            let circle: Vec<(f64, f64)> = (0..angular)
                .map(|i| {
                    let phi = dphi * i as f64;
                    (phi.cos(), phi.sin())
                })
                .collect();
            for (rho, w) in composite_rule(0.0, r, order, radial_panels) {
                let mut ring = Neumaier::new();
                for &(c, s) in &circle {
                    ring.add(f(&[rho * c, rho * s]));
                }
                acc.add(w * rho * dphi * ring.value());
            }
            acc.value()
        }
        3 => {
            let mut acc = Neumaier::new();
            let az = (angular / 2).max(16);
            let dphi = 2.0 * PI / az as f64;
            let polar = gauss_legendre((angular / 4).max(16));
            for (rho, w) in composite_rule(0.0, r, order, radial_panels) {
                let mut shell = Neumaier::new();
                for &(ct, wt) in polar.iter() {
                    let st = (1.0 - ct * ct).max(0.0).sqrt();
                    for i in 0..az {
                        let phi = dphi * i as f64;
                        shell.add(wt * f(&[rho * st * phi.cos(), rho * st * phi.sin(), rho * ct]));
                    }
                }
                acc.add(w * rho * rho * dphi * shell.value());
            }
            acc.value()
        }
        _ => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ball_volumes() {
        for (k, vol) in [(1, 2.0), (2, PI), (3, 4.0 * PI / 3.0)] {
            let v = ball_integrate(k, 1.0, 8, 2, 64, &mut |_| 1.0);
            assert_relative_eq!(v, vol, max_relative = 1e-12);
        }
    }

    #[test]
    fn box_gaussian_mass() {
        let f = |x: &[f64]| (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp() / (2.0 * PI);
        let v = integrate_box(&[-8.0, -8.0], &[8.0, 8.0], 16, &[4, 4], &f);
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let f = |x: &[f64]| (x[0] * 3.1).sin().powi(2) * (-x[1] * x[1]).exp();
        let run = |t: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| integrate_box(&[-2.0, -3.0], &[2.0, 3.0], 16, &[7, 5], &f))
        };
        assert_eq!(run(1).to_bits(), run(4).to_bits());
    }
}
