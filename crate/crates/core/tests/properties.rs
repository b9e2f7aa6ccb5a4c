use blflow_core::datum::{check_subspace, linear_catalog, LinearDatum};
use blflow_core::extremiser::{near_extremiser_search, SearchConfig};
use blflow_core::gaussian::{bl_g, convolve_inputs, harmonic_add};
use blflow_core::harness::{chain_composition, fit_beta, random_input, seeded_mixture};
use blflow_core::linalg;
use blflow_core::quadrature::{bl_functional_numeric, GaussianMixture, QuadratureConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LINEAR: [&str; 5] = [
    "holder-1d",
    "holder-2d",
    "loomis-whitney-2d",
    "loomis-whitney-3d",
    "young-2-3",
];

fn datum(i: usize) -> LinearDatum {
    linear_catalog(LINEAR[i % LINEAR.len()]).unwrap()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / a.abs().max().max(b.abs().max())
}

fn rescaled(f: &GaussianMixture, weight: f64, lambda: f64) -> GaussianMixture {
    let mut file = f.to_file();
    for t in &mut file.terms {
        t.weight *= weight;
        t.center.iter_mut().for_each(|c| *c /= lambda);
        t.covariance.iter_mut().flatten().for_each(|c| *c /= lambda * lambda);
    }
    file.to_mixture().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bl_g_invariant_under_common_scaling(d in 0usize..5, seed in any::<u64>(), lambda in 0.1f64..10.0) {
        let datum = datum(d);
        let a = random_input(&mut ChaCha8Rng::seed_from_u64(seed), &datum.target_dims());
        let v = bl_g(&datum, &a).unwrap().value;
        let w = bl_g(&datum, &a.scaled(lambda).unwrap()).unwrap().value;
        prop_assert!((w / v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn harmonic_add_commutes_and_halves(seed in any::<u64>(), dims in prop::collection::vec(1usize..4, 1..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_input(&mut rng, &dims);
        let b = random_input(&mut rng, &dims);
        let ab = harmonic_add(&a, &b).unwrap();
        let ba = harmonic_add(&b, &a).unwrap();
        let aa = harmonic_add(&a, &a).unwrap();
        let half = a.scaled(0.5).unwrap();
        for j in 0..dims.len() {
            prop_assert!(rel(ab.block(j), ba.block(j)) < 1e-13);
            prop_assert!(rel(aa.block(j), half.block(j)) < 1e-13);
        }
    }

    #[test]
    fn convolution_is_associative(seed in any::<u64>(), s in prop::array::uniform3(0.05f64..3.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [2, 1, 3];
        let (x, y, z) = (random_input(&mut rng, &dims), random_input(&mut rng, &dims), random_input(&mut rng, &dims));
        let (xy, sxy) = convolve_inputs(&x, s[0], &y, s[1]).unwrap();
        let (left, sl) = convolve_inputs(&xy, sxy, &z, s[2]).unwrap();
        let (yz, syz) = convolve_inputs(&y, s[1], &z, s[2]).unwrap();
        let (right, sr) = convolve_inputs(&x, s[0], &yz, syz).unwrap();
        prop_assert!((sl - sr).abs() < 1e-12 * sl);
        for j in 0..dims.len() {
            // kernels stand for exp(-pi s^-2 <A z, z>); compare covariances s^2 A^-1
            let cl = linalg::spd_inverse(left.block(j)).unwrap() * (sl * sl);
            let cr = linalg::spd_inverse(right.block(j)).unwrap() * (sr * sr);
            prop_assert!(rel(&cl, &cr) < 1e-12);
        }
    }

    #[test]
    fn image_dims_match_ranks_and_complements_agree(d in 0usize..5, seed in any::<u64>(), k in 0usize..4, coords in any::<bool>()) {
        let datum = datum(d);
        let n = datum.n();
        let k = k.min(n);
        let basis = if coords {
            DMatrix::identity(n, n).columns(0, k).into_owned()
        } else {
            let a = random_input(&mut ChaCha8Rng::seed_from_u64(seed), &[n]);
            a.block(0).columns(0, k).into_owned()
        };
        let r = check_subspace(&datum, &basis).unwrap();
        for (j, l) in datum.maps().iter().enumerate() {
            let expected = if k == 0 { 0 } else { linalg::rank(&(l * &basis)) };
            prop_assert_eq!(r.image_dims[j], expected);
        }
        if k > 0 && k < n {
            let c = check_subspace(&datum, &linalg::orthogonal_complement(&linalg::column_space(&basis))).unwrap();
            prop_assert_eq!(r.critical, c.critical);
        }
    }

    #[test]
    fn chain_never_exceeds_bound(tau in 0.001f64..0.999, k in 1usize..200, beta in 0.01f64..=1.0) {
        prop_assert!(chain_composition(tau, k, beta).unwrap().holds());
    }

    #[test]
    fn fitted_beta_covers_its_rows(rows in prop::collection::vec((0.01f64..0.9, 0.5f64..1.8), 1..6)) {
        if let Some(beta) = fit_beta(&rows) {
            prop_assert!(beta > 0.0 && beta <= 1.0);
            for (tau, ratio) in rows {
                prop_assert!(ratio <= (1.0 + tau.powf(beta)) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn search_is_deterministic(d in 0usize..5) {
        let datum = datum(d);
        let cfg = SearchConfig::default();
        let a = near_extremiser_search(&datum, &cfg);
        let b = near_extremiser_search(&datum, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
                prop_assert_eq!(a.input.max_abs_diff(&b.input), 0.0);
            }
            (a, b) => prop_assert_eq!(format!("{a:?}"), format!("{b:?}")),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn functional_is_homogeneous_and_scale_invariant(
        d in 0usize..3,
        seed in 0u64..1000,
        c in 0.1f64..10.0,
        lambda in 0.5f64..2.0,
    ) {
        let datum = linear_catalog(["holder-1d", "loomis-whitney-2d", "young-2-3"][d]).unwrap();
        let cfg = QuadratureConfig::default();
        let inputs: Vec<GaussianMixture> = datum
            .target_dims()
            .iter()
            .enumerate()
            .map(|(j, &k)| seeded_mixture(seed * 7 + j as u64, k, 2))
            .collect();
        let base = bl_functional_numeric(&datum, &inputs, &cfg).unwrap();
        let mut weighted = inputs.clone();
        weighted[0] = rescaled(&inputs[0], c, 1.0);
        let w = bl_functional_numeric(&datum, &weighted, &cfg).unwrap();
        prop_assert!((w.value / base.value - 1.0).abs() < 1e-10);
        let dilated: Vec<GaussianMixture> = inputs.iter().map(|f| rescaled(f, 1.0, lambda)).collect();
        let s = bl_functional_numeric(&datum, &dilated, &cfg).unwrap();
        let tol = 4.0 * (base.error_estimate + s.error_estimate) / base.value + 1e-9;
        prop_assert!((s.value / base.value - 1.0).abs() < tol);
    }
}
