mod common;

use common::{bessel_i, dense_laplacian, random_hypergraph, rel_err};
use hgwrec::hypergraph::laplacian;
use hgwrec::sparse::CsrMatrix;
use hgwrec::spectral::{
    apply_poly_filter, build_filter_bank_with_bound, chebyshev_coeffs, chebyshev_coeffs_direct, chebyshev_coeffs_fn,
    exact_wavelet, spectrum_bound, BankConfig, ExactSpectrum, Kernel, ORACLE_CAP,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poly_matrix(l: &CsrMatrix, g_max: f64, tau: &[f64]) -> DMatrix<f64> {
    apply_poly_filter(l, g_max, tau, &DMatrix::identity(l.n(), l.n())).unwrap()
}

#[test]
fn bessel_series_coefficients() {
    let tau = chebyshev_coeffs_fn(|x| (-x).exp(), 3, 50).unwrap();
    let expected = [1.266066, -1.130318, 0.271495, -0.044337];
    for (j, (&t, &e)) in tau.iter().zip(&expected).enumerate() {
        let oracle = if j == 0 { bessel_i(0, 1.0) } else { 2.0 * (-1f64).powi(j as i32) * bessel_i(j as u32, 1.0) };
        assert!((t - oracle).abs() < 1e-10, "tau_{j} = {t}, oracle {oracle}");
        assert!((t - e).abs() < 1e-6);
    }
}

#[test]
fn heat_kernel_pullback_is_shifted_exponential() {
    // κ·g_max/2 = 1 turns the kernel into e^{-(x+1)}, i.e. e^{-1} times the Bessel series
    let tau = chebyshev_coeffs(Kernel::Heat, 1.0, 4, 50, 2.0).unwrap();
    for (j, &t) in tau.iter().enumerate() {
        let oracle = if j == 0 { bessel_i(0, 1.0) } else { 2.0 * (-1f64).powi(j as i32) * bessel_i(j as u32, 1.0) };
        assert!((t - (-1f64).exp() * oracle).abs() < 1e-10);
    }
}

#[test]
fn fft_matches_direct_summation() {
    for &(kappa, g_max) in &[(0.3, 2.0), (1.0, 4.0), (2.5, 1.6)] {
        for kernel in [Kernel::Heat, Kernel::InverseHeat] {
            let f = |x: f64| kernel.eval(kappa * g_max * (x + 1.0) / 2.0);
            let fast = chebyshev_coeffs_fn(f, 50, 50).unwrap();
            let slow = chebyshev_coeffs_direct(f, 50, 50).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn spectrum_bound_examples() {
    let d = CsrMatrix::from_triplets(2, [(1, 1, 2.0)]);
    assert!((spectrum_bound(&d, 100) - 2.02).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.random_range(5..40);
        let h = random_hypergraph(n, &mut rng);
        let l = dense_laplacian(&h);
        let lam_max = ExactSpectrum::of(&l).eigenvalues.last().copied().unwrap();
        let est = spectrum_bound(&CsrMatrix::from_dense(&l), 100) / 1.01;
        assert!((est - lam_max).abs() <= 0.01 * lam_max, "{est} vs {lam_max}");
    }
}

#[test]
fn path_graph_wavelet_matches_hand_assembly() {
    let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
    let s3 = 3f64.sqrt();
    let s2 = 2f64.sqrt();
    let s6 = 6f64.sqrt();
    // eigenpairs 0, 1, 3 of the 3-node path
    let u = DMatrix::from_row_slice(
        3,
        3,
        &[1.0 / s3, 1.0 / s2, 1.0 / s6, 1.0 / s3, 0.0, -2.0 / s6, 1.0 / s3, -1.0 / s2, 1.0 / s6],
    );
    let g = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, (-1f64).exp(), (-3f64).exp()]));
    let hand = &u * g * u.transpose();
    let psi = exact_wavelet(&ExactSpectrum::of(&l), Kernel::Heat, 1.0, ORACLE_CAP).unwrap();
    assert!((psi - hand).norm() < 1e-12);
}

#[test]
fn exact_inverse_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let n = rng.random_range(3..30);
        let l = dense_laplacian(&random_hypergraph(n, &mut rng));
        let spec = ExactSpectrum::of(&l);
        let lam_max = spec.eigenvalues.last().copied().unwrap().max(1.0);
        let kappa = rng.random_range(0.1..4.0) / lam_max;
        let f = exact_wavelet(&spec, Kernel::Heat, kappa, ORACLE_CAP).unwrap();
        let i = exact_wavelet(&spec, Kernel::InverseHeat, kappa, ORACLE_CAP).unwrap();
        let err = (f * i - DMatrix::identity(n, n)).norm();
        assert!(err < 1e-10, "n {n} err {err:e}");
    }
}

#[test]
fn chebyshev_matches_exact_at_order_twenty() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let n = rng.random_range(4..=64);
        let h = random_hypergraph(n, &mut rng);
        let lap = laplacian(&h).unwrap();
        let g_max = spectrum_bound(&lap.laplacian, 200);
        let spec = ExactSpectrum::of(&lap.laplacian.to_dense());
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        for kg in [1.0, 2.5, 4.0] {
            let kappa = kg / g_max;
            let tau = chebyshev_coeffs(Kernel::Heat, kappa, 20, 50, g_max).unwrap();
            let approx = apply_poly_filter(&lap.laplacian, g_max, &tau, &x).unwrap();
            let exact = exact_wavelet(&spec, Kernel::Heat, kappa, ORACLE_CAP).unwrap() * &x;
            assert!(rel_err(&approx, &exact) < 1e-6);
        }
    }
}

#[test]
fn approximation_error_decreases_with_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let n = rng.random_range(8..=64);
        let lap = laplacian(&random_hypergraph(n, &mut rng)).unwrap();
        let g_max = spectrum_bound(&lap.laplacian, 200);
        let exact = exact_wavelet(&ExactSpectrum::of(&lap.laplacian.to_dense()), Kernel::Heat, 2.0 / g_max, ORACLE_CAP).unwrap();
        let errs: Vec<f64> = (1..=12)
            .map(|p| {
                let tau = chebyshev_coeffs(Kernel::Heat, 2.0 / g_max, p, 50, g_max).unwrap();
                rel_err(&poly_matrix(&lap.laplacian, g_max, &tau), &exact)
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    }
}

#[test]
fn constant_vector_is_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 20;
    let lap = laplacian(&random_hypergraph(n, &mut rng)).unwrap();
    let g_max = spectrum_bound(&lap.laplacian, 200);
    let ones = DMatrix::from_element(n, 1, 1.0);
    for p in [10, 15, 20] {
        let tau = chebyshev_coeffs(Kernel::Heat, 1.5 / g_max, p, 50, g_max).unwrap();
        let y = apply_poly_filter(&lap.laplacian, g_max, &tau, &ones).unwrap();
        assert!((y - &ones).amax() < 1e-6);
    }
}

#[test]
fn bank_composition_is_near_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5 {
        let n = rng.random_range(4..=64);
        let lap = laplacian(&random_hypergraph(n, &mut rng)).unwrap();
        let g_max = spectrum_bound(&lap.laplacian, 200);
        let bank = build_filter_bank_with_bound(
            g_max,
            &BankConfig {
                order: 20,
                ..BankConfig::default()
            },
        )
        .unwrap();
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        for s in 0..bank.scales.len() {
            let inv = apply_poly_filter(&lap.laplacian, g_max, &bank.inverse[s], &x).unwrap();
            let back = apply_poly_filter(&lap.laplacian, g_max, &bank.forward[s], &inv).unwrap();
            assert!(rel_err(&back, &x) < 1e-3);
        }
    }
}

#[test]
fn scale_grid_rules() {
    let one = build_filter_bank_with_bound(2.0, &BankConfig { scales: 1, ..BankConfig::default() }).unwrap();
    assert_eq!(one.scales, vec![0.5]);
    let four = build_filter_bank_with_bound(2.0, &BankConfig::default()).unwrap();
    assert_eq!(four.scales.len(), 4);
    assert!((four.scales[0] - 0.5).abs() < 1e-15);
    assert!(four.scales.windows(2).all(|w| w[1] > w[0]));
    let ratios: Vec<f64> = four.scales.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.windows(2).all(|r| (r[0] - r[1]).abs() < 1e-12));
}

proptest! {
    #[test]
    fn filter_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..20);
        let lap = laplacian(&random_hypergraph(n, &mut rng)).unwrap();
        let g_max = spectrum_bound(&lap.laplacian, 50);
        let tau: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let z = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let f = |v: &DMatrix<f64>| apply_poly_filter(&lap.laplacian, g_max, &tau, v).unwrap();
        let lhs = f(&(&x * alpha + &z * beta));
        let rhs = f(&x) * alpha + f(&z) * beta;
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }
}
