mod common;

use common::{dense_laplacian, random_hypergraph};
use hgwrec::hypergraph::laplacian;
use hgwrec::spectral::{build_filter_bank, BankConfig, ChebyshevFilters, ExactFilters, ExactSpectrum, GraphFilters};
use hgwrec::wavenet::{backward, forward, Activation, WaveConvParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn path3() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0])
}

fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn path_graph_matches_dense_composition() {
    let s2 = 2f64.sqrt();
    let s3 = 3f64.sqrt();
    let s6 = 6f64.sqrt();
    let u = DMatrix::from_row_slice(3, 3, &[1.0 / s3, 1.0 / s2, 1.0 / s6, 1.0 / s3, 0.0, -2.0 / s6, 1.0 / s3, -1.0 / s2, 1.0 / s6]);
    let lambda = [0.0, 1.0, 3.0];
    let scales = [0.4, 1.1];
    let op = |kappa: f64, sign: f64| {
        let g = DVector::from_iterator(3, lambda.iter().map(|l| (-sign * kappa * l).exp()));
        &u * DMatrix::from_diagonal(&g) * u.transpose()
    };
    let filters = ExactFilters::new(&ExactSpectrum::of(&path3()), &scales).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for activation in [Activation::Tanh, Activation::Relu, Activation::Identity] {
        let params = WaveConvParams {
            mix: vec![random_matrix(2, 4, &mut rng)],
            spectral: vec![DMatrix::from_fn(3, 2, |_, _| rng.random_range(0.5..1.5))],
            activation,
        };
        let x = random_matrix(3, 2, &mut rng);
        let mut mid = DMatrix::zeros(3, 2);
        for (s, &k) in scales.iter().enumerate() {
            let g = DMatrix::from_diagonal(&params.spectral[0].column(s).into_owned());
            mid += op(k, 1.0) * g * op(k, -1.0) * &x;
        }
        let expected = (mid / 2.0 * &params.mix[0]).map(|v| activation.apply(v));
        let (y, _) = forward(&x, &filters, &params.view(), false).unwrap();
        assert!((y - expected).amax() < 1e-8);
    }
}

fn chebyshev_filters(n: usize, seed: u64) -> ChebyshevFilters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lap = laplacian(&random_hypergraph(n, &mut rng)).unwrap();
    let bank = build_filter_bank(&lap.laplacian, &BankConfig { scales: 3, order: 6, ..BankConfig::default() }).unwrap();
    ChebyshevFilters { laplacian: lap.laplacian, bank }
}

#[test]
fn finite_differences_on_all_parameters_and_input() {
    let filters = chebyshev_filters(7, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let params = WaveConvParams::init(&[3, 4, 2], 7, 3, Activation::Tanh, &mut rng);
    let x = random_matrix(7, 3, &mut rng);
    let weights = random_matrix(7, 2, &mut rng);
    let objective = |p: &WaveConvParams, x: &DMatrix<f64>| {
        let (y, _) = forward(x, &filters, &p.view(), false).unwrap();
        y.component_mul(&weights).sum()
    };
    let (_, cache) = forward(&x, &filters, &params.view(), true).unwrap();
    let (dx, grads) = backward(&weights, &cache.unwrap(), &filters, &params.view()).unwrap();
    let h = 1e-5;
    let rel = |a: &DMatrix<f64>, n: &DMatrix<f64>| (a - n).norm() / a.norm().max(n.norm()).max(1e-10);

    let mut num_dx = DMatrix::zeros(7, 3);
    for i in 0..x.len() {
        let (mut up, mut down) = (x.clone(), x.clone());
        up[i] += h;
        down[i] -= h;
        num_dx[i] = (objective(&params, &up) - objective(&params, &down)) / (2.0 * h);
    }
    assert!(rel(&dx, &num_dx) < 1e-4);

    for l in 0..2 {
        for (analytic, which) in [(&grads.mix[l], 0), (&grads.spectral[l], 1)] {
            let mut numeric = DMatrix::zeros(analytic.nrows(), analytic.ncols());
            for i in 0..analytic.len() {
                let bump = |delta: f64| {
                    let mut p = params.clone();
                    if which == 0 {
                        p.mix[l][i] += delta;
                    } else {
                        p.spectral[l][i] += delta;
                    }
                    objective(&p, &x)
                };
                numeric[i] = (bump(h) - bump(-h)) / (2.0 * h);
            }
            assert!(rel(analytic, &numeric) < 1e-4, "layer {l} tensor {which}");
        }
    }
}

#[test]
fn backward_is_linear_in_upstream_gradient() {
    let filters = chebyshev_filters(9, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let params = WaveConvParams::init(&[2, 3], 9, 3, Activation::Identity, &mut rng);
    let x = random_matrix(9, 2, &mut rng);
    let g = random_matrix(9, 3, &mut rng);
    let (_, cache) = forward(&x, &filters, &params.view(), true).unwrap();
    let cache = cache.unwrap();
    let (dx1, g1) = backward(&g, &cache, &filters, &params.view()).unwrap();
    let (dx2, g2) = backward(&(&g * 2.0), &cache, &filters, &params.view()).unwrap();
    assert!((dx2 - dx1 * 2.0).amax() < 1e-12);
    assert!((&g2.mix[0] - &g1.mix[0] * 2.0).amax() < 1e-12);
    assert!((&g2.spectral[0] - &g1.spectral[0] * 2.0).amax() < 1e-12);
}

#[test]
fn node_relabeling_is_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let n = 8;
    let l = dense_laplacian(&random_hypergraph(n, &mut rng));
    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..n).collect();
        p.rotate_left(3);
        p.swap(0, 5);
        p
    };
    let pm = DMatrix::from_fn(n, n, |r, c| if perm[r] == c { 1.0 } else { 0.0 });
    let lp = &pm * &l * pm.transpose();
    let scales = [0.3, 0.8];
    let f = ExactFilters::new(&ExactSpectrum::of(&l), &scales).unwrap();
    let fp = ExactFilters::new(&ExactSpectrum::of(&lp), &scales).unwrap();
    let params = WaveConvParams::init(&[2, 3], n, 2, Activation::Tanh, &mut rng);
    let mut permuted = params.clone();
    permuted.spectral[0] = &pm * &params.spectral[0];
    let x = random_matrix(n, 2, &mut rng);
    let (y, _) = forward(&x, &f, &params.view(), false).unwrap();
    let (yp, _) = forward(&(&pm * &x), &fp, &permuted.view(), false).unwrap();
    assert!((yp - &pm * y).amax() < 1e-10);
    assert_eq!(f.n_scales(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_activation_superposes(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..12);
        let filters = chebyshev_filters(n, seed);
        let params = WaveConvParams::init(&[2, 2], n, 3, Activation::Identity, &mut rng);
        let x = random_matrix(n, 2, &mut rng);
        let z = random_matrix(n, 2, &mut rng);
        let f = |v: &DMatrix<f64>| forward(v, &filters, &params.view(), false).unwrap().0;
        let lhs = f(&(&x * a + &z * b));
        let rhs = f(&x) * a + f(&z) * b;
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }
}
