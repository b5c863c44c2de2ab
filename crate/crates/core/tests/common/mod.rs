#![allow(dead_code)]

use hgwrec::hypergraph::{build_group_signal, laplacian, Hypergraph};
use hgwrec::model::{Example, ModelConfig};
use hgwrec::pipeline::{GroupGraph, ModelInputs};
use hgwrec::spectral::{build_filter_bank, BankConfig, ChebyshevFilters};
use hgwrec::wavenet::Activation;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Six job groups (one job each), three labels, one user group, windows of three.
pub fn micro_instance(seed: u64) -> (ModelInputs, Vec<Example>, ModelConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let k_topics = 2;
    let sessions = vec![vec![0, 1, 2, 3], vec![3, 4, 5, 1], vec![2, 5, 0]];
    let h = Hypergraph::from_sessions(n, &sessions, true);
    let lap = laplacian(&h).unwrap();
    let bank = build_filter_bank(
        &lap.laplacian,
        &BankConfig {
            scales: 2,
            order: 20,
            ..BankConfig::default()
        },
    )
    .unwrap();
    let job_topics: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let a: f64 = rng.random_range(0.05..0.95);
            vec![a, 1.0 - a]
        })
        .collect();
    let node_jobs: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
    let counts: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let signal = build_group_signal(&node_jobs, &job_topics, &counts).unwrap();
    let inputs = ModelInputs {
        job_topics: DMatrix::from_fn(k_topics, n, |z, j| job_topics[j][z]),
        job_group: (0..n).collect(),
        job_label: (0..n).map(|j| j % 3).collect(),
        n_labels: 3,
        graphs: vec![GroupGraph {
            hypergraph: h,
            filters: Box::new(ChebyshevFilters {
                laplacian: lap.laplacian,
                bank,
            }),
            signal,
        }],
    };
    let examples = vec![
        Example { group: 0, window: vec![0, 1, 2], target: 0 },
        Example { group: 0, window: vec![3, 4, 5], target: 1 },
        Example { group: 0, window: vec![5, 1, 1], target: 2 },
    ];
    let cfg = ModelConfig {
        hidden: 4,
        emb_dim: 3,
        layers: 1,
        activation: Activation::Tanh,
        window: 3,
        use_wavelet: true,
    };
    (inputs, examples, cfg)
}

/// Hypergraph over `n` nodes from a few random sessions (transitions included).
pub fn random_hypergraph(n: usize, rng: &mut impl Rng) -> Hypergraph {
    let n_sessions = rng.random_range(1..=n.max(2));
    let sessions: Vec<Vec<usize>> = (0..n_sessions)
        .map(|_| {
            let len = rng.random_range(1..=6.min(n).max(1));
            (0..len).map(|_| rng.random_range(0..n)).collect()
        })
        .collect();
    Hypergraph::from_sessions(n, &sessions, true)
}

/// `Dv − H W De⁻¹ Hᵀ` transcribed with dense matrices.
pub fn dense_laplacian(h: &Hypergraph) -> DMatrix<f64> {
    let inc = h.incidence();
    let m = h.n_edges();
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(m, h.edges.iter().map(|e| e.weight)));
    let de_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        m,
        (0..m).map(|e| 1.0 / inc.column(e).sum()),
    ));
    let dv = DMatrix::from_diagonal(&(&inc * &w).column_sum());
    dv - &inc * w * de_inv * inc.transpose()
}

/// Modified Bessel function of the first kind by its power series.
pub fn bessel_i(order: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half.powi(order as i32) / (1..=order).map(f64::from).product::<f64>();
    let mut sum = term;
    for m in 1..200 {
        term *= half * half / (m as f64 * (m as f64 + order as f64));
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// One pLSA EM cycle written out term by term over a dense count matrix
/// `f[d][w]`. Takes and returns `(P(w|z) as [z][w], P(z|d) as [d][z])`.
pub fn brute_force_em_cycle(f: &[Vec<f64>], pwz: &[Vec<f64>], pzd: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (nd, nw, k) = (f.len(), f[0].len(), pwz.len());
    let mut post = vec![vec![vec![0.0; k]; nw]; nd];
    for d in 0..nd {
        for w in 0..nw {
            let denom: f64 = (0..k).map(|z| pwz[z][w] * pzd[d][z]).sum();
            for z in 0..k {
                post[d][w][z] = pwz[z][w] * pzd[d][z] / denom;
            }
        }
    }
    let mut new_pwz = vec![vec![0.0; nw]; k];
    for z in 0..k {
        let total: f64 = (0..nd).flat_map(|d| (0..nw).map(move |w| (d, w))).map(|(d, w)| f[d][w] * post[d][w][z]).sum();
        for w in 0..nw {
            new_pwz[z][w] = (0..nd).map(|d| f[d][w] * post[d][w][z]).sum::<f64>() / total;
        }
    }
    let mut new_pzd = vec![vec![0.0; k]; nd];
    for d in 0..nd {
        let len: f64 = f[d].iter().sum();
        for z in 0..k {
            new_pzd[d][z] = (0..nw).map(|w| f[d][w] * post[d][w][z]).sum::<f64>() / len;
        }
    }
    (new_pwz, new_pzd)
}

/// `Σ_d Σ_w f(d,w) log(P(d) Σ_z P(w|z) P(z|d))` with `P(d)` the token share.
pub fn brute_force_log_likelihood(f: &[Vec<f64>], pwz: &[Vec<f64>], pzd: &[Vec<f64>]) -> f64 {
    let total: f64 = f.iter().flatten().sum();
    let mut l = 0.0;
    for (d, row) in f.iter().enumerate() {
        let pd = row.iter().sum::<f64>() / total;
        for (w, &c) in row.iter().enumerate() {
            if c > 0.0 {
                let s: f64 = (0..pwz.len()).map(|z| pwz[z][w] * pzd[d][z]).sum();
                l += c * (pd * s).ln();
            }
        }
    }
    l
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// A small generated world with a run config sized to train in well under a second per epoch.
pub fn small_world(seed: u64) -> (hgwrec::Dataset, hgwrec::pipeline::Prepared, hgwrec::RunConfig) {
    let gen = hgwrec::synthgen::GenConfig {
        n_users: 80,
        n_jobs: 40,
        n_topics: 4,
        vocab_size: 120,
        seed,
        ..hgwrec::synthgen::GenConfig::default()
    };
    let (ds, _) = hgwrec::synthgen::generate(&gen).unwrap();
    let cfg = hgwrec::RunConfig {
        seed,
        k_topics: 6,
        job_ratio: 8.0,
        user_ratio: 40.0,
        hidden: 8,
        emb_dim: 8,
        window: 10,
        epochs: 10,
        batch_size: 16,
        ..hgwrec::RunConfig::default()
    };
    let prep = hgwrec::pipeline::prepare(&ds, &cfg).unwrap();
    (ds, prep, cfg)
}

/// Per-tensor relative error between analytic gradients and central differences (h = 1e-5).
pub fn gradient_errors(seed: u64, use_wavelet: bool) -> Vec<(String, f64)> {
    let (inputs, examples, mut cfg) = micro_instance(seed);
    cfg.use_wavelet = use_wavelet;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let params = hgwrec::model::ModelParams::init(&inputs, &cfg, &mut rng);
    let (loss, grads) = hgwrec::model::batch_loss_grad(&params, &inputs, &cfg, &examples).unwrap();
    let direct = hgwrec::model::batch_loss(&params, &inputs, &cfg, &examples).unwrap();
    assert!((loss - direct).abs() < 1e-12, "{loss} vs {direct}");

    let h = 1e-5;
    let names = params.names();
    let analytic = grads.slices();
    let mut out = Vec::new();
    for (t, name) in names.iter().enumerate() {
        let len = analytic[t].len();
        let mut numeric = vec![0.0; len];
        for i in 0..len {
            let mut p = params.clone();
            p.slices_mut()[t][i] += h;
            let up = hgwrec::model::batch_loss(&p, &inputs, &cfg, &examples).unwrap();
            p.slices_mut()[t][i] -= 2.0 * h;
            let down = hgwrec::model::batch_loss(&p, &inputs, &cfg, &examples).unwrap();
            numeric[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic[t].iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic[t].iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        out.push((name.clone(), diff / na.max(nn).max(1e-10)));
    }
    out
}
