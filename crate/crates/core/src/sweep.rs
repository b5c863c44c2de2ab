//! Noise-rate sweeps: the full model against its no-wavelet ablation on
//! worlds that differ only in the injected noise.

use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::error::Result;
use crate::model::{self, ModelConfig};
use crate::pipeline;
use crate::recsys;
use crate::synthgen::{noise_sweep, GenConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub world: GenConfig,
    pub run: RunConfig,
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    /// A small world and model that finish a 7 × 5 sweep in minutes on one core.
    pub fn desk() -> Self {
        let world = GenConfig {
            n_users: 600,
            n_jobs: 100,
            n_topics: 10,
            vocab_size: 500,
            ..GenConfig::default()
        };
        let run = RunConfig {
            k_topics: 16,
            job_ratio: 10.0,
            user_ratio: 200.0,
            hidden: 64,
            emb_dim: 64,
            epochs: 30,
            batch_size: 32,
            ..RunConfig::default()
        };
        SweepConfig {
            world,
            run,
            rhos: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub rho: f64,
    pub full_hit_ratio: f64,
    pub full_mrr: f64,
    pub ablated_hit_ratio: f64,
    pub ablated_mrr: f64,
}

/// Test-split H@k and M@k of one trained variant.
fn fit_and_score(ds: &crate::Dataset, prep: &pipeline::Prepared, run: &RunConfig) -> Result<(f64, f64)> {
    let out = model::train(ds, prep, run)?;
    let (recs, truth) = recsys::evaluate_test(&out.params, prep, ds, &ModelConfig::from(run), run.min_prefix, run.k)?;
    Ok((recsys::hit_ratio(&recs, &truth, run.k)?, recsys::mrr(&recs, &truth, run.k)?))
}

/// All noise rates for one seed. The world and run share the seed.
pub fn run_seed(cfg: &SweepConfig, seed: u64) -> Result<Vec<SweepRow>> {
    let world = GenConfig {
        seed,
        ..cfg.world.clone()
    };
    let mut rows = Vec::with_capacity(cfg.rhos.len());
    for (rho, generated) in noise_sweep(&world, &cfg.rhos)? {
        let ds = generated.to_dataset()?;
        let run = RunConfig {
            seed,
            use_wavelet: true,
            ..cfg.run.clone()
        };
        let prep = pipeline::prepare(&ds, &run)?;
        let (full_hit_ratio, full_mrr) = fit_and_score(&ds, &prep, &run)?;
        let ablated = RunConfig {
            use_wavelet: false,
            ..run
        };
        let (ablated_hit_ratio, ablated_mrr) = fit_and_score(&ds, &prep, &ablated)?;
        log::info!("seed {seed} rho {rho}: full H@k {full_hit_ratio:.4}, ablated H@k {ablated_hit_ratio:.4}");
        rows.push(SweepRow {
            seed,
            rho,
            full_hit_ratio,
            full_mrr,
            ablated_hit_ratio,
            ablated_mrr,
        });
    }
    Ok(rows)
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        rows.extend(run_seed(cfg, seed)?);
    }
    Ok(rows)
}

pub fn rows_csv(rows: &[SweepRow], k: usize) -> String {
    let mut s = format!("seed,rho,full_H@{k},full_M@{k},ablated_H@{k},ablated_M@{k}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.10},{:.10},{:.10},{:.10}",
            r.seed, r.rho, r.full_hit_ratio, r.full_mrr, r.ablated_hit_ratio, r.ablated_mrr
        );
    }
    s
}

/// Per-seed drop in H@k between two noise rates, `(full, ablated)`.
pub fn drops(rows: &[SweepRow], from: f64, to: f64) -> Vec<(u64, f64, f64)> {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    seeds
        .into_iter()
        .filter_map(|seed| {
            let at = |rho: f64| rows.iter().find(|r| r.seed == seed && r.rho == rho);
            let (a, b) = (at(from)?, at(to)?);
            Some((seed, a.full_hit_ratio - b.full_hit_ratio, a.ablated_hit_ratio - b.ablated_hit_ratio))
        })
        .collect()
}
