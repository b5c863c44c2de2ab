//! The full recommender: input projection, per-group wavelet layers, job
//! embeddings, session RNN and fusion head, trained end to end with Adam.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binfmt::{read_file, Reader, Writer};
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::personalize::{
    concat, fuse, fuse_backward, rnn_backward, rnn_forward, rnn_output, rnn_step, row_loss_grad, softmax, Adam, AdamConfig, FusionHead,
    RnnParams,
};
use crate::pipeline::{ModelInputs, Prepared};
use crate::recsys;
use crate::wavenet::{self, glorot, Activation, ForwardCache, WaveConvParams};

const CHECKPOINT_MAGIC: &[u8; 8] = b"HGWCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;
/// Examples per gradient work unit. Fixed so the reduction order does not
/// depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub emb_dim: usize,
    pub layers: usize,
    pub activation: Activation,
    pub window: usize,
    pub use_wavelet: bool,
}

impl From<&RunConfig> for ModelConfig {
    fn from(c: &RunConfig) -> Self {
        ModelConfig {
            hidden: c.hidden,
            emb_dim: c.emb_dim,
            layers: c.layers,
            activation: c.activation,
            window: c.window,
            use_wavelet: c.use_wavelet,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `(K + 1) × d`, shared by all groups.
    pub input_proj: DMatrix<f64>,
    /// `d_emb × K`
    pub emb: DMatrix<f64>,
    pub rnn: RnnParams,
    pub fusion: FusionHead,
    /// One wavelet stack per user group.
    pub wave: Vec<WaveConvParams>,
}

impl ModelParams {
    pub fn init(inputs: &ModelInputs, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.hidden;
        let input_proj = glorot(inputs.signal_dim(), d, rng);
        let emb = glorot(cfg.emb_dim, inputs.n_topics(), rng);
        let rnn = RnnParams {
            w_a: glorot(d, d, rng),
            w_b: glorot(d, cfg.emb_dim, rng),
            w_c: glorot(d, d, rng),
        };
        let fusion = FusionHead {
            weight: glorot(inputs.n_labels, 2 * d, rng),
            bias: DVector::zeros(inputs.n_labels),
        };
        let dims = vec![d; cfg.layers + 1];
        let wave = inputs
            .graphs
            .iter()
            .map(|g| WaveConvParams::init(&dims, g.filters.n_nodes(), g.filters.n_scales(), cfg.activation, rng))
            .collect();
        ModelParams {
            input_proj,
            emb,
            rnn,
            fusion,
            wave,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        ModelParams {
            input_proj: z(&self.input_proj),
            emb: z(&self.emb),
            rnn: RnnParams {
                w_a: z(&self.rnn.w_a),
                w_b: z(&self.rnn.w_b),
                w_c: z(&self.rnn.w_c),
            },
            fusion: FusionHead {
                weight: z(&self.fusion.weight),
                bias: DVector::zeros(self.fusion.bias.len()),
            },
            wave: self
                .wave
                .iter()
                .map(|w| WaveConvParams {
                    mix: w.mix.iter().map(z).collect(),
                    spectral: w.spectral.iter().map(z).collect(),
                    activation: w.activation,
                })
                .collect(),
        }
    }

    /// Tensor names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = ["input_proj", "emb", "rnn.w_a", "rnn.w_b", "rnn.w_c", "fusion.weight", "fusion.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (g, w) in self.wave.iter().enumerate() {
            for l in 0..w.mix.len() {
                n.push(format!("wave.{g}.{l}.mix"));
                n.push(format!("wave.{g}.{l}.spectral"));
            }
        }
        n
    }

    /// `(rows, cols)` of every tensor in canonical order.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = vec![
            self.input_proj.shape(),
            self.emb.shape(),
            self.rnn.w_a.shape(),
            self.rnn.w_b.shape(),
            self.rnn.w_c.shape(),
            self.fusion.weight.shape(),
            (self.fusion.bias.len(), 1),
        ];
        for w in &self.wave {
            for (m, sp) in w.mix.iter().zip(&w.spectral) {
                s.push(m.shape());
                s.push(sp.shape());
            }
        }
        s
    }

    /// Column-major data of every tensor in canonical order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            self.input_proj.as_slice(),
            self.emb.as_slice(),
            self.rnn.w_a.as_slice(),
            self.rnn.w_b.as_slice(),
            self.rnn.w_c.as_slice(),
            self.fusion.weight.as_slice(),
            self.fusion.bias.as_slice(),
        ];
        for w in &self.wave {
            for (m, sp) in w.mix.iter().zip(&w.spectral) {
                v.push(m.as_slice());
                v.push(sp.as_slice());
            }
        }
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            self.input_proj.as_mut_slice(),
            self.emb.as_mut_slice(),
            self.rnn.w_a.as_mut_slice(),
            self.rnn.w_b.as_mut_slice(),
            self.rnn.w_c.as_mut_slice(),
            self.fusion.weight.as_mut_slice(),
            self.fusion.bias.as_mut_slice(),
        ];
        for w in &mut self.wave {
            for (m, sp) in w.mix.iter_mut().zip(w.spectral.iter_mut()) {
                v.push(m.as_mut_slice());
                v.push(sp.as_mut_slice());
            }
        }
        v
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// One training or evaluation instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub group: usize,
    /// Most recent jobs of the prefix, oldest first, at most `window` long.
    pub window: Vec<usize>,
    pub target: usize,
}

/// Last `window` entries of `prefix`.
pub fn window_of(prefix: &[usize], window: usize) -> Vec<usize> {
    prefix[prefix.len().saturating_sub(window)..].to_vec()
}

fn embed(params: &ModelParams, inputs: &ModelInputs, job: usize) -> DVector<f64> {
    &params.emb * inputs.job_topics.column(job)
}

/// `X^L`: mean of the group output rows over the window's job groups, with
/// multiplicity. Zero when the wavelet branch is disabled.
fn context(out: Option<&DMatrix<f64>>, inputs: &ModelInputs, window: &[usize], d: usize) -> DVector<f64> {
    let mut x = DVector::zeros(d);
    if let Some(out) = out {
        for &j in window {
            x += out.row(inputs.job_group[j]).transpose();
        }
        x /= window.len() as f64;
    }
    x
}

struct GroupForward {
    out: DMatrix<f64>,
    cache: Option<ForwardCache>,
}

fn group_forward(
    params: &ModelParams,
    inputs: &ModelInputs,
    cfg: &ModelConfig,
    needed: &[bool],
    train: bool,
) -> Result<Vec<Option<GroupForward>>> {
    if !cfg.use_wavelet {
        return Ok(needed.iter().map(|_| None).collect());
    }
    let runs = par::map_range(needed.len(), |g| -> Result<Option<GroupForward>> {
        if !needed[g] {
            return Ok(None);
        }
        let graph = &inputs.graphs[g];
        let projected = &graph.signal * &params.input_proj;
        let (out, cache) = wavenet::forward(&projected, graph.filters.as_ref(), &params.wave[g].view(), train)?;
        Ok(Some(GroupForward { out, cache }))
    });
    runs.into_iter().collect()
}

struct ChunkGrads {
    loss: f64,
    head: ModelParams,
    d_out: Vec<Option<DMatrix<f64>>>,
}

fn example_grads(
    params: &ModelParams,
    inputs: &ModelInputs,
    cfg: &ModelConfig,
    ex: &Example,
    out: Option<&DMatrix<f64>>,
    acc: &mut ChunkGrads,
) -> Result<()> {
    let embs: Vec<DVector<f64>> = ex.window.iter().map(|&j| embed(params, inputs, j)).collect();
    let trace = rnn_forward(&params.rnn, &embs)?;
    let x_l = context(out, inputs, &ex.window, cfg.hidden);
    let input = concat(&trace.output, &x_l);
    let scores = fuse(&params.fusion, &trace.output, &x_l)?;
    let (loss, d_scores) = row_loss_grad(&scores, ex.target);
    acc.loss += loss;
    let (g_fusion, d_input) = fuse_backward(&params.fusion, &input, &scores, &d_scores);
    acc.head.fusion.weight += g_fusion.weight;
    acc.head.fusion.bias += g_fusion.bias;
    let d = cfg.hidden;
    let d_y = d_input.rows(0, d).into_owned();
    let (g_rnn, d_emb) = rnn_backward(&params.rnn, &trace, &d_y);
    acc.head.rnn.w_a += g_rnn.w_a;
    acc.head.rnn.w_b += g_rnn.w_b;
    acc.head.rnn.w_c += g_rnn.w_c;
    for (de, &j) in d_emb.iter().zip(&ex.window) {
        acc.head.emb.ger(1.0, de, &inputs.job_topics.column(j), 1.0);
    }
    if out.is_some() {
        let d_xl = d_input.rows(d, d).into_owned() / ex.window.len() as f64;
        let d_out = acc.d_out[ex.group].as_mut().expect("group output gradient allocated");
        for &j in &ex.window {
            let mut row = d_out.row_mut(inputs.job_group[j]);
            row += d_xl.transpose();
        }
    }
    Ok(())
}

/// Mean loss over `examples` and its gradient with respect to every parameter.
pub fn batch_loss_grad(
    params: &ModelParams,
    inputs: &ModelInputs,
    cfg: &ModelConfig,
    examples: &[Example],
) -> Result<(f64, ModelParams)> {
    if examples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n_groups = inputs.graphs.len();
    let mut needed = vec![false; n_groups];
    for ex in examples {
        if ex.group >= n_groups || ex.window.is_empty() {
            return Err(Error::invalid("example has no window or an unknown group"));
        }
        if ex.target >= inputs.n_labels {
            return Err(Error::invalid(format!("target label {} out of range", ex.target)));
        }
        needed[ex.group] = true;
    }
    let forwards = group_forward(params, inputs, cfg, &needed, true)?;
    let template = params.zeros_like();
    let partials = par::map_chunks(examples, GRAD_CHUNK, |chunk| -> Result<ChunkGrads> {
        let mut acc = ChunkGrads {
            loss: 0.0,
            head: template.clone(),
            d_out: forwards
                .iter()
                .map(|f| f.as_ref().map(|f| DMatrix::zeros(f.out.nrows(), f.out.ncols())))
                .collect(),
        };
        for ex in chunk {
            let out = forwards[ex.group].as_ref().map(|f| &f.out);
            example_grads(params, inputs, cfg, ex, out, &mut acc)?;
        }
        Ok(acc)
    });
    let mut loss = 0.0;
    let mut grads = params.zeros_like();
    let mut d_out: Vec<Option<DMatrix<f64>>> = vec![None; n_groups];
    for p in partials {
        let p = p?;
        loss += p.loss;
        grads.add_assign(&p.head);
        for (acc, part) in d_out.iter_mut().zip(p.d_out) {
            if let Some(part) = part {
                match acc {
                    Some(a) => *a += part,
                    None => *acc = Some(part),
                }
            }
        }
    }
    let backs = par::map_range(n_groups, |g| -> Result<Option<(DMatrix<f64>, wavenet::WaveConvGrads)>> {
        match (&forwards[g], &d_out[g]) {
            (Some(f), Some(dy)) => {
                let cache = f.cache.as_ref().expect("training forward keeps its cache");
                let (dx, wg) = wavenet::backward(dy, cache, inputs.graphs[g].filters.as_ref(), &params.wave[g].view())?;
                Ok(Some((dx, wg)))
            }
            _ => Ok(None),
        }
    });
    for (g, b) in backs.into_iter().enumerate() {
        if let Some((dx, wg)) = b? {
            let signal = &inputs.graphs[g].signal;
            grads.input_proj += signal.transpose() * dx;
            grads.wave[g].mix = wg.mix;
            grads.wave[g].spectral = wg.spectral;
        }
    }
    let scale = 1.0 / examples.len() as f64;
    grads.scale(scale);
    Ok((loss * scale, grads))
}

/// Mean loss only, for finite-difference checks.
pub fn batch_loss(params: &ModelParams, inputs: &ModelInputs, cfg: &ModelConfig, examples: &[Example]) -> Result<f64> {
    let p = Predictor::new(params, inputs, cfg)?;
    let mut total = 0.0;
    for ex in examples {
        let probs = p.label_probs(ex.group, &ex.window)?;
        total += -probs[ex.target].max(crate::personalize::LOG_FLOOR).ln();
    }
    Ok(total / examples.len() as f64)
}

/// Inference-time view with group outputs and job representations cached.
pub struct Predictor<'a> {
    params: &'a ModelParams,
    inputs: &'a ModelInputs,
    cfg: ModelConfig,
    group_out: Vec<Option<DMatrix<f64>>>,
    /// `d × n_jobs`, unit-norm columns (zero columns stay zero).
    job_reps: DMatrix<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(params: &'a ModelParams, inputs: &'a ModelInputs, cfg: &ModelConfig) -> Result<Self> {
        let needed = vec![true; inputs.graphs.len()];
        let group_out = group_forward(params, inputs, cfg, &needed, false)?
            .into_iter()
            .map(|f| f.map(|f| f.out))
            .collect();
        // representation of a single-item session of each job
        let e = &params.emb * &inputs.job_topics;
        let o = (&params.rnn.w_b * e).map(f64::tanh);
        let mut job_reps = (&params.rnn.w_a * o).map(f64::tanh);
        for mut c in job_reps.column_iter_mut() {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
        }
        Ok(Predictor {
            params,
            inputs,
            cfg: cfg.clone(),
            group_out,
            job_reps,
        })
    }

    pub fn inputs(&self) -> &ModelInputs {
        self.inputs
    }

    pub fn window(&self) -> usize {
        self.cfg.window
    }

    /// Fused per-label scores in `(0, 1)` and the session representation `Y_T`.
    pub fn label_scores(&self, group: usize, window: &[usize]) -> Result<(DVector<f64>, DVector<f64>)> {
        if window.is_empty() {
            return Err(Error::invalid("empty session"));
        }
        let embs: Vec<DVector<f64>> = window.iter().map(|&j| embed(self.params, self.inputs, j)).collect();
        let trace = rnn_forward(&self.params.rnn, &embs)?;
        let scores = self.fused(group, window, &trace.output)?;
        Ok((scores, trace.output))
    }

    /// Row-softmax of the fused scores, as used by the training loss.
    pub fn label_probs(&self, group: usize, window: &[usize]) -> Result<DVector<f64>> {
        Ok(softmax(&self.label_scores(group, window)?.0))
    }

    fn fused(&self, group: usize, window: &[usize], y: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self
            .group_out
            .get(group)
            .ok_or_else(|| Error::invalid(format!("unknown user group {group}")))?;
        let x_l = context(out.as_ref(), self.inputs, window, self.cfg.hidden);
        fuse(&self.params.fusion, y, &x_l)
    }

    fn scores_with(&self, probs: &DVector<f64>, y: &DVector<f64>) -> Vec<f64> {
        let n = y.norm();
        let cos = if n > 0.0 {
            self.job_reps.tr_mul(&(y / n))
        } else {
            DVector::zeros(self.inputs.n_jobs())
        };
        (0..self.inputs.n_jobs())
            .map(|j| probs[self.inputs.job_label[j]] * (1.0 + cos[j]) / 2.0)
            .collect()
    }

    /// Score of every job: the fused score of its label times `(1 + cos) / 2`
    /// between `Y_T` and the job's representation.
    pub fn job_scores(&self, group: usize, window: &[usize]) -> Result<Vec<f64>> {
        let (probs, y) = self.label_scores(group, window)?;
        Ok(self.scores_with(&probs, &y))
    }

    /// Job scores after every prefix `jobs[..i]` for `i` in `from..jobs.len()`.
    /// Identical to calling [`Predictor::job_scores`] on each window, but the
    /// recurrence is advanced incrementally while the prefix fits the window.
    pub fn prefix_scores(&self, group: usize, jobs: &[usize], from: usize) -> Result<Vec<Vec<f64>>> {
        let from = from.max(1);
        let w = self.cfg.window;
        let mut o = DVector::zeros(self.params.rnn.hidden());
        let mut out = Vec::with_capacity(jobs.len().saturating_sub(from));
        for i in 1..jobs.len() {
            if i <= w {
                o = rnn_step(&self.params.rnn, &o, &embed(self.params, self.inputs, jobs[i - 1]));
            }
            if i < from {
                continue;
            }
            let window = &jobs[i.saturating_sub(w)..i];
            if i <= w {
                let y = rnn_output(&self.params.rnn, &o);
                let probs = self.fused(group, window, &y)?;
                out.push(self.scores_with(&probs, &y));
            } else {
                out.push(self.job_scores(group, window)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub k: usize,
    pub min_prefix: usize,
    pub seed: u64,
}

impl From<&RunConfig> for TrainConfig {
    fn from(c: &RunConfig) -> Self {
        TrainConfig {
            lr: c.lr,
            epochs: c.epochs,
            batch_size: c.batch_size,
            patience: c.patience,
            k: c.k,
            min_prefix: c.min_prefix,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub val_hit_ratio: f64,
    pub val_mrr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub adam: Adam,
    pub trace: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

pub fn metrics_csv(trace: &[EpochMetrics], k: usize) -> String {
    let mut s = format!("epoch,loss,val_H@{k},val_M@{k}\n");
    for m in trace {
        s.push_str(&format!("{},{:.10},{:.10},{:.10}\n", m.epoch, m.loss, m.val_hit_ratio, m.val_mrr));
    }
    s
}

/// One example per training session with a uniformly drawn cut point.
pub fn sample_examples(
    ds: &Dataset,
    sessions: &[usize],
    session_group: &[usize],
    inputs: &ModelInputs,
    window: usize,
    rng: &mut impl Rng,
) -> Vec<Example> {
    let mut out = Vec::new();
    for &s in sessions {
        let jobs: Vec<usize> = ds.sessions[s].jobs().collect();
        if jobs.len() < 2 {
            continue;
        }
        let cut = rng.random_range(1..jobs.len());
        out.push(Example {
            group: session_group[s],
            window: window_of(&jobs[..cut], window),
            target: inputs.job_label[jobs[cut]],
        });
    }
    out
}

pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, adam: &mut Adam) -> Result<()> {
    let names = params.names();
    let g = grads.slices();
    let mut p: Vec<(&str, &mut [f64])> = names.iter().map(|n| n.as_str()).zip(params.slices_mut()).collect();
    adam.update_slices(&mut p, &g)
}

/// Train from a prepared pipeline with early stopping on validation hit ratio.
pub fn train(ds: &Dataset, prep: &Prepared, cfg: &RunConfig) -> Result<TrainOutcome> {
    train_with(ds, prep, &ModelConfig::from(cfg), &TrainConfig::from(cfg), None)
}

pub fn train_with(
    ds: &Dataset,
    prep: &Prepared,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    init: Option<ModelParams>,
) -> Result<TrainOutcome> {
    let inputs = &prep.inputs;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x7EA1);
    let mut params = match init {
        Some(p) => p,
        None => ModelParams::init(inputs, mcfg, &mut rng),
    };
    let probe = sample_examples(ds, &prep.split.train, &prep.session_group, inputs, mcfg.window, &mut rng.clone());
    if probe.is_empty() {
        return Err(Error::invalid("training split has no session with two or more interactions"));
    }
    let val_sessions: Vec<usize> = prep
        .split
        .val
        .iter()
        .copied()
        .filter(|&s| ds.sessions[s].interactions.len() > tcfg.min_prefix)
        .collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: tcfg.lr,
            ..AdamConfig::default()
        },
        &params.shapes(),
    );
    let mut best = ((f64::NEG_INFINITY, f64::NEG_INFINITY), 0usize, params.clone(), adam.clone());
    let mut trace = Vec::new();
    for epoch in 1..=tcfg.epochs {
        let mut examples = sample_examples(ds, &prep.split.train, &prep.session_group, inputs, mcfg.window, &mut rng);
        examples.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in examples.chunks(tcfg.batch_size.max(1)) {
            let (loss, grads) = batch_loss_grad(&params, inputs, mcfg, batch)?;
            adam_step(&mut params, &grads, &mut adam)?;
            loss_sum += loss * batch.len() as f64;
        }
        let loss = loss_sum / examples.len() as f64;
        let (hr, mrr) = if val_sessions.is_empty() {
            (0.0, 0.0)
        } else {
            let pred = Predictor::new(&params, inputs, mcfg)?;
            let (recs, truth) =
                recsys::recommend_sessions(&pred, ds, &val_sessions, &prep.session_group, tcfg.min_prefix, tcfg.k)?;
            (recsys::hit_ratio(&recs, &truth, tcfg.k)?, recsys::mrr(&recs, &truth, tcfg.k)?)
        };
        log::info!("epoch {epoch}: loss {loss:.5} val H@{k} {hr:.4} M@{k} {mrr:.4}", k = tcfg.k);
        trace.push(EpochMetrics {
            epoch,
            loss,
            val_hit_ratio: hr,
            val_mrr: mrr,
        });
        // validation hit ratio, ties broken by reciprocal rank
        if (hr, mrr) > best.0 {
            best = ((hr, mrr), epoch, params.clone(), adam.clone());
        } else if epoch - best.1 >= tcfg.patience {
            log::info!("early stop at epoch {epoch}, best epoch {}", best.1);
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        adam: best.3,
        trace,
        best_epoch: best.1,
    })
}

/// Serialized model state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Adam,
    pub config_text: String,
    pub config_hash: [u8; 32],
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.str(&self.config_text);
        w.bytes(&self.config_hash);
        w.u64(self.seed);
        w.str(self.params.activation_name());
        let names = self.params.names();
        let shapes = self.params.shapes();
        w.u64(names.len() as u64);
        for ((name, (r, c)), data) in names.iter().zip(&shapes).zip(self.params.slices()) {
            w.str(name);
            w.u64(*r as u64);
            w.u64(*c as u64);
            w.f64s(data);
        }
        w.u64(self.adam.step);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            w.f64s(m.as_slice());
            w.f64s(v.as_slice());
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.adam.config;
        for x in [lr, beta1, beta2, eps] {
            w.f64(x);
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::new(buf, CHECKPOINT_MAGIC)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_text = r.str()?;
        let hash = r.bytes()?;
        let config_hash: [u8; 32] = hash
            .try_into()
            .map_err(|_| Error::Format("config hash must be 32 bytes".into()))?;
        let seed = r.u64()?;
        let act_name = r.str()?;
        let activation =
            Activation::parse(&act_name).ok_or_else(|| Error::Format(format!("unknown activation `{act_name}`")))?;
        let count = r.u64()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.str()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let data = r.f64s()?;
            if data.len() != rows * cols {
                return Err(Error::Format(format!("tensor `{name}` has wrong length")));
            }
            tensors.push((name, DMatrix::from_vec(rows, cols, data)));
        }
        let params = ModelParams::from_named(tensors, activation)?;
        let step = r.u64()?;
        let shapes = params.shapes();
        let mut m = Vec::with_capacity(shapes.len());
        let mut v = Vec::with_capacity(shapes.len());
        for &(rows, cols) in &shapes {
            m.push(DMatrix::from_vec(rows, cols, r.f64s()?));
            v.push(DMatrix::from_vec(rows, cols, r.f64s()?));
        }
        let config = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint {
            params,
            adam: Adam { config, step, m, v },
            config_text,
            config_hash,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

impl ModelParams {
    fn activation_name(&self) -> &'static str {
        self.wave.first().map_or(Activation::Relu, |w| w.activation).as_str()
    }

    /// Rebuild from named tensors as written by [`Checkpoint::to_bytes`].
    pub fn from_named(tensors: Vec<(String, DMatrix<f64>)>, activation: Activation) -> Result<Self> {
        let mut it = tensors.into_iter();
        let mut take = |expect: &str| -> Result<DMatrix<f64>> {
            match it.next() {
                Some((n, m)) if n == expect => Ok(m),
                Some((n, _)) => Err(Error::Format(format!("expected tensor `{expect}`, found `{n}`"))),
                None => Err(Error::Format(format!("missing tensor `{expect}`"))),
            }
        };
        let input_proj = take("input_proj")?;
        let emb = take("emb")?;
        let rnn = RnnParams {
            w_a: take("rnn.w_a")?,
            w_b: take("rnn.w_b")?,
            w_c: take("rnn.w_c")?,
        };
        let weight = take("fusion.weight")?;
        let bias = take("fusion.bias")?;
        let fusion = FusionHead {
            weight,
            bias: DVector::from_column_slice(bias.as_slice()),
        };
        let mut wave: Vec<WaveConvParams> = Vec::new();
        for (name, m) in it {
            let parts: Vec<&str> = name.split('.').collect();
            let bad = || Error::Format(format!("unexpected tensor `{name}`"));
            if parts.len() != 4 || parts[0] != "wave" {
                return Err(bad());
            }
            let g: usize = parts[1].parse().map_err(|_| bad())?;
            let l: usize = parts[2].parse().map_err(|_| bad())?;
            if g == wave.len() && l == 0 && parts[3] == "mix" {
                wave.push(WaveConvParams {
                    mix: Vec::new(),
                    spectral: Vec::new(),
                    activation,
                });
            }
            let w = wave.get_mut(g).ok_or_else(bad)?;
            match parts[3] {
                "mix" if w.mix.len() == l => w.mix.push(m),
                "spectral" if w.spectral.len() == l && w.mix.len() == l + 1 => w.spectral.push(m),
                _ => return Err(bad()),
            }
        }
        Ok(ModelParams {
            input_proj,
            emb,
            rnn,
            fusion,
            wave,
        })
    }
}
