//! Session RNN, fusion head, cross-entropy loss and the Adam optimizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Floor applied inside the loss logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// `O_t = tanh(W_b e_t + W_c O_{t−1})`, `Y_t = tanh(W_a O_t)`, `O_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    pub w_a: DMatrix<f64>,
    pub w_b: DMatrix<f64>,
    pub w_c: DMatrix<f64>,
}

impl RnnParams {
    pub fn zeros(hidden: usize, emb: usize) -> Self {
        RnnParams {
            w_a: DMatrix::zeros(hidden, hidden),
            w_b: DMatrix::zeros(hidden, emb),
            w_c: DMatrix::zeros(hidden, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_a.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct RnnTrace {
    pub embeddings: Vec<DVector<f64>>,
    /// `O_0 ..= O_T`.
    pub hidden: Vec<DVector<f64>>,
    /// `Y_T`
    pub output: DVector<f64>,
}

/// One recurrence step `tanh(W_b e + W_c o)`.
pub fn rnn_step(params: &RnnParams, o_prev: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
    let mut a = &params.w_b * e;
    a.gemv(1.0, &params.w_c, o_prev, 1.0);
    a.map(f64::tanh)
}

/// `tanh(W_a o)`.
pub fn rnn_output(params: &RnnParams, o: &DVector<f64>) -> DVector<f64> {
    (&params.w_a * o).map(f64::tanh)
}

pub fn rnn_forward(params: &RnnParams, embeddings: &[DVector<f64>]) -> Result<RnnTrace> {
    if embeddings.is_empty() {
        return Err(Error::invalid("rnn needs at least one step"));
    }
    let mut hidden = Vec::with_capacity(embeddings.len() + 1);
    hidden.push(DVector::zeros(params.hidden()));
    for e in embeddings {
        if e.len() != params.w_b.ncols() {
            return Err(Error::Dimension {
                expected: params.w_b.ncols(),
                got: e.len(),
            });
        }
        let next = rnn_step(params, hidden.last().unwrap(), e);
        hidden.push(next);
    }
    let output = rnn_output(params, hidden.last().unwrap());
    Ok(RnnTrace {
        embeddings: embeddings.to_vec(),
        hidden,
        output,
    })
}

/// Back-propagation through time from `dL/dY_T`. Returns parameter gradients
/// and the gradient for every input embedding.
pub fn rnn_backward(params: &RnnParams, trace: &RnnTrace, d_output: &DVector<f64>) -> (RnnParams, Vec<DVector<f64>>) {
    let t_len = trace.embeddings.len();
    let mut grads = RnnParams::zeros(params.hidden(), params.w_b.ncols());
    let d_pre_y = d_output.zip_map(&trace.output, |d, y| d * (1.0 - y * y));
    let o_last = &trace.hidden[t_len];
    grads.w_a.ger(1.0, &d_pre_y, o_last, 0.0);
    let mut d_o = params.w_a.tr_mul(&d_pre_y);
    let mut d_emb = vec![DVector::zeros(params.w_b.ncols()); t_len];
    for t in (1..=t_len).rev() {
        let o_t = &trace.hidden[t];
        let da = d_o.zip_map(o_t, |d, o| d * (1.0 - o * o));
        grads.w_b.ger(1.0, &da, &trace.embeddings[t - 1], 1.0);
        grads.w_c.ger(1.0, &da, &trace.hidden[t - 1], 1.0);
        d_emb[t - 1] = params.w_b.tr_mul(&da);
        d_o = params.w_c.tr_mul(&da);
    }
    (grads, d_emb)
}

/// `sigmoid(W [Y_T; X^L] + b)` over `M` job positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl FusionHead {
    pub fn zeros(n_labels: usize, input: usize) -> Self {
        FusionHead {
            weight: DMatrix::zeros(n_labels, input),
            bias: DVector::zeros(n_labels),
        }
    }

    pub fn n_labels(&self) -> usize {
        self.weight.nrows()
    }
}

pub fn concat(y_t: &DVector<f64>, x_l: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(y_t.len() + x_l.len(), y_t.iter().chain(x_l.iter()).copied())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn fuse(head: &FusionHead, y_t: &DVector<f64>, x_l: &DVector<f64>) -> Result<DVector<f64>> {
    let input = concat(y_t, x_l);
    if input.len() != head.weight.ncols() {
        return Err(Error::Dimension {
            expected: head.weight.ncols(),
            got: input.len(),
        });
    }
    Ok((&head.weight * input + &head.bias).map(sigmoid))
}

/// Gradients through the fusion head given `dL/dscores`.
pub fn fuse_backward(
    head: &FusionHead,
    input: &DVector<f64>,
    scores: &DVector<f64>,
    d_scores: &DVector<f64>,
) -> (FusionHead, DVector<f64>) {
    let ds = d_scores.zip_map(scores, |d, y| d * y * (1.0 - y));
    let mut weight = DMatrix::zeros(head.weight.nrows(), head.weight.ncols());
    weight.ger(1.0, &ds, input, 0.0);
    let d_input = head.weight.tr_mul(&ds);
    (FusionHead { weight, bias: ds }, d_input)
}

pub fn softmax(x: &DVector<f64>) -> DVector<f64> {
    let m = x.max();
    let e = x.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// `k × M` one-hot ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub rows: DMatrix<f64>,
}

impl TargetMatrix {
    pub fn one_hot(labels: &[usize], n_labels: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_labels) {
            return Err(Error::invalid(format!("label {bad} outside 0..{n_labels}")));
        }
        Ok(TargetMatrix {
            rows: DMatrix::from_fn(labels.len(), n_labels, |r, c| if labels[r] == c { 1.0 } else { 0.0 }),
        })
    }
}

/// `−(1/k) Σ_i Σ_q χ_iq log y_iq` with `y` row-normalized probabilities.
pub fn loss(probs: &DMatrix<f64>, targets: &TargetMatrix) -> Result<f64> {
    if probs.shape() != targets.rows.shape() {
        return Err(Error::Dimension {
            expected: targets.rows.len(),
            got: probs.len(),
        });
    }
    let k = probs.nrows();
    if k == 0 {
        return Ok(0.0);
    }
    let total: f64 = probs
        .iter()
        .zip(targets.rows.iter())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&y, &t)| t * y.max(LOG_FLOOR).ln())
        .sum();
    Ok(-total / k as f64)
}

/// Loss of one row (softmax over sigmoid scores) and its gradient with respect
/// to the scores.
pub fn row_loss_grad(scores: &DVector<f64>, target: usize) -> (f64, DVector<f64>) {
    let p = softmax(scores);
    let l = -p[target].max(LOG_FLOOR).ln();
    let mut d = p;
    d[target] -= 1.0;
    (l, d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers mirroring the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Adam {
            config,
            step: 0,
            m: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
        }
    }

    /// Bias-corrected Adam update. Nothing is modified if any gradient is non-finite.
    pub fn update(&mut self, params: &mut [(String, &mut DMatrix<f64>)], grads: &[&DMatrix<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension {
                expected: params.len(),
                got: grads.len(),
            });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::invalid(format!("gradient shape mismatch for `{name}`")));
            }
        }
        let mut flat: Vec<(&str, &mut [f64])> = params
            .iter_mut()
            .map(|(n, p)| (n.as_str(), p.as_mut_slice()))
            .collect();
        let g: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        self.update_slices(&mut flat, &g)
    }

    /// Same update over flat column-major tensors.
    pub fn update_slices(&mut self, params: &mut [(&str, &mut [f64])], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::invalid(format!("gradient shape mismatch for `{name}`")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((pj, gj), (mj, vj)) in p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *pj -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
