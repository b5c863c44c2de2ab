//! Probabilistic latent semantic analysis fitted by expectation-maximization.
//!
//! The model factorizes `P(d, w) = P(d) Σ_z P(w|z) P(z|d)` with `P(d)` fixed
//! to the document's share of the corpus tokens. The per-document topic
//! distribution `P(z|d)` is the semantic embedding consumed by clustering.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::binfmt::{read_file, Reader, Writer};
use crate::data::Document;
use crate::error::{Error, Result};
use crate::par;

/// Floor added inside logarithms and used to detect zero denominators.
pub const FLOOR: f64 = 1e-12;

const MAGIC: &[u8; 8] = b"HGWTOPIC";
const VERSION: u32 = 1;

/// Sparse term counts `f(d, w)` with both document-major and word-major indexes.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vec<String>,
    index: HashMap<String, usize>,
    doc_ptr: Vec<usize>,
    words: Vec<usize>,
    counts: Vec<f64>,
    // word-major postings: (doc, position in doc-major arrays)
    word_ptr: Vec<usize>,
    postings: Vec<(usize, usize)>,
}

impl Corpus {
    /// Build a corpus over the union vocabulary of `docs`, sorted lexically.
    pub fn from_documents(docs: &[Document]) -> Self {
        let counts: Vec<&BTreeMap<String, u32>> = docs.iter().map(|d| &d.token_counts).collect();
        Self::from_counts(&counts)
    }

    pub fn from_counts(docs: &[&BTreeMap<String, u32>]) -> Self {
        let mut vocab: Vec<String> = docs
            .iter()
            .flat_map(|d| d.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        vocab.shrink_to_fit();
        let index: HashMap<String, usize> =
            vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let rows: Vec<Vec<(usize, f64)>> = docs
            .iter()
            .map(|d| {
                d.iter()
                    .filter(|(_, &c)| c > 0)
                    .map(|(w, &c)| (index[w], c as f64))
                    .collect()
            })
            .collect();
        Self::from_rows(vocab, index, &rows)
    }

    /// Build from explicit `(word, count)` rows over a given vocabulary.
    pub fn from_sparse(vocab: Vec<String>, rows: &[Vec<(usize, f64)>]) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self::from_rows(vocab, index, rows)
    }

    fn from_rows(vocab: Vec<String>, index: HashMap<String, usize>, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut doc_ptr = vec![0];
        let mut words = Vec::new();
        let mut counts = Vec::new();
        for row in rows {
            let mut row = row.clone();
            row.sort_by_key(|(w, _)| *w);
            for (w, c) in row {
                words.push(w);
                counts.push(c);
            }
            doc_ptr.push(words.len());
        }
        let v = vocab.len();
        let mut word_len = vec![0usize; v];
        for &w in &words {
            word_len[w] += 1;
        }
        let mut word_ptr = vec![0usize; v + 1];
        for w in 0..v {
            word_ptr[w + 1] = word_ptr[w] + word_len[w];
        }
        let mut fill = word_ptr.clone();
        let mut postings = vec![(0, 0); words.len()];
        for d in 0..rows.len() {
            for j in doc_ptr[d]..doc_ptr[d + 1] {
                let w = words[j];
                postings[fill[w]] = (d, j);
                fill[w] += 1;
            }
        }
        Corpus {
            vocab,
            index,
            doc_ptr,
            words,
            counts,
            word_ptr,
            postings,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ptr.len() - 1
    }

    pub fn n_words(&self) -> usize {
        self.vocab.len()
    }

    pub fn nnz(&self) -> usize {
        self.words.len()
    }

    /// `(word, count)` pairs of document `d`.
    pub fn doc(&self, d: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.doc_ptr[d]..self.doc_ptr[d + 1];
        self.words[r.clone()].iter().copied().zip(self.counts[r].iter().copied())
    }

    pub fn doc_len(&self, d: usize) -> f64 {
        self.counts[self.doc_ptr[d]..self.doc_ptr[d + 1]].iter().sum()
    }

    pub fn word_index(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }
}

/// Fitted pLSA parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub n_topics: usize,
    /// `[n_topics × |vocab|]`, rows sum to one.
    pub p_w_given_z: Vec<f64>,
    /// `[|docs| × n_topics]`, rows sum to one.
    pub p_z_given_d: Vec<f64>,
    pub vocab: Vec<String>,
}

impl TopicModel {
    pub fn n_words(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_docs(&self) -> usize {
        if self.n_topics == 0 {
            0
        } else {
            self.p_z_given_d.len() / self.n_topics
        }
    }

    pub fn word_row(&self, z: usize) -> &[f64] {
        let v = self.n_words();
        &self.p_w_given_z[z * v..(z + 1) * v]
    }

    pub fn doc_row(&self, d: usize) -> &[f64] {
        &self.p_z_given_d[d * self.n_topics..(d + 1) * self.n_topics]
    }

    /// Random Dirichlet(1) initialization.
    pub fn random(n_topics: usize, vocab: Vec<String>, n_docs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dirichlet_rows = |rows: usize, cols: usize| {
            let mut out = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row: Vec<f64> = (0..cols).map(|_| Exp1.sample(&mut rng)).collect();
                let s: f64 = row.iter().sum();
                out.extend(row.iter().map(|x| x / s));
            }
            out
        };
        let p_w_given_z = dirichlet_rows(n_topics, vocab.len());
        let p_z_given_d = dirichlet_rows(n_docs, n_topics);
        TopicModel {
            n_topics,
            p_w_given_z,
            p_z_given_d,
            vocab,
        }
    }

    /// `P(w|z)` transposed to word-major `[|vocab| × n_topics]`.
    fn word_major(&self) -> Vec<f64> {
        let (k, v) = (self.n_topics, self.n_words());
        let mut t = vec![0.0; k * v];
        for z in 0..k {
            for w in 0..v {
                t[w * k + z] = self.p_w_given_z[z * v + w];
            }
        }
        t
    }

    /// Indices of the `n` most probable words of topic `z`, most probable first.
    pub fn top_words(&self, z: usize, n: usize) -> Vec<(&str, f64)> {
        let row = self.word_row(z);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        idx.into_iter()
            .take(n)
            .map(|w| (self.vocab[w].as_str(), row[w]))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u64(self.n_topics as u64);
        w.u64(self.vocab.len() as u64);
        for s in &self.vocab {
            w.str(s);
        }
        w.f64s(&self.p_w_given_z);
        w.f64s(&self.p_z_given_d);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::new(buf, MAGIC)?;
        if version != VERSION {
            return Err(Error::Format(format!("topic model version {version}")));
        }
        let n_topics = r.u64()? as usize;
        let n_vocab = r.len()?;
        let vocab = (0..n_vocab).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let p_w_given_z = r.f64s()?;
        let p_z_given_d = r.f64s()?;
        if p_w_given_z.len() != n_topics * n_vocab || (n_topics > 0 && p_z_given_d.len() % n_topics != 0) {
            return Err(Error::Format("topic model shape mismatch".into()));
        }
        Ok(TopicModel {
            n_topics,
            p_w_given_z,
            p_z_given_d,
            vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// `P(z|w,d)` for every nonzero `(d, w)`, stored in the corpus' document-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub n_topics: usize,
    pub values: Vec<f64>,
}

impl Posterior {
    pub fn at(&self, nz: usize) -> &[f64] {
        &self.values[nz * self.n_topics..(nz + 1) * self.n_topics]
    }
}

/// Posterior over topics for one `(d, w)` cell, written into `out`.
#[inline]
fn cell_posterior(pw: &[f64], pd: &[f64], out: &mut [f64]) {
    let mut denom = 0.0;
    for ((o, a), b) in out.iter_mut().zip(pw).zip(pd) {
        *o = a * b;
        denom += *o;
    }
    if denom < FLOOR {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|o| *o = u);
    } else {
        out.iter_mut().for_each(|o| *o /= denom);
    }
}

fn normalize_or_uniform(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s < FLOOR {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|x| *x = u);
    } else {
        row.iter_mut().for_each(|x| *x /= s);
    }
}

/// E-step: `P(z|w,d) ∝ P(w|z) P(z|d)`.
pub fn e_step(model: &TopicModel, corpus: &Corpus) -> Posterior {
    let k = model.n_topics;
    let pwz = model.word_major();
    let per_doc = par::map_range(corpus.n_docs(), |d| {
        let pd = model.doc_row(d);
        let mut out = Vec::with_capacity(k * (corpus.doc_ptr[d + 1] - corpus.doc_ptr[d]));
        let mut cell = vec![0.0; k];
        for (w, _) in corpus.doc(d) {
            cell_posterior(&pwz[w * k..(w + 1) * k], pd, &mut cell);
            out.extend_from_slice(&cell);
        }
        out
    });
    Posterior {
        n_topics: k,
        values: per_doc.concat(),
    }
}

/// M-step: re-estimate `P(w|z)` and `P(z|d)` from the posterior.
pub fn m_step(posterior: &Posterior, corpus: &Corpus) -> TopicModel {
    let k = posterior.n_topics;
    let p_z_given_d = par::map_range(corpus.n_docs(), |d| {
        let mut row = vec![0.0; k];
        for j in corpus.doc_ptr[d]..corpus.doc_ptr[d + 1] {
            let f = corpus.counts[j];
            for (r, p) in row.iter_mut().zip(posterior.at(j)) {
                *r += f * p;
            }
        }
        normalize_or_uniform(&mut row);
        row
    })
    .concat();
    let word_num = par::map_range(corpus.n_words(), |w| {
        let mut acc = vec![0.0; k];
        for &(_, j) in &corpus.postings[corpus.word_ptr[w]..corpus.word_ptr[w + 1]] {
            let f = corpus.counts[j];
            for (a, p) in acc.iter_mut().zip(posterior.at(j)) {
                *a += f * p;
            }
        }
        acc
    });
    TopicModel {
        n_topics: k,
        p_w_given_z: finish_word_rows(&word_num, k, corpus.n_words()),
        p_z_given_d,
        vocab: corpus.vocab.clone(),
    }
}

/// Turn word-major numerators into normalized `P(w|z)` rows.
fn finish_word_rows(word_num: &[Vec<f64>], k: usize, v: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * v];
    for z in 0..k {
        let row = &mut out[z * v..(z + 1) * v];
        for (w, r) in row.iter_mut().enumerate() {
            *r = word_num[w][z];
        }
        normalize_or_uniform(row);
    }
    out
}

/// One EM cycle without materializing the posterior. Identical in value to
/// `m_step(&e_step(model, corpus), corpus)`.
pub fn em_cycle(model: &TopicModel, corpus: &Corpus) -> TopicModel {
    let k = model.n_topics;
    let pwz = model.word_major();
    let inv_denom: Vec<f64> = par::map_range(corpus.n_docs(), |d| {
        let pd = model.doc_row(d);
        corpus
            .doc(d)
            .map(|(w, _)| {
                let s: f64 = pwz[w * k..(w + 1) * k].iter().zip(pd).map(|(a, b)| a * b).sum();
                if s < FLOOR {
                    f64::NAN
                } else {
                    1.0 / s
                }
            })
            .collect::<Vec<_>>()
    })
    .concat();
    let uniform = 1.0 / k as f64;
    // posterior of cell j accumulated with weight f
    let accumulate = |acc: &mut [f64], j: usize, w: usize, d: usize| {
        let f = corpus.counts[j];
        let inv = inv_denom[j];
        if inv.is_nan() {
            acc.iter_mut().for_each(|a| *a += f * uniform);
        } else {
            let pd = model.doc_row(d);
            let pw = &pwz[w * k..(w + 1) * k];
            for z in 0..k {
                acc[z] += f * (pw[z] * pd[z] * inv);
            }
        }
    };
    let p_z_given_d = par::map_range(corpus.n_docs(), |d| {
        let mut row = vec![0.0; k];
        for j in corpus.doc_ptr[d]..corpus.doc_ptr[d + 1] {
            accumulate(&mut row, j, corpus.words[j], d);
        }
        normalize_or_uniform(&mut row);
        row
    })
    .concat();
    let word_num = par::map_range(corpus.n_words(), |w| {
        let mut acc = vec![0.0; k];
        for &(d, j) in &corpus.postings[corpus.word_ptr[w]..corpus.word_ptr[w + 1]] {
            accumulate(&mut acc, j, w, d);
        }
        acc
    });
    TopicModel {
        n_topics: k,
        p_w_given_z: finish_word_rows(&word_num, k, corpus.n_words()),
        p_z_given_d,
        vocab: model.vocab.clone(),
    }
}

/// `L = Σ_d Σ_w f(d,w) log P(d,w)` with `P(d)` the document's token share.
pub fn log_likelihood(model: &TopicModel, corpus: &Corpus) -> f64 {
    let k = model.n_topics;
    let pwz = model.word_major();
    let total: f64 = corpus.counts.iter().sum();
    par::map_range(corpus.n_docs(), |d| {
        let pd = model.doc_row(d);
        let log_p_doc = (corpus.doc_len(d) / total + FLOOR).ln();
        corpus
            .doc(d)
            .map(|(w, f)| {
                let s: f64 = pwz[w * k..(w + 1) * k].iter().zip(pd).map(|(a, b)| a * b).sum();
                f * (log_p_doc + (s + FLOOR).ln())
            })
            .sum::<f64>()
    })
    .iter()
    .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub n_topics: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            n_topics: 32,
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Fit by EM until `|ΔL| < tol·|L|` or `max_iters`. The returned trace holds
/// the log-likelihood of the initial model followed by one value per iteration.
pub fn em_fit(corpus: &Corpus, cfg: &EmConfig) -> Result<(TopicModel, Vec<f64>)> {
    if corpus.n_words() == 0 {
        return Err(Error::invalid("empty vocabulary"));
    }
    if cfg.n_topics == 0 {
        return Err(Error::config("k_topics", "must be at least 1"));
    }
    let mut model = TopicModel::random(cfg.n_topics, corpus.vocab.clone(), corpus.n_docs(), cfg.seed);
    let mut trace = vec![log_likelihood(&model, corpus)];
    for it in 0..cfg.max_iters {
        model = em_cycle(&model, corpus);
        let ll = log_likelihood(&model, corpus);
        let prev = *trace.last().unwrap();
        trace.push(ll);
        log::debug!("em iter {it}: L = {ll:.6}");
        if (ll - prev).abs() < cfg.tol * ll.abs() {
            break;
        }
    }
    Ok((model, trace))
}

/// Result of folding an unseen document into a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldIn {
    pub topics: Vec<f64>,
    /// True when the document had no in-vocabulary tokens and the uniform
    /// fallback was returned.
    pub out_of_vocabulary: bool,
}

pub const DEFAULT_FOLD_IN_ITERS: usize = 10;

/// Estimate `P(z|d')` for a new document with `P(w|z)` held fixed, starting
/// from the uniform distribution.
pub fn fold_in(model: &TopicModel, counts: &BTreeMap<String, u32>, iters: usize) -> FoldIn {
    let index: HashMap<&str, usize> = model
        .vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let cells: Vec<(usize, f64)> = counts
        .iter()
        .filter_map(|(w, &c)| index.get(w.as_str()).map(|&i| (i, c as f64)))
        .filter(|(_, c)| *c > 0.0)
        .collect();
    fold_in_cells(model, &cells, iters)
}

/// Fold-in from pre-resolved `(word index, count)` cells.
pub fn fold_in_cells(model: &TopicModel, cells: &[(usize, f64)], iters: usize) -> FoldIn {
    let k = model.n_topics;
    let mut theta = vec![1.0 / k as f64; k];
    if cells.is_empty() {
        return FoldIn {
            topics: theta,
            out_of_vocabulary: true,
        };
    }
    let v = model.n_words();
    let mut pw = vec![0.0; k];
    let mut post = vec![0.0; k];
    for _ in 0..iters {
        let mut acc = vec![0.0; k];
        for &(w, f) in cells {
            for z in 0..k {
                pw[z] = model.p_w_given_z[z * v + w];
            }
            cell_posterior(&pw, &theta, &mut post);
            for z in 0..k {
                acc[z] += f * post[z];
            }
        }
        normalize_or_uniform(&mut acc);
        theta = acc;
    }
    FoldIn {
        topics: theta,
        out_of_vocabulary: false,
    }
}

/// Fold every document of `corpus` (indexed over the model vocabulary) into `model`.
pub fn fold_in_corpus(model: &TopicModel, corpus: &Corpus, iters: usize) -> Vec<Vec<f64>> {
    par::map_range(corpus.n_docs(), |d| {
        let cells: Vec<(usize, f64)> = corpus.doc(d).collect();
        fold_in_cells(model, &cells, iters).topics
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Corpus {
        Corpus::from_sparse(
            vec!["a".into(), "b".into()],
            &[vec![(0, 3.0), (1, 1.0)], vec![(0, 1.0), (1, 2.0)]],
        )
    }

    fn manual(k: usize, pwz: Vec<f64>, pzd: Vec<f64>, vocab: usize, _docs: usize) -> TopicModel {
        TopicModel {
            n_topics: k,
            p_w_given_z: pwz,
            p_z_given_d: pzd,
            vocab: (0..vocab).map(|i| format!("w{i}")).collect(),
        }
    }

    #[test]
    fn single_topic_posterior_is_one() {
        let c = toy();
        let m = TopicModel::random(1, c.vocab.clone(), 2, 3);
        let p = e_step(&m, &c);
        assert!(p.values.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn hand_posterior() {
        // word 0 has P(w|z) = [.5, .9]
        let c = Corpus::from_sparse(vec!["a".into(), "b".into()], &[vec![(0, 1.0)]]);
        let m = manual(2, vec![0.5, 0.5, 0.9, 0.1], vec![0.5, 0.5], 2, 1);
        let p = e_step(&m, &c);
        assert!((p.at(0)[0] - 0.25 / 0.7).abs() < 1e-12);
        assert!((p.at(0)[1] - 0.45 / 0.7).abs() < 1e-12);
        assert!((p.at(0)[0] - 0.3571).abs() < 1e-4);
    }

    #[test]
    fn uniform_model_uniform_posterior() {
        let c = toy();
        let m = manual(4, vec![0.5; 8], vec![0.25; 8], 2, 2);
        let p = e_step(&m, &c);
        assert!(p.values.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn degenerate_corpus_m_step() {
        let c = Corpus::from_sparse(vec!["a".into()], &[vec![(0, 4.0)]]);
        let m = m_step(&Posterior { n_topics: 1, values: vec![1.0] }, &c);
        assert_eq!(m.p_w_given_z, vec![1.0]);
        assert_eq!(m.p_z_given_d, vec![1.0]);
        assert_eq!(log_likelihood(&m, &c).abs() < 1e-9, true);
    }

    #[test]
    fn all_mass_on_first_topic() {
        let c = toy();
        let post = Posterior {
            n_topics: 2,
            values: vec![1.0, 0.0].repeat(c.nnz()),
        };
        let m = m_step(&post, &c);
        for d in 0..2 {
            assert_eq!(m.doc_row(d), &[1.0, 0.0]);
        }
        // empty topic falls back to uniform
        assert_eq!(m.word_row(1), &[0.5, 0.5]);
    }

    #[test]
    fn fused_cycle_matches_two_step() {
        let c = toy();
        let m = TopicModel::random(3, c.vocab.clone(), 2, 11);
        let a = em_cycle(&m, &c);
        let b = m_step(&e_step(&m, &c), &c);
        for (x, y) in a.p_w_given_z.iter().zip(&b.p_w_given_z) {
            assert!((x - y).abs() < 1e-14);
        }
        for (x, y) in a.p_z_given_d.iter().zip(&b.p_z_given_d) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn floor_keeps_likelihood_finite() {
        let c = toy();
        let m = manual(1, vec![1.0, 0.0], vec![1.0, 1.0], 2, 2);
        let ll = log_likelihood(&m, &c);
        assert!(ll.is_finite());
    }

    #[test]
    fn fold_in_fallbacks() {
        let c = toy();
        let (m, _) = em_fit(&c, &EmConfig { n_topics: 3, max_iters: 5, tol: 0.0, seed: 1 }).unwrap();
        let mut oov = BTreeMap::new();
        oov.insert("zzz".to_string(), 2);
        let f = fold_in(&m, &oov, 10);
        assert!(f.out_of_vocabulary);
        assert_eq!(f.topics, vec![1.0 / 3.0; 3]);

        let (m1, _) = em_fit(&c, &EmConfig { n_topics: 1, max_iters: 5, tol: 0.0, seed: 1 }).unwrap();
        let mut doc = BTreeMap::new();
        doc.insert("a".to_string(), 1);
        assert_eq!(fold_in(&m1, &doc, 10).topics, vec![1.0]);
    }

    #[test]
    fn empty_vocabulary_is_error() {
        let c = Corpus::from_sparse(vec![], &[vec![]]);
        assert!(em_fit(&c, &EmConfig::default()).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let c = toy();
        let (m, _) = em_fit(&c, &EmConfig { n_topics: 2, max_iters: 3, tol: 0.0, seed: 9 }).unwrap();
        let back = TopicModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(m, back);
        assert!(TopicModel::from_bytes(b"garbage!").is_err());
    }
}
