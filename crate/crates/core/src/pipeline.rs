//! Upstream feature construction shared by training and evaluation: topic
//! vectors, user and job groups, the session split, and one hypergraph with
//! its wavelet filters and node signal per user group.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{assign_group, build_feature, choose_k, kmeans_fit, Clustering};
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hypergraph::{build_group_signal, laplacian, Hypergraph};
use crate::par;
use crate::spectral::{build_filter_bank, ChebyshevFilters, GraphFilters};
use crate::topics::{em_fit, Corpus, TopicModel};

/// Session indices of each split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle: `test_frac` of sessions held out, the rest divided into
/// train and validation with `val_frac` going to validation.
pub fn split_sessions(n_sessions: usize, test_frac: f64, val_frac: f64, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n_sessions).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17);
    order.shuffle(&mut rng);
    let n_test = (n_sessions as f64 * test_frac).round() as usize;
    let rest = n_sessions - n_test;
    let n_val = (rest as f64 * val_frac).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut val = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Split { train, val, test }
}

/// One user group's graph, filters and raw node signal.
pub struct GroupGraph {
    pub hypergraph: Hypergraph,
    pub filters: Box<dyn GraphFilters + Send>,
    /// `n_nodes × (K + 1)`
    pub signal: DMatrix<f64>,
}

impl std::fmt::Debug for GroupGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GroupGraph")
            .field("hypergraph", &self.hypergraph)
            .field("signal", &self.signal.shape())
            .finish()
    }
}

/// Everything the model consumes besides its own parameters.
#[derive(Debug)]
pub struct ModelInputs {
    /// `K × n_jobs`, column `j` is the topic vector of job `j`.
    pub job_topics: DMatrix<f64>,
    pub job_group: Vec<usize>,
    pub job_label: Vec<usize>,
    pub n_labels: usize,
    pub graphs: Vec<GroupGraph>,
}

impl ModelInputs {
    pub fn n_jobs(&self) -> usize {
        self.job_label.len()
    }

    pub fn n_topics(&self) -> usize {
        self.job_topics.nrows()
    }

    pub fn signal_dim(&self) -> usize {
        self.graphs.first().map_or(self.n_topics() + 1, |g| g.signal.ncols())
    }
}

/// Output of [`prepare`].
#[derive(Debug)]
pub struct Prepared {
    pub topic_model: TopicModel,
    pub em_trace: Vec<f64>,
    /// Topic vector of every document, aligned with `Dataset::documents`.
    pub doc_topics: Vec<Vec<f64>>,
    pub job_clustering: Clustering,
    pub user_clustering: Clustering,
    /// User group of each session, from its resume version.
    pub session_group: Vec<usize>,
    pub split: Split,
    pub inputs: ModelInputs,
}

pub fn fit_topics(ds: &Dataset, cfg: &RunConfig) -> Result<(TopicModel, Vec<f64>, Vec<Vec<f64>>)> {
    let corpus = Corpus::from_documents(&ds.documents);
    let (model, trace) = em_fit(&corpus, &cfg.em())?;
    let doc_topics = (0..ds.documents.len()).map(|d| model.doc_row(d).to_vec()).collect();
    Ok((model, trace, doc_topics))
}

pub fn job_features(ds: &Dataset, doc_topics: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    ds.jobs
        .iter()
        .map(|j| build_feature(&doc_topics[j.document], &j.attributes))
        .collect()
}

/// Feature of every resume version, indexed `[user][version]`.
pub fn resume_features(ds: &Dataset, doc_topics: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
    ds.users
        .iter()
        .map(|u| {
            u.resume_versions
                .iter()
                .map(|v| build_feature(&doc_topics[v.document], &v.attributes))
                .collect()
        })
        .collect()
}

/// Cluster jobs and users. Users are clustered on their first resume version.
pub fn cluster(ds: &Dataset, doc_topics: &[Vec<f64>], cfg: &RunConfig) -> Result<(Clustering, Clustering)> {
    let jf = job_features(ds, doc_topics)?;
    let jobs = kmeans_fit(&jf, choose_k(jf.len(), cfg.job_ratio), cfg.kmeans_max_iters, cfg.seed)?;
    let uf: Vec<Vec<f64>> = resume_features(ds, doc_topics)?
        .into_iter()
        .map(|mut v| v.swap_remove(0))
        .collect();
    let users = kmeans_fit(&uf, choose_k(uf.len(), cfg.user_ratio), cfg.kmeans_max_iters, cfg.seed.wrapping_add(1))?;
    Ok((jobs, users))
}

/// Job-group sequences of the given sessions, split by user group.
pub fn group_sequences(
    ds: &Dataset,
    sessions: &[usize],
    session_group: &[usize],
    job_group: &[usize],
    n_user_groups: usize,
) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); n_user_groups];
    for &s in sessions {
        let seq: Vec<usize> = ds.sessions[s].jobs().map(|j| job_group[j]).collect();
        out[session_group[s]].push(seq);
    }
    out
}

/// Build every user group's hypergraph, filter bank and signal from the
/// training sessions. All job groups are nodes of every graph.
pub fn build_graphs(
    ds: &Dataset,
    train: &[usize],
    session_group: &[usize],
    job_group: &[usize],
    n_job_groups: usize,
    n_user_groups: usize,
    job_topics: &[Vec<f64>],
    cfg: &RunConfig,
) -> Result<Vec<GroupGraph>> {
    let seqs = group_sequences(ds, train, session_group, job_group, n_user_groups);
    let mut node_jobs = vec![Vec::new(); n_job_groups];
    for (j, &g) in job_group.iter().enumerate() {
        node_jobs[g].push(j);
    }
    let bank_cfg = cfg.bank();
    let built = par::map(&seqs, |group_seqs| -> Result<GroupGraph> {
        let h = Hypergraph::from_sessions(n_job_groups, group_seqs, cfg.transitions);
        let lap = laplacian(&h)?;
        let bank = build_filter_bank(&lap.laplacian, &bank_cfg)?;
        let mut counts = vec![0usize; n_job_groups];
        for seq in group_seqs {
            for &v in seq {
                counts[v] += 1;
            }
        }
        let signal = build_group_signal(&node_jobs, job_topics, &counts)?;
        Ok(GroupGraph {
            hypergraph: h,
            filters: Box::new(ChebyshevFilters {
                laplacian: lap.laplacian,
                bank,
            }),
            signal,
        })
    });
    built.into_iter().collect()
}

/// Run every upstream stage for `ds`.
pub fn prepare(ds: &Dataset, cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    if ds.sessions.is_empty() {
        return Err(Error::invalid("dataset has no sessions"));
    }
    let (topic_model, em_trace, doc_topics) = fit_topics(ds, cfg)?;
    let (job_clustering, user_clustering) = cluster(ds, &doc_topics, cfg)?;
    let rf = resume_features(ds, &doc_topics)?;
    let session_group = ds
        .sessions
        .iter()
        .map(|s| assign_group(&rf[s.user][s.resume_version], &user_clustering))
        .collect::<Result<Vec<_>>>()?;
    let split = split_sessions(ds.sessions.len(), cfg.test_frac, cfg.val_frac, cfg.seed);
    let job_topic_rows: Vec<Vec<f64>> = ds.jobs.iter().map(|j| doc_topics[j.document].clone()).collect();
    let graphs = build_graphs(
        ds,
        &split.train,
        &session_group,
        &job_clustering.assignment,
        job_clustering.k,
        user_clustering.k,
        &job_topic_rows,
        cfg,
    )?;
    let k = cfg.k_topics;
    let job_topics = DMatrix::from_fn(k, ds.jobs.len(), |z, j| job_topic_rows[j][z]);
    let inputs = ModelInputs {
        job_topics,
        job_group: job_clustering.assignment.clone(),
        job_label: ds.jobs.iter().map(|j| j.label).collect(),
        n_labels: ds.n_labels(),
        graphs,
    };
    Ok(Prepared {
        topic_model,
        em_trace,
        doc_topics,
        job_clustering,
        user_clustering,
        session_group,
        split,
        inputs,
    })
}
