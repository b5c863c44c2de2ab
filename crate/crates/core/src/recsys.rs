//! Top-k recommendation lists and hit-ratio / reciprocal-rank evaluation.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{window_of, ModelConfig, ModelParams, Predictor};
use crate::par;
use crate::pipeline::Prepared;

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub user: usize,
    pub session: usize,
    /// `(job, score)`, scores non-increasing, jobs distinct.
    pub ranked: Vec<(usize, f64)>,
}

impl Recommendation {
    /// 1-based rank of `job`, if listed.
    pub fn rank_of(&self, job: usize) -> Option<usize> {
        self.ranked.iter().position(|&(j, _)| j == job).map(|p| p + 1)
    }
}

/// Indices of the `k` highest scores, descending, ties broken by lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx.into_iter().map(|j| (j, scores[j])).collect()
}

/// A prediction request: the window preceding `truth` in one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPoint {
    pub session: usize,
    pub user: usize,
    pub group: usize,
    pub window: Vec<usize>,
    pub truth: usize,
}

pub fn recommend_topk(predictor: &Predictor<'_>, user: usize, session: usize, group: usize, window: &[usize], k: usize) -> Result<Recommendation> {
    if window.is_empty() {
        return Err(Error::invalid(format!("user {user} has an empty session")));
    }
    let scores = predictor.job_scores(group, window)?;
    Ok(Recommendation {
        user,
        session,
        ranked: top_k(&scores, k),
    })
}

pub fn recommend_points(predictor: &Predictor<'_>, points: &[EvalPoint], k: usize) -> Result<Vec<Recommendation>> {
    par::map(points, |p| recommend_topk(predictor, p.user, p.session, p.group, &p.window, k))
        .into_iter()
        .collect()
}

/// Recommendations for every next-item point of the given sessions, with the
/// true jobs. Same points and order as [`next_item_points`].
pub fn recommend_sessions(
    predictor: &Predictor<'_>,
    ds: &Dataset,
    sessions: &[usize],
    session_group: &[usize],
    min_prefix: usize,
    k: usize,
) -> Result<(Vec<Recommendation>, Vec<usize>)> {
    let per_session = par::map(sessions, |&s| -> Result<Vec<(Recommendation, usize)>> {
        let sess = &ds.sessions[s];
        let jobs: Vec<usize> = sess.jobs().collect();
        let from = min_prefix.max(1);
        let scores = predictor.prefix_scores(session_group[s], &jobs, from)?;
        Ok(scores
            .iter()
            .zip(from..)
            .map(|(sc, i)| {
                let rec = Recommendation {
                    user: sess.user,
                    session: s,
                    ranked: top_k(sc, k),
                };
                (rec, jobs[i])
            })
            .collect())
    });
    let mut recs = Vec::new();
    let mut truth = Vec::new();
    for part in per_session {
        for (r, t) in part? {
            recs.push(r);
            truth.push(t);
        }
    }
    Ok((recs, truth))
}

/// Recommendations and true jobs for every next-item point of the held-out
/// test sessions.
pub fn evaluate_test(
    params: &ModelParams,
    prep: &Prepared,
    ds: &Dataset,
    cfg: &ModelConfig,
    min_prefix: usize,
    k: usize,
) -> Result<(Vec<Recommendation>, Vec<usize>)> {
    let predictor = Predictor::new(params, &prep.inputs, cfg)?;
    recommend_sessions(&predictor, ds, &prep.split.test, &prep.session_group, min_prefix, k)
}

/// Every interaction after the first `min_prefix` of each session, predicted
/// from its preceding prefix.
pub fn next_item_points(
    ds: &Dataset,
    sessions: &[usize],
    session_group: &[usize],
    min_prefix: usize,
    window: usize,
) -> Vec<EvalPoint> {
    let mut out = Vec::new();
    for &s in sessions {
        let sess = &ds.sessions[s];
        let jobs: Vec<usize> = sess.jobs().collect();
        for i in min_prefix.max(1)..jobs.len() {
            out.push(EvalPoint {
                session: s,
                user: sess.user,
                group: session_group[s],
                window: window_of(&jobs[..i], window),
                truth: jobs[i],
            });
        }
    }
    out
}

fn check_eval(recs: &[Recommendation], truth: &[usize]) -> Result<()> {
    if recs.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    if recs.len() != truth.len() {
        return Err(Error::Dimension {
            expected: recs.len(),
            got: truth.len(),
        });
    }
    Ok(())
}

fn rank_within(rec: &Recommendation, truth: usize, k: usize) -> Option<usize> {
    rec.rank_of(truth).filter(|&r| r <= k)
}

/// Fraction of points whose true job is in the top `k`.
pub fn hit_ratio(recs: &[Recommendation], truth: &[usize], k: usize) -> Result<f64> {
    check_eval(recs, truth)?;
    let hits = recs
        .iter()
        .zip(truth)
        .filter(|(r, &t)| rank_within(r, t, k).is_some())
        .count();
    Ok(hits as f64 / recs.len() as f64)
}

/// Mean reciprocal rank within the top `k` (0 when absent).
pub fn mrr(recs: &[Recommendation], truth: &[usize], k: usize) -> Result<f64> {
    check_eval(recs, truth)?;
    let total: f64 = recs
        .iter()
        .zip(truth)
        .map(|(r, &t)| rank_within(r, t, k).map_or(0.0, |rank| 1.0 / rank as f64))
        .sum();
    Ok(total / recs.len() as f64)
}

/// Recommends the most-interacted jobs to everyone.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityBaseline {
    pub counts: Vec<usize>,
    ranking: Vec<usize>,
}

impl PopularityBaseline {
    pub fn fit(n_jobs: usize, jobs: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = vec![0usize; n_jobs];
        for j in jobs {
            counts[j] += 1;
        }
        let mut ranking: Vec<usize> = (0..n_jobs).collect();
        ranking.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
        PopularityBaseline { counts, ranking }
    }

    /// Popularity over every interaction of `ds`.
    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::fit(ds.jobs.len(), ds.interactions.iter().map(|i| i.job))
    }

    /// Popularity over the given sessions only.
    pub fn from_sessions(ds: &Dataset, sessions: &[usize]) -> Self {
        Self::fit(ds.jobs.len(), sessions.iter().flat_map(|&s| ds.sessions[s].jobs()))
    }

    pub fn recommend(&self, user: usize, session: usize, k: usize) -> Recommendation {
        Recommendation {
            user,
            session,
            ranked: self.ranking.iter().take(k).map(|&j| (j, self.counts[j] as f64)).collect(),
        }
    }

    pub fn recommend_points(&self, points: &[EvalPoint], k: usize) -> Vec<Recommendation> {
        points.iter().map(|p| self.recommend(p.user, p.session, k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub hit_ratio: f64,
    pub mrr: f64,
    pub n_points: usize,
    /// Mean reciprocal rank per user id.
    pub per_user_rr: BTreeMap<String, f64>,
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    pub fn new(
        ds: &Dataset,
        recs: &[Recommendation],
        truth: &[usize],
        k: usize,
        config: Vec<(String, String)>,
    ) -> Result<Self> {
        let hit_ratio = hit_ratio(recs, truth, k)?;
        let mrr = mrr(recs, truth, k)?;
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (r, &t) in recs.iter().zip(truth) {
            let rr = rank_within(r, t, k).map_or(0.0, |rank| 1.0 / rank as f64);
            let e = sums.entry(ds.users[r.user].id.clone()).or_insert((0.0, 0));
            e.0 += rr;
            e.1 += 1;
        }
        Ok(EvalReport {
            k,
            hit_ratio,
            mrr,
            n_points: recs.len(),
            per_user_rr: sums.into_iter().map(|(u, (s, n))| (u, s / n as f64)).collect(),
            config,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert(format!("H@{}", self.k), json!(self.hit_ratio));
        m.insert(format!("M@{}", self.k), json!(self.mrr));
        m.insert("k".into(), json!(self.k));
        m.insert("n_points".into(), json!(self.n_points));
        m.insert("per_user_rr".into(), json!(self.per_user_rr));
        let cfg: Map<String, Value> = self.config.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        m.insert("config".into(), Value::Object(cfg));
        Value::Object(m)
    }

    pub fn table(&self) -> String {
        format!(
            "metric  value\nH@{k:<5} {:.4}\nM@{k:<5} {:.4}\npoints  {}\n",
            self.hit_ratio,
            self.mrr,
            self.n_points,
            k = self.k
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(jobs: &[usize]) -> Recommendation {
        Recommendation {
            user: 0,
            session: 0,
            ranked: jobs.iter().enumerate().map(|(i, &j)| (j, 1.0 - i as f64 * 0.1)).collect(),
        }
    }

    #[test]
    fn metric_definitions() {
        let recs: Vec<_> = (0..5).map(|i| rec(&[i, 10, 11])).collect();
        assert_eq!(hit_ratio(&recs, &[0, 1, 9, 9, 9], 3).unwrap(), 0.4);
        assert_eq!(mrr(&[rec(&[4, 5, 6])], &[6], 3).unwrap(), 1.0 / 3.0);
        assert_eq!(mrr(&[rec(&[1]), rec(&[2])], &[1, 3], 10).unwrap(), 0.5);
        assert!(hit_ratio(&[], &[], 10).is_err());
        assert!(mrr(&[], &[], 10).is_err());
    }

    #[test]
    fn top_k_ties_and_overflow() {
        assert_eq!(top_k(&[0.5, 0.9, 0.5], 2), vec![(1, 0.9), (0, 0.5)]);
        assert_eq!(top_k(&[0.1, 0.2], 10), vec![(1, 0.2), (0, 0.1)]);
    }

    #[test]
    fn popularity_rules() {
        let p = PopularityBaseline::fit(3, [2, 2, 2]);
        assert_eq!(p.recommend(0, 0, 1).ranked[0].0, 2);
        let p = PopularityBaseline::fit(3, [1, 2]);
        assert_eq!(p.recommend(0, 0, 3).ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 0]);
    }
}
