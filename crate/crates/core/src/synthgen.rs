//! Seeded generator of job-market datasets with preference drift and
//! injected interaction noise.
//!
//! Two random streams are used: the world stream draws users, jobs, documents,
//! revisions and every preference-consistent interaction; the noise stream
//! draws only the noisy insertions. Changing the noise rate therefore leaves
//! the world and the consistent interactions untouched.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InteractionKind, InteractionRecord, JobRecord, RecordFiles, ResumeRecord};
use crate::error::{Error, Result};

/// 2023-07-01T00:00:00Z
pub const START_TS: i64 = 1_688_169_600;
const DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_jobs: usize,
    pub n_topics: usize,
    /// Mean number of preference-consistent interactions per session.
    pub mean_session_len: f64,
    pub mean_revision_gap_days: f64,
    pub drift_prob_on_revision: f64,
    /// Probability that any emitted interaction is a noisy insertion.
    pub noise_pct: f64,
    pub vocab_size: usize,
    pub seed: u64,
    pub horizon_days: f64,
    pub doc_len: usize,
    /// Share of document tokens drawn uniformly from the whole vocabulary.
    pub lexical_noise: f64,
    /// Zipf exponent of job popularity within a topic.
    pub popularity_skew: f64,
    /// Weight of the preferred topic in resume text.
    pub resume_focus: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_users: 2000,
            n_jobs: 1000,
            n_topics: 20,
            mean_session_len: 10.0,
            mean_revision_gap_days: 7.28,
            drift_prob_on_revision: 0.77,
            noise_pct: 0.0,
            vocab_size: 2000,
            seed: 0,
            horizon_days: 30.0,
            doc_len: 40,
            lexical_noise: 0.1,
            popularity_skew: 0.8,
            resume_focus: 0.7,
        }
    }
}

impl GenConfig {
    /// `key = value` lines of every field in declaration order.
    pub fn to_text(&self) -> String {
        let rows: [(&str, String); 14] = [
            ("n_users", self.n_users.to_string()),
            ("n_jobs", self.n_jobs.to_string()),
            ("n_topics", self.n_topics.to_string()),
            ("mean_session_len", self.mean_session_len.to_string()),
            ("mean_revision_gap_days", self.mean_revision_gap_days.to_string()),
            ("drift_prob_on_revision", self.drift_prob_on_revision.to_string()),
            ("noise_pct", self.noise_pct.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("seed", self.seed.to_string()),
            ("horizon_days", self.horizon_days.to_string()),
            ("doc_len", self.doc_len.to_string()),
            ("lexical_noise", self.lexical_noise.to_string()),
            ("popularity_skew", self.popularity_skew.to_string()),
            ("resume_focus", self.resume_focus.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(name, "must be in [0, 1]"))
            }
        };
        prob("drift_prob_on_revision", self.drift_prob_on_revision)?;
        prob("noise_pct", self.noise_pct)?;
        prob("lexical_noise", self.lexical_noise)?;
        prob("resume_focus", self.resume_focus)?;
        if self.noise_pct >= 1.0 {
            return Err(Error::config("noise_pct", "must be below 1"));
        }
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_jobs", self.n_jobs),
            ("n_topics", self.n_topics),
            ("doc_len", self.doc_len),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.n_topics < 2 {
            return Err(Error::config("n_topics", "must be at least 2"));
        }
        if self.vocab_size < self.n_topics {
            return Err(Error::config("vocab_size", "must be at least n_topics"));
        }
        if !(self.mean_session_len >= 1.0) {
            return Err(Error::config("mean_session_len", "must be at least 1"));
        }
        if !(self.mean_revision_gap_days > 0.0) || !(self.horizon_days > 0.0) {
            return Err(Error::config("mean_revision_gap_days", "gaps and horizon must be positive"));
        }
        if self.popularity_skew < 0.0 {
            return Err(Error::config("popularity_skew", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefRecord {
    pub user: String,
    pub ts: i64,
    pub pref_topic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub user: String,
    pub job: String,
    pub ts: i64,
    pub noisy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TruthLine {
    Pref(PrefRecord),
    Noise(NoiseRecord),
}

/// Generator ground truth, in record form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// One entry per resume version.
    pub preferences: Vec<PrefRecord>,
    /// One entry per emitted interaction, in emission order.
    pub interactions: Vec<NoiseRecord>,
}

impl GroundTruth {
    /// Preferred topic of `user` at resume version with timestamp `ts`.
    pub fn pref_topic(&self, user: &str, ts: i64) -> Option<usize> {
        self.preferences
            .iter()
            .find(|p| p.user == user && p.ts == ts)
            .map(|p| p.pref_topic)
    }

    /// `pref[user_index][version_index]` for a dataset built from this truth.
    pub fn preference_table(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        let map: HashMap<(&str, i64), usize> = self
            .preferences
            .iter()
            .map(|p| ((p.user.as_str(), p.ts), p.pref_topic))
            .collect();
        ds.users
            .iter()
            .map(|u| {
                u.resume_versions
                    .iter()
                    .map(|v| map.get(&(u.id.as_str(), v.ts)).copied().unwrap_or(usize::MAX))
                    .collect()
            })
            .collect()
    }

    /// Noisy flags aligned with `ds.interactions`.
    pub fn noisy_flags(&self, ds: &Dataset) -> Vec<bool> {
        let mut pool: HashMap<(&str, &str, i64), Vec<bool>> = HashMap::new();
        for r in &self.interactions {
            pool.entry((r.user.as_str(), r.job.as_str(), r.ts)).or_default().push(r.noisy);
        }
        ds.interactions
            .iter()
            .map(|i| {
                let key = (ds.users[i.user].id.as_str(), ds.jobs[i.job].id.as_str(), i.ts);
                pool.get_mut(&key).and_then(|v| v.pop()).unwrap_or(false)
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for p in &self.preferences {
            let _ = writeln!(s, "{}", serde_json::to_string(p).unwrap());
        }
        for r in &self.interactions {
            let _ = writeln!(s, "{}", serde_json::to_string(r).unwrap());
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut gt = GroundTruth::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<TruthLine>(line) {
                Ok(TruthLine::Pref(p)) => gt.preferences.push(p),
                Ok(TruthLine::Noise(n)) => gt.interactions.push(n),
                Err(e) => return Err(Error::invalid(format!("{}:{}: {e}", path.display(), i + 1))),
            }
        }
        Ok(gt)
    }
}

/// Raw generator output, ready to be written as JSON Lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub jobs: Vec<JobRecord>,
    pub resumes: Vec<ResumeRecord>,
    pub interactions: Vec<InteractionRecord>,
    pub truth: GroundTruth,
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(s, "{}", serde_json::to_string(r).unwrap());
    }
    s
}

impl Generated {
    pub fn to_dataset(&self) -> Result<Dataset> {
        let number = |v: usize| v + 1;
        let jobs: Vec<_> = self.jobs.iter().cloned().enumerate().map(|(i, r)| (number(i), r)).collect();
        let resumes: Vec<_> = self.resumes.iter().cloned().enumerate().map(|(i, r)| (number(i), r)).collect();
        let inter: Vec<_> = self
            .interactions
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, r)| (number(i), r))
            .collect();
        let (mut ds, _) = Dataset::from_records(&jobs, &resumes, &inter, &RecordFiles::default())?;
        ds.annotations = Some(self.truth.clone());
        Ok(ds)
    }

    /// Write `jobs.jsonl`, `resumes.jsonl`, `interactions.jsonl` and `ground_truth.jsonl`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("jobs.jsonl", jsonl(&self.jobs)),
            ("resumes.jsonl", jsonl(&self.resumes)),
            ("interactions.jsonl", jsonl(&self.interactions)),
            ("ground_truth.jsonl", self.truth.to_jsonl()),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn word(idx: usize) -> String {
    format!("w{idx:05}")
}

struct World {
    cfg: GenConfig,
    block: usize,
}

impl World {
    /// Document whose tokens come from `mixture` (topic, weight) plus lexical noise.
    fn document(&self, mixture: &[(usize, f64)], rng: &mut ChaCha8Rng) -> String {
        let mut text = String::new();
        for t in 0..self.cfg.doc_len {
            let idx = if rng.random::<f64>() < self.cfg.lexical_noise {
                rng.random_range(0..self.cfg.vocab_size)
            } else {
                let mut r = rng.random::<f64>();
                let mut topic = mixture.last().unwrap().0;
                for &(z, w) in mixture {
                    if r < w {
                        topic = z;
                        break;
                    }
                    r -= w;
                }
                topic * self.block + rng.random_range(0..self.block)
            };
            if t > 0 {
                text.push(' ');
            }
            text.push_str(&word(idx));
        }
        text
    }

    fn resume(&self, pref: usize, rng: &mut ChaCha8Rng) -> String {
        let k = self.cfg.n_topics;
        let rest = (1.0 - self.cfg.resume_focus) / 2.0;
        let a = (pref + 1 + rng.random_range(0..k - 1)) % k;
        let b = (pref + 1 + rng.random_range(0..k - 1)) % k;
        self.document(&[(pref, self.cfg.resume_focus), (a, rest), (b, rest)], rng)
    }
}

fn pick_weighted(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let mut r = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

fn pick_kind(rng: &mut impl Rng) -> InteractionKind {
    let r = rng.random::<f64>();
    match r {
        r if r < 0.5 => InteractionKind::Browse,
        r if r < 0.8 => InteractionKind::Click,
        r if r < 0.95 => InteractionKind::Chat,
        _ => InteractionKind::Apply,
    }
}

/// Generate raw records and ground truth for `cfg`.
pub fn generate_records(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);
    let world = World {
        cfg: cfg.clone(),
        block: cfg.vocab_size / cfg.n_topics,
    };
    let k = cfg.n_topics;

    // jobs: balanced over topics, popularity Zipf within topic
    let mut jobs = Vec::with_capacity(cfg.n_jobs);
    let mut topic_jobs: Vec<Vec<usize>> = vec![Vec::new(); k];
    for j in 0..cfg.n_jobs {
        let topic = j % k;
        topic_jobs[topic].push(j);
        let text = world.document(&[(topic, 1.0)], &mut rng);
        let attrs = vec![rng.random::<f64>(), (rng.random::<f64>() * 10.0).round()];
        jobs.push(JobRecord {
            job: format!("j{j:05}"),
            text,
            attrs,
            label: topic as i64,
        });
    }
    let mut topic_weights: Vec<Vec<f64>> = Vec::with_capacity(k);
    for list in topic_jobs.iter_mut() {
        // random popularity order
        for i in (1..list.len()).rev() {
            let s = rng.random_range(0..=i);
            list.swap(i, s);
        }
        topic_weights.push(
            (0..list.len())
                .map(|r| 1.0 / ((r + 1) as f64).powf(cfg.popularity_skew))
                .collect(),
        );
    }
    let topic_totals: Vec<f64> = topic_weights.iter().map(|w| w.iter().sum()).collect();

    let gap = Exp::new(1.0 / (cfg.mean_revision_gap_days * DAY)).unwrap();
    let extra_len = (cfg.mean_session_len - 1.0).max(0.0);
    let poisson = (extra_len > 0.0).then(|| Poisson::new(extra_len).unwrap());
    let horizon = START_TS + (cfg.horizon_days * DAY) as i64;

    let mut resumes = Vec::new();
    let mut interactions = Vec::new();
    let mut truth = GroundTruth::default();
    for u in 0..cfg.n_users {
        let uid = format!("u{u:05}");
        let experience = rng.random::<f64>() * 20.0;
        let education = rng.random_range(0..4) as f64;
        let mut pref = rng.random_range(0..k);
        let mut ts = START_TS + rng.random_range(0..(2.0 * DAY) as i64);
        let mut first = true;
        loop {
            if !first && rng.random::<f64>() < cfg.drift_prob_on_revision {
                pref = (pref + 1 + rng.random_range(0..k - 1)) % k;
            }
            first = false;
            let age_years = (ts - START_TS) as f64 / (365.0 * DAY);
            resumes.push(ResumeRecord {
                user: uid.clone(),
                ts,
                text: world.resume(pref, &mut rng),
                attrs: vec![experience + age_years, education],
            });
            truth.preferences.push(PrefRecord {
                user: uid.clone(),
                ts,
                pref_topic: pref,
            });
            let span = (gap.sample(&mut rng) as i64).max(60);
            let end = ts + span;

            let n_consistent = 1 + poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            let mut stamps: Vec<i64> = (0..n_consistent).map(|_| rng.random_range(ts..end)).collect();
            stamps.sort_unstable();
            let consistent: Vec<(usize, InteractionKind)> = (0..n_consistent)
                .map(|_| {
                    let r = pick_weighted(&topic_weights[pref], topic_totals[pref], &mut rng);
                    (topic_jobs[pref][r], pick_kind(&mut rng))
                })
                .collect();

            let mut prev = ts;
            for (c, (&stamp, &(job, kind))) in stamps.iter().zip(&consistent).enumerate() {
                let _ = c;
                while noise_rng.random::<f64>() < cfg.noise_pct {
                    let mut other = noise_rng.random_range(0..cfg.n_jobs - topic_jobs[pref].len());
                    // skip over the preferred topic's jobs: jobs are laid out j % k == topic
                    other = nth_job_outside(other, pref, k, cfg.n_jobs);
                    let nts = noise_rng.random_range(prev..=stamp);
                    let nkind = pick_kind(&mut noise_rng);
                    interactions.push(InteractionRecord {
                        user: uid.clone(),
                        job: jobs[other].job.clone(),
                        ts: nts,
                        kind: nkind,
                    });
                    truth.interactions.push(NoiseRecord {
                        user: uid.clone(),
                        job: jobs[other].job.clone(),
                        ts: nts,
                        noisy: true,
                    });
                    prev = nts;
                }
                interactions.push(InteractionRecord {
                    user: uid.clone(),
                    job: jobs[job].job.clone(),
                    ts: stamp,
                    kind,
                });
                truth.interactions.push(NoiseRecord {
                    user: uid.clone(),
                    job: jobs[job].job.clone(),
                    ts: stamp,
                    noisy: false,
                });
                prev = stamp;
            }
            if end >= horizon {
                break;
            }
            ts = end;
        }
    }
    Ok(Generated {
        jobs,
        resumes,
        interactions,
        truth,
    })
}

/// The `n`-th job (in index order) whose topic `j % k` differs from `topic`.
fn nth_job_outside(n: usize, topic: usize, k: usize, n_jobs: usize) -> usize {
    let mut seen = 0;
    for j in 0..n_jobs {
        if j % k != topic {
            if seen == n {
                return j;
            }
            seen += 1;
        }
    }
    unreachable!("index within the outside-topic job count")
}

/// Generate a dataset with its ground truth attached.
pub fn generate(cfg: &GenConfig) -> Result<(Dataset, GroundTruth)> {
    let g = generate_records(cfg)?;
    let ds = g.to_dataset()?;
    Ok((ds, g.truth))
}

/// One dataset per noise rate over an identical world.
pub fn noise_sweep(base: &GenConfig, rhos: &[f64]) -> Result<Vec<(f64, Generated)>> {
    if rhos.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("noise rates must be sorted"));
    }
    rhos.iter()
        .map(|&rho| {
            let cfg = GenConfig {
                noise_pct: rho,
                ..base.clone()
            };
            Ok((rho, generate_records(&cfg)?))
        })
        .collect()
}
