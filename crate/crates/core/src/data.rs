//! Users, jobs, documents, interactions and resume-revision sessions.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::GroundTruth;

/// Interaction kinds recorded in platform logs. All kinds count toward sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Browse,
    Click,
    Chat,
    Apply,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 4] = [
        InteractionKind::Browse,
        InteractionKind::Click,
        InteractionKind::Chat,
        InteractionKind::Apply,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub token_counts: BTreeMap<String, u32>,
}

/// One resume version. Attributes are min-max normalized over the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumeVersion {
    pub ts: i64,
    pub document: usize,
    pub attributes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub id: String,
    /// Strictly increasing in `ts`, never empty.
    pub resume_versions: Vec<ResumeVersion>,
}

impl User {
    /// Index of the resume version governing timestamp `ts`. Interactions
    /// before the first version attach to version 0.
    pub fn version_at(&self, ts: i64) -> usize {
        self.resume_versions
            .partition_point(|v| v.ts <= ts)
            .saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: String,
    pub document: usize,
    pub attributes: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub job: usize,
    pub ts: i64,
    pub kind: InteractionKind,
}

impl Interaction {
    fn sort_key(&self) -> (i64, usize, InteractionKind) {
        (self.ts, self.job, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub user: usize,
    pub resume_version: usize,
    pub interactions: Vec<Interaction>,
}

impl Session {
    pub fn jobs(&self) -> impl Iterator<Item = usize> + '_ {
        self.interactions.iter().map(|i| i.job)
    }
}

/// A fully resolved dataset. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub users: Vec<User>,
    pub jobs: Vec<Job>,
    pub documents: Vec<Document>,
    /// All interactions, grouped by user and sorted within each user.
    pub interactions: Vec<Interaction>,
    pub sessions: Vec<Session>,
    /// Present for synthetic datasets only.
    pub annotations: Option<GroundTruth>,
}

impl Dataset {
    /// Number of job-position classes `M`.
    pub fn n_labels(&self) -> usize {
        self.jobs.iter().map(|j| j.label + 1).max().unwrap_or(0)
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.iter().position(|u| u.id == id)
    }

    pub fn job_index(&self, id: &str) -> Option<usize> {
        self.jobs.iter().position(|j| j.id == id)
    }

    /// Build from raw records. Records that violate per-line rules are
    /// skipped and counted; unresolvable interaction references are errors.
    pub fn from_records(
        jobs: &[(usize, JobRecord)],
        resumes: &[(usize, ResumeRecord)],
        interactions: &[(usize, InteractionRecord)],
        files: &RecordFiles,
    ) -> Result<(Dataset, IngestReport)> {
        let mut report = IngestReport::default();
        let mut ds = Dataset::default();

        let mut job_ids: HashMap<&str, usize> = HashMap::new();
        let mut job_attr_dim = None;
        for (line, rec) in jobs {
            if job_ids.contains_key(rec.job.as_str())
                || !dims_ok(&mut job_attr_dim, &rec.attrs)
                || rec.label < 0
            {
                log::warn!("{}:{}: skipping job record", files.jobs, line);
                report.warnings += 1;
                continue;
            }
            let doc = ds.documents.len();
            ds.documents.push(Document {
                id: format!("job:{}", rec.job),
                token_counts: tokenize(&rec.text),
            });
            job_ids.insert(rec.job.as_str(), ds.jobs.len());
            ds.jobs.push(Job {
                id: rec.job.clone(),
                document: doc,
                attributes: rec.attrs.clone(),
                label: rec.label as usize,
            });
        }

        let mut user_ids: HashMap<&str, usize> = HashMap::new();
        let mut pending: Vec<Vec<(i64, &ResumeRecord)>> = Vec::new();
        let mut user_attr_dim = None;
        for (line, rec) in resumes {
            if !dims_ok(&mut user_attr_dim, &rec.attrs) {
                log::warn!("{}:{}: skipping resume record", files.resumes, line);
                report.warnings += 1;
                continue;
            }
            let idx = *user_ids.entry(rec.user.as_str()).or_insert_with(|| {
                pending.push(Vec::new());
                pending.len() - 1
            });
            if pending[idx].iter().any(|(ts, _)| *ts == rec.ts) {
                log::warn!("{}:{}: duplicate resume timestamp", files.resumes, line);
                report.warnings += 1;
                continue;
            }
            pending[idx].push((rec.ts, rec));
        }
        let mut ordered: Vec<(&str, usize)> = user_ids.iter().map(|(k, v)| (*k, *v)).collect();
        ordered.sort_by_key(|(_, v)| *v);
        for (id, idx) in ordered {
            let mut versions = std::mem::take(&mut pending[idx]);
            versions.sort_by_key(|(ts, _)| *ts);
            let resume_versions = versions
                .into_iter()
                .map(|(ts, rec)| {
                    let doc = ds.documents.len();
                    ds.documents.push(Document {
                        id: format!("resume:{}:{}", id, ts),
                        token_counts: tokenize(&rec.text),
                    });
                    ResumeVersion {
                        ts,
                        document: doc,
                        attributes: rec.attrs.clone(),
                    }
                })
                .collect();
            ds.users.push(User {
                id: id.to_string(),
                resume_versions,
            });
        }

        let mut per_user: Vec<Vec<Interaction>> = vec![Vec::new(); ds.users.len()];
        for (line, rec) in interactions {
            let user = *user_ids.get(rec.user.as_str()).ok_or_else(|| Error::Reference {
                file: files.interactions.clone(),
                line: *line,
                message: format!("unknown user `{}`", rec.user),
            })?;
            let job = *job_ids.get(rec.job.as_str()).ok_or_else(|| Error::Reference {
                file: files.interactions.clone(),
                line: *line,
                message: format!("unknown job `{}`", rec.job),
            })?;
            per_user[user].push(Interaction {
                user,
                job,
                ts: rec.ts,
                kind: rec.kind,
            });
        }

        normalize_attributes(ds.jobs.iter_mut().map(|j| &mut j.attributes));
        normalize_attributes(
            ds.users
                .iter_mut()
                .flat_map(|u| u.resume_versions.iter_mut().map(|v| &mut v.attributes)),
        );

        for (u, list) in per_user.into_iter().enumerate() {
            let sessions = segment_sessions(&ds.users[u], &list);
            for s in &sessions {
                ds.interactions.extend_from_slice(&s.interactions);
            }
            ds.sessions.extend(sessions);
        }
        Ok((ds, report))
    }
}

fn dims_ok(expected: &mut Option<usize>, attrs: &[f64]) -> bool {
    if attrs.iter().any(|a| !a.is_finite()) {
        return false;
    }
    match expected {
        Some(d) => *d == attrs.len(),
        None => {
            *expected = Some(attrs.len());
            true
        }
    }
}

/// Min-max normalize each attribute column in place. Constant columns map to 0.
fn normalize_attributes<'a>(rows: impl Iterator<Item = &'a mut Vec<f64>>) {
    let mut rows: Vec<&mut Vec<f64>> = rows.collect();
    let Some(dim) = rows.first().map(|r| r.len()) else {
        return;
    };
    for c in 0..dim {
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[c]), hi.max(r[c]))
            });
        let span = hi - lo;
        for r in rows.iter_mut() {
            r[c] = if span > 0.0 { (r[c] - lo) / span } else { 0.0 };
        }
    }
}

/// Split a user's interactions at resume-revision timestamps.
///
/// An interaction exactly at a revision timestamp belongs to the new session.
/// Input order does not matter; the result is sorted by `(ts, job, kind)`.
pub fn segment_sessions(user: &User, interactions: &[Interaction]) -> Vec<Session> {
    let user_idx = match interactions.first() {
        Some(i) => i.user,
        None => return Vec::new(),
    };
    let mut sorted = interactions.to_vec();
    sorted.sort_by_key(Interaction::sort_key);

    let mut sessions: Vec<Session> = Vec::new();
    for it in sorted {
        let v = user.version_at(it.ts);
        match sessions.last_mut() {
            Some(s) if s.resume_version == v => s.interactions.push(it),
            _ => sessions.push(Session {
                user: user_idx,
                resume_version: v,
                interactions: vec![it],
            }),
        }
    }
    sessions
}

/// Lowercase, split on non-alphanumeric runs, drop tokens shorter than two characters.
pub fn tokenize(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for tok in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
    {
        *counts.entry(tok.to_lowercase()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: String,
    pub job: String,
    pub ts: i64,
    pub kind: InteractionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeRecord {
    pub user: String,
    pub ts: i64,
    pub text: String,
    pub attrs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job: String,
    pub text: String,
    pub attrs: Vec<f64>,
    pub label: i64,
}

/// File names used in error messages.
#[derive(Debug, Clone)]
pub struct RecordFiles {
    pub interactions: String,
    pub resumes: String,
    pub jobs: String,
}

impl Default for RecordFiles {
    fn default() -> Self {
        RecordFiles {
            interactions: "interactions.jsonl".into(),
            resumes: "resumes.jsonl".into(),
            jobs: "jobs.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    /// Malformed or rule-violating lines that were skipped.
    pub warnings: usize,
}

/// Read a JSON-Lines file into `(line_number, record)` pairs. Blank lines are
/// ignored; lines that fail to parse are counted in `warnings`.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    warnings: &mut usize,
) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(rec) => out.push((i + 1, rec)),
            Err(e) => {
                log::warn!("{}:{}: malformed line: {}", path.display(), i + 1, e);
                *warnings += 1;
            }
        }
    }
    Ok(out)
}

/// Load a dataset from the three JSON-Lines files.
pub fn ingest(
    interaction_file: &Path,
    resume_file: &Path,
    job_file: &Path,
) -> Result<(Dataset, IngestReport)> {
    let mut warnings = 0;
    let jobs = read_jsonl::<JobRecord>(job_file, &mut warnings)?;
    let resumes = read_jsonl::<ResumeRecord>(resume_file, &mut warnings)?;
    let interactions = read_jsonl::<InteractionRecord>(interaction_file, &mut warnings)?;
    let files = RecordFiles {
        interactions: interaction_file.display().to_string(),
        resumes: resume_file.display().to_string(),
        jobs: job_file.display().to_string(),
    };
    let (ds, mut report) = Dataset::from_records(&jobs, &resumes, &interactions, &files)?;
    report.warnings += warnings;
    Ok((ds, report))
}

/// Load `interactions.jsonl`, `resumes.jsonl` and `jobs.jsonl` from a directory.
pub fn ingest_dir(dir: &Path) -> Result<(Dataset, IngestReport)> {
    ingest(
        &dir.join("interactions.jsonl"),
        &dir.join("resumes.jsonl"),
        &dir.join("jobs.jsonl"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(ts: &[i64]) -> User {
        User {
            id: "u".into(),
            resume_versions: ts
                .iter()
                .map(|&t| ResumeVersion {
                    ts: t,
                    document: 0,
                    attributes: vec![],
                })
                .collect(),
        }
    }

    fn at(ts: i64) -> Interaction {
        Interaction {
            user: 0,
            job: 0,
            ts,
            kind: InteractionKind::Click,
        }
    }

    fn session_ts(s: &[Session]) -> Vec<Vec<i64>> {
        s.iter()
            .map(|s| s.interactions.iter().map(|i| i.ts).collect())
            .collect()
    }

    #[test]
    fn no_revision_gives_single_session() {
        let s = segment_sessions(&user(&[0]), &[at(3), at(1), at(2)]);
        assert_eq!(session_ts(&s), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn revision_splits_sessions() {
        let s = segment_sessions(&user(&[0, 4]), &[at(1), at(2), at(5), at(9)]);
        assert_eq!(session_ts(&s), vec![vec![1, 2], vec![5, 9]]);
        assert_eq!(s[1].resume_version, 1);
    }

    #[test]
    fn boundary_interaction_joins_new_session() {
        let s = segment_sessions(&user(&[0, 4]), &[at(3), at(4)]);
        assert_eq!(session_ts(&s), vec![vec![3], vec![4]]);
    }

    #[test]
    fn early_interactions_attach_to_first_version() {
        let s = segment_sessions(&user(&[10, 20]), &[at(1), at(15)]);
        assert_eq!(session_ts(&s), vec![vec![1, 15]]);
        assert_eq!(s[0].resume_version, 0);
    }

    #[test]
    fn empty_partitions_dropped() {
        let s = segment_sessions(&user(&[0, 4, 6, 8]), &[at(1), at(9)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].resume_version, 3);
        assert!(segment_sessions(&user(&[0]), &[]).is_empty());
    }

    #[test]
    fn tokenizer_rules() {
        assert!(tokenize("").is_empty());
        let t = tokenize("Data Engineer, data pipelines");
        assert_eq!(t.len(), 3);
        assert_eq!(t["data"], 2);
        assert_eq!(t["engineer"], 1);
        assert_eq!(t["pipelines"], 1);
        assert!(tokenize("C++").is_empty());
    }

    #[test]
    fn attribute_normalization() {
        let mut rows = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]];
        normalize_attributes(rows.iter_mut());
        assert_eq!(rows, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 0.0]]);
    }
}
