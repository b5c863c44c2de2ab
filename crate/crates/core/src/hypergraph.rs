//! Multi-granular interaction hypergraphs over job-group nodes.
//!
//! Each user group gets one hypergraph. Session hyperedges link every job
//! group visited in one session; transition hyperedges link, for each node,
//! the set of nodes that immediately follow it anywhere in the group's
//! sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Session,
    Transition,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Session => "session",
            EdgeKind::Transition => "transition",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "session" => Some(EdgeKind::Session),
            "transition" => Some(EdgeKind::Transition),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperedge {
    /// Sorted, distinct node indices.
    pub nodes: Vec<usize>,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// Node set plus weighted {0,1} incidence, stored edge by edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    pub n_nodes: usize,
    pub edges: Vec<Hyperedge>,
}

/// One hyperedge per session holding the distinct nodes it visited.
pub fn build_session_hyperedges(sessions: &[Vec<usize>]) -> Vec<Vec<usize>> {
    sessions
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
        .collect()
}

/// For each node with at least one successor (in ascending node order), the
/// set of nodes that immediately follow it in any session.
pub fn build_transition_hyperedges(sessions: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut succ: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for s in sessions {
        for w in s.windows(2) {
            succ.entry(w[0]).or_default().insert(w[1]);
        }
    }
    succ.into_values().map(|s| s.into_iter().collect()).collect()
}

impl Hypergraph {
    /// Build from node sequences with unit weights.
    pub fn from_sessions(n_nodes: usize, sessions: &[Vec<usize>], with_transitions: bool) -> Self {
        let mut edges: Vec<Hyperedge> = build_session_hyperedges(sessions)
            .into_iter()
            .map(|nodes| Hyperedge {
                nodes,
                weight: 1.0,
                kind: EdgeKind::Session,
            })
            .collect();
        if with_transitions {
            edges.extend(build_transition_hyperedges(sessions).into_iter().map(|nodes| Hyperedge {
                nodes,
                weight: 1.0,
                kind: EdgeKind::Transition,
            }));
        }
        Hypergraph { n_nodes, edges }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn incidence(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n_nodes, self.edges.len());
        for (e, edge) in self.edges.iter().enumerate() {
            for &v in &edge.nodes {
                h[(v, e)] = 1.0;
            }
        }
        h
    }

    /// Simple graph obtained by replacing each hyperedge with a clique.
    pub fn clique_expansion(&self) -> SimpleGraph {
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            for (i, &a) in e.nodes.iter().enumerate() {
                for &b in &e.nodes[i + 1..] {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
        SimpleGraph {
            n_nodes: self.n_nodes,
            edges: pairs,
        }
    }

    /// Lines of `node edge weight`.
    pub fn to_triplets(&self) -> String {
        let mut s = String::new();
        for (e, edge) in self.edges.iter().enumerate() {
            for &v in &edge.nodes {
                let _ = writeln!(s, "{v} {e} {}", edge.weight);
            }
        }
        s
    }

    /// Lines of `edge kind`.
    pub fn to_kinds(&self) -> String {
        let mut s = String::new();
        for (e, edge) in self.edges.iter().enumerate() {
            let _ = writeln!(s, "{e} {}", edge.kind.as_str());
        }
        s
    }

    pub fn from_text(n_nodes: usize, triplets: &str, kinds: &str) -> Result<Self> {
        let mut edges: Vec<Hyperedge> = Vec::new();
        for (i, line) in kinds.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (e, k) = (it.next(), it.next());
            let e: usize = e
                .and_then(|e| e.parse().ok())
                .ok_or_else(|| Error::invalid(format!("kinds line {}: bad edge index", i + 1)))?;
            let kind = k
                .and_then(EdgeKind::parse)
                .ok_or_else(|| Error::invalid(format!("kinds line {}: bad edge kind", i + 1)))?;
            if e != edges.len() {
                return Err(Error::invalid(format!("kinds line {}: edges out of order", i + 1)));
            }
            edges.push(Hyperedge {
                nodes: Vec::new(),
                weight: 1.0,
                kind,
            });
        }
        for (i, line) in triplets.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::invalid(format!("triplet line {}: expected `node edge weight`", i + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let v: usize = parts[0].parse().map_err(|_| bad())?;
            let e: usize = parts[1].parse().map_err(|_| bad())?;
            let w: f64 = parts[2].parse().map_err(|_| bad())?;
            if v >= n_nodes || e >= edges.len() {
                return Err(bad());
            }
            edges[e].nodes.push(v);
            edges[e].weight = w;
        }
        for e in &mut edges {
            e.nodes.sort_unstable();
            e.nodes.dedup();
        }
        Ok(Hypergraph { n_nodes, edges })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleGraph {
    pub n_nodes: usize,
    /// Undirected pairs `(a, b)` with `a < b`.
    pub edges: BTreeSet<(usize, usize)>,
}

/// `2|E| / (|V|(|V|−1))`
pub fn density(g: &SimpleGraph) -> Result<f64> {
    if g.n_nodes < 2 {
        return Err(Error::invalid("density needs at least two nodes"));
    }
    let n = g.n_nodes as f64;
    Ok(2.0 * g.edges.len() as f64 / (n * (n - 1.0)))
}

#[derive(Debug, Clone)]
pub struct HyperLaplacian {
    pub laplacian: CsrMatrix,
    pub node_degree: Vec<f64>,
    pub edge_degree: Vec<f64>,
}

/// `L = Dv − H W De⁻¹ Hᵀ`
pub fn laplacian(h: &Hypergraph) -> Result<HyperLaplacian> {
    let n = h.n_nodes;
    let mut node_degree = vec![0.0; n];
    let mut edge_degree = Vec::with_capacity(h.edges.len());
    let mut triplets = Vec::new();
    for (e, edge) in h.edges.iter().enumerate() {
        if edge.nodes.is_empty() {
            return Err(Error::invalid(format!("hyperedge {e} is empty")));
        }
        if !(edge.weight > 0.0) {
            return Err(Error::invalid(format!("hyperedge {e} has non-positive weight")));
        }
        let de = edge.nodes.len() as f64;
        edge_degree.push(de);
        let a = edge.weight / de;
        for &u in &edge.nodes {
            node_degree[u] += edge.weight;
            for &v in &edge.nodes {
                triplets.push((u, v, -a));
            }
        }
    }
    triplets.extend(node_degree.iter().enumerate().map(|(v, &d)| (v, v, d)));
    Ok(HyperLaplacian {
        laplacian: CsrMatrix::from_triplets(n, triplets),
        node_degree,
        edge_degree,
    })
}

/// Raw node features for one user group's hypergraph: the mean topic vector
/// of each node's member jobs followed by `ln(1 + interactions)` of the group
/// with that node.
pub fn build_group_signal(
    node_jobs: &[Vec<usize>],
    job_topics: &[Vec<f64>],
    node_interactions: &[usize],
) -> Result<DMatrix<f64>> {
    let n = node_jobs.len();
    let k = job_topics.first().map_or(0, |t| t.len());
    let mut x = DMatrix::zeros(n, k + 1);
    for (v, jobs) in node_jobs.iter().enumerate() {
        if jobs.is_empty() {
            return Err(Error::invalid(format!("job group node {v} has no jobs")));
        }
        for &j in jobs {
            for c in 0..k {
                x[(v, c)] += job_topics[j][c];
            }
        }
        for c in 0..k {
            x[(v, c)] /= jobs.len() as f64;
        }
        x[(v, k)] = (1.0 + node_interactions[v] as f64).ln();
    }
    Ok(x)
}
