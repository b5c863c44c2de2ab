//! Coarse semantic grouping of users and jobs with K-Means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

/// `concat(topic_vector, attributes)`.
pub fn build_feature(topic_vector: &[f64], attributes: &[f64]) -> Result<Vec<f64>> {
    if topic_vector.iter().chain(attributes).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("feature input".into()));
    }
    let mut v = Vec::with_capacity(topic_vector.len() + attributes.len());
    v.extend_from_slice(topic_vector);
    v.extend_from_slice(attributes);
    Ok(v)
}

/// Number of groups for `n_entities` at one group per `ratio` entities.
pub fn choose_k(n_entities: usize, ratio: f64) -> usize {
    ((n_entities as f64 / ratio).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment pass.
    pub inertia_trace: Vec<f64>,
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
pub fn nearest(feature: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(feature, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn assign_group(feature: &[f64], clustering: &Clustering) -> Result<usize> {
    let dim = clustering.centroids.first().map_or(0, |c| c.len());
    if feature.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: feature.len(),
        });
    }
    Ok(nearest(feature, &clustering.centroids).0)
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    if r < d {
                        pick = i;
                        break;
                    }
                    r -= d;
                }
            }
            if d2[pick] == 0.0 {
                // rounding at the tail; take the last point with mass
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap();
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Lloyd iterations from k-means++ seeding until the assignment stops changing.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!(
            "K = {k} must be in 1..={} (number of points)",
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: p.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let nearest_all = par::map(points, |p| nearest(p, &centroids));
        let new_assignment: Vec<usize> = nearest_all.iter().map(|x| x.0).collect();
        trace.push(nearest_all.iter().map(|x| x.1).sum());
        if new_assignment == assignment {
            break;
        }
        assignment = new_assignment;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut dist: Vec<f64> = nearest_all.iter().map(|x| x.1).collect();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // reseed at the point farthest from its current centroid
                let far = (0..points.len())
                    .fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
                centroids[c] = points[far].clone();
                dist[far] = 0.0;
            }
        }
    }
    // final assignment against the final centroids
    let nearest_all = par::map(points, |p| nearest(p, &centroids));
    let assignment: Vec<usize> = nearest_all.iter().map(|x| x.0).collect();
    let inertia: f64 = nearest_all.iter().map(|x| x.1).sum();
    if trace.last() != Some(&inertia) {
        trace.push(inertia);
    }
    Ok(Clustering {
        k,
        centroids,
        assignment,
        inertia,
        inertia_trace: trace,
    })
}
