//! Standardisation, k-means, silhouette-based model selection and medoids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Rng};
use rand::Rng as _;

/// Smallest standard deviation used when scaling a feature.
pub const SIGMA_FLOOR: f64 = 1e-9;
/// Lloyd iteration cap.
pub const MAX_ITERATIONS: usize = 100;
/// Default candidate range for `select_k`.
pub const DEFAULT_K_RANGE: std::ops::RangeInclusive<usize> = 4..=12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("KTooLarge: k={k} exceeds {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("KTooSmall: k={0} (need at least 2)")]
    KTooSmall(usize),
    #[error("SingleCluster: silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("TooFewPoints: {n} points, need more than {needed}")]
    TooFewPoints { n: usize, needed: usize },
    #[error("NonFinite: input contains NaN or infinity")]
    NonFinite,
}

/// Per-feature affine scaling to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation of each column.
    pub fn fit<V: AsRef<[f64]>>(rows: &[V]) -> Self {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, x) in mean.iter_mut().zip(row.as_ref()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((v, x), m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(SIGMA_FLOOR)).collect();
        Standardization { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }

    pub fn apply_all<V: AsRef<[f64]>>(&self, rows: &[V]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r.as_ref())).collect()
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Sum of squared distances of points to their centroids.
    pub fn inertia(&self, x: &[Vec<f64>]) -> f64 {
        inertia(x, &self.assignments, self.k())
    }
}

/// Sum of squared distances to cluster means for an arbitrary assignment.
pub fn inertia(x: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let centroids = means(x, assignments, k);
    x.iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn means(x: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = x.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in x.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Farthest-point seeding: a seeded uniform first pick, then repeatedly the
/// unchosen point farthest from its nearest chosen one (ties to the lowest index).
fn farthest_point_init(x: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<usize> {
    let first = rng.random_range(0..x.len());
    let mut chosen = vec![first];
    let mut taken = vec![false; x.len()];
    taken[first] = true;
    let mut closest: Vec<f64> = x.iter().map(|p| sq_dist(p, &x[first])).collect();
    while chosen.len() < k {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in closest.iter().enumerate() {
            if !taken[i] && d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
        taken[best] = true;
        for (i, p) in x.iter().enumerate() {
            closest[i] = closest[i].min(sq_dist(p, &x[best]));
        }
    }
    chosen
}

/// Moves points into empty clusters: each empty cluster takes the point
/// farthest from its current centroid among clusters with more than one member.
fn repair_empty(x: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let mut victim = usize::MAX;
        let mut victim_d = f64::NEG_INFINITY;
        for (i, p) in x.iter().enumerate() {
            let a = assignments[i];
            if counts[a] > 1 {
                let d = sq_dist(p, &centroids[a]);
                if d > victim_d {
                    victim_d = d;
                    victim = i;
                }
            }
        }
        if victim == usize::MAX {
            return;
        }
        assignments[victim] = empty;
        centroids[empty] = x[victim].clone();
    }
}

fn check_input(x: &[Vec<f64>], k: usize) -> Result<(), ClusterError> {
    if k < 2 {
        return Err(ClusterError::KTooSmall(k));
    }
    if k > x.len() {
        return Err(ClusterError::KTooLarge { k, n: x.len() });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    Ok(())
}

/// Lloyd's algorithm from farthest-point seeding.
pub fn kmeans(x: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans, ClusterError> {
    check_input(x, k)?;
    let mut rng = stream_rng(seed, "kmeans-init");
    let mut centroids: Vec<Vec<f64>> = farthest_point_init(x, k, &mut rng)
        .into_iter()
        .map(|i| x[i].clone())
        .collect();

    let mut assignments: Vec<usize> = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut next = assign_all(x, &centroids);
        repair_empty(x, &mut next, &mut centroids);
        let unchanged = next == assignments;
        assignments = next;
        centroids = means(x, &assignments, k);
        if unchanged {
            break;
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        iterations,
    })
}

fn assign_all(x: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        x.par_iter().map(|p| nearest(p, centroids)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        x.iter().map(|p| nearest(p, centroids)).collect()
    }
}

/// Mean silhouette coefficient. Points in singleton clusters score 0, as do
/// points with `a = b = 0`.
pub fn silhouette(x: &[Vec<f64>], assignments: &[usize]) -> Result<f64, ClusterError> {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }

    let score = |i: usize| -> f64 {
        let own = assignments[i];
        if sizes[own] <= 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; k];
        for (j, p) in x.iter().enumerate() {
            if j != i {
                sums[assignments[j]] += dist(&x[i], p);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            (b - a) / m
        } else {
            0.0
        }
    };

    #[cfg(feature = "parallel")]
    let total: f64 = {
        use rayon::prelude::*;
        // Collect first so the summation order does not depend on scheduling.
        let per: Vec<f64> = (0..x.len()).into_par_iter().map(score).collect();
        per.iter().sum()
    };
    #[cfg(not(feature = "parallel"))]
    let total: f64 = (0..x.len()).map(score).sum();
    Ok(total / x.len() as f64)
}

/// Index of the highest score; ties go to the earliest entry.
pub fn first_argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Member of each cluster minimising summed Euclidean distance to the other
/// members; ties go to the lowest id. `ids[i]` is the id of point `i`.
pub fn representatives(x: &[Vec<f64>], assignments: &[usize], ids: &[u64]) -> Vec<u64> {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    members
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let cost = |i: usize| m.iter().map(|&j| dist(&x[i], &x[j])).sum::<f64>();
            let mut best = m[0];
            let mut best_cost = cost(best);
            for &i in &m[1..] {
                let c = cost(i);
                if c < best_cost || (c == best_cost && ids[i] < ids[best]) {
                    best = i;
                    best_cost = c;
                }
            }
            ids[best]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub medoid_ids: Vec<u64>,
    pub silhouette: f64,
}

impl ClusterResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn report(&self) -> ClusterReport {
        ClusterReport {
            k: self.k,
            silhouette: self.silhouette,
            medoid_ids: self.medoid_ids.clone(),
            sizes: self.sizes(),
        }
    }
}

/// Persisted summary of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterReport {
    pub k: usize,
    pub silhouette: f64,
    pub medoid_ids: Vec<u64>,
    pub sizes: Vec<usize>,
}

/// Runs k-means for every k in `k_range` and keeps the best silhouette
/// (ties to the smaller k).
pub fn select_k(
    x: &[Vec<f64>],
    ids: &[u64],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<ClusterResult, ClusterError> {
    let k_max = *k_range.end();
    if x.len() <= k_max {
        return Err(ClusterError::TooFewPoints { n: x.len(), needed: k_max });
    }
    let mut runs = Vec::new();
    let mut scores = Vec::new();
    for k in k_range {
        let run = kmeans(x, k, seed)?;
        scores.push(silhouette(x, &run.assignments)?);
        runs.push(run);
    }
    let best = first_argmax(&scores).ok_or(ClusterError::TooFewPoints { n: x.len(), needed: 2 })?;
    let run = runs.swap_remove(best);
    let medoid_ids = representatives(x, &run.assignments, ids);
    Ok(ClusterResult {
        k: run.k(),
        assignments: run.assignments,
        centroids: run.centroids,
        medoid_ids,
        silhouette: scores[best],
    })
}
