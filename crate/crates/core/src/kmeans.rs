//! Seeded Lloyd k-means with k-means++ seeding, SSE curves and elbow selection.
//!
//! Every random decision is drawn from a ChaCha8 stream seeded by the caller, and
//! assignment ties go to the lowest centroid index, so a fit is a pure function of
//! `(points, k, seed, params)`. The assignment step runs in parallel but each point's
//! result is computed independently and the SSE is summed sequentially, which keeps
//! the output bit-identical to a single-threaded run.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::TermWeightVector;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("k must be positive")]
    ZeroK,
    #[error("no input vectors")]
    Empty,
    #[error("k = {k} exceeds the {distinct} distinct input vectors")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("elbow selection needs at least 3 points, got {0}")]
    TooFewCurvePoints(usize),
    #[error("elbow curve k values must be consecutive and ascending")]
    NonConsecutive,
}

/// A point k-means can cluster. Centroids are always dense.
pub trait Observation: Sync {
    fn dim(&self) -> usize;

    /// Squared Euclidean distance to `centroid`, whose squared norm is supplied.
    fn squared_distance(&self, centroid: &[f64], centroid_sq_norm: f64) -> f64;

    fn add_into(&self, acc: &mut [f64]);

    /// Non-zero coordinates as `(index, bits)`, used to count distinct points.
    fn fingerprint(&self) -> Vec<(usize, u64)>;
}

impl Observation for Vec<f64> {
    fn dim(&self) -> usize {
        self.len()
    }

    fn squared_distance(&self, centroid: &[f64], _: f64) -> f64 {
        self.iter().zip(centroid).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn add_into(&self, acc: &mut [f64]) {
        for (a, x) in acc.iter_mut().zip(self) {
            *a += x;
        }
    }

    fn fingerprint(&self) -> Vec<(usize, u64)> {
        self.iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, x.to_bits()))
            .collect()
    }
}

impl Observation for TermWeightVector {
    fn dim(&self) -> usize {
        self.dim
    }

    fn squared_distance(&self, centroid: &[f64], centroid_sq_norm: f64) -> f64 {
        let mut d = centroid_sq_norm;
        for &(i, x) in &self.entries {
            let c = centroid[i];
            d += (x - c) * (x - c) - c * c;
        }
        d.max(0.0)
    }

    fn add_into(&self, acc: &mut [f64]) {
        for &(i, x) in &self.entries {
            acc[i] += x;
        }
    }

    fn fingerprint(&self) -> Vec<(usize, u64)> {
        self.entries.iter().map(|&(i, x)| (i, x.to_bits())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    pub seed: u64,
    pub iterations: usize,
    /// SSE after every assignment step, starting with the seeded centroids.
    pub sse_history: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Indices of the members of each cluster, in input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &a) in self.assignments.iter().enumerate() {
            m[a].push(i);
        }
        m
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn check_input<V: Observation>(points: &[V], k: usize) -> Result<usize, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    let first = points.first().ok_or(KMeansError::Empty)?;
    let dim = first.dim();
    if let Some((index, p)) = points.iter().enumerate().find(|(_, p)| p.dim() != dim) {
        return Err(KMeansError::DimensionMismatch { index, expected: dim, found: p.dim() });
    }
    let distinct = count_distinct(points);
    if k > distinct {
        return Err(KMeansError::TooFewDistinct { k, distinct });
    }
    Ok(dim)
}

pub fn count_distinct<V: Observation>(points: &[V]) -> usize {
    points.iter().map(Observation::fingerprint).collect::<HashSet<_>>().len()
}

fn densify<V: Observation>(p: &V, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    p.add_into(&mut v);
    v
}

fn plus_plus_init<V: Observation>(points: &[V], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centroids.push(densify(&points[first], dim));
    let mut nearest: Vec<f64> = points
        .par_iter()
        .map(|p| p.squared_distance(&centroids[0], sq_norm(&centroids[0])))
        .collect();

    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        // total > 0 because k never exceeds the number of distinct points.
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &d) in nearest.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            chosen = Some(i);
            if acc > target {
                break;
            }
        }
        let chosen = chosen.expect("a point with positive distance exists");
        let c = densify(&points[chosen], dim);
        let c_norm = sq_norm(&c);
        nearest
            .par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(p.squared_distance(&c, c_norm)));
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid (lowest index on ties) and its squared distance, per point.
fn assign<V: Observation>(points: &[V], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let norms: Vec<f64> = centroids.iter().map(|c| sq_norm(c)).collect();
    points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = p.squared_distance(c, norms[j]);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// Recomputes centroids as member means. Empty clusters take the point farthest from
/// its centroid among clusters with more than one member.
fn update<V: Observation>(
    points: &[V],
    k: usize,
    dim: usize,
    assignments: &mut [usize],
    dists: &mut [f64],
) -> Vec<Vec<f64>> {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] != 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in dists.iter().enumerate() {
            if sizes[assignments[i]] > 1 && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("n >= k guarantees a donor cluster");
        sizes[assignments[i]] -= 1;
        sizes[empty] = 1;
        assignments[i] = empty;
        dists[i] = 0.0;
    }

    let mut sums = vec![vec![0.0; dim]; k];
    for (p, &a) in points.iter().zip(assignments.iter()) {
        p.add_into(&mut sums[a]);
    }
    for (s, &n) in sums.iter_mut().zip(&sizes) {
        let inv = n as f64;
        for x in s.iter_mut() {
            *x /= inv;
        }
    }
    sums
}

fn max_shift(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub fn kmeans_fit<V: Observation>(
    points: &[V],
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusterModel, KMeansError> {
    let dim = check_input(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, dim, &mut rng);

    let (mut assignments, mut dists) = assign(points, &centroids);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;

    for it in 1..=params.max_iter.max(1) {
        let new_centroids = update(points, k, dim, &mut assignments, &mut dists);
        let shift = max_shift(&centroids, &new_centroids);
        centroids = new_centroids;
        let (next, next_dists) = assign(points, &centroids);
        let changed = next != assignments;
        assignments = next;
        dists = next_dists;
        history.push(dists.iter().sum());
        iterations = it;
        if !changed || shift < params.tol {
            break;
        }
    }

    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        sse: *history.last().expect("history is never empty"),
        seed,
        iterations,
        sse_history: history,
    })
}

/// Sum of squared distances from each point to its assigned centroid, recomputed from
/// scratch with dense arithmetic.
pub fn recompute_sse<V: Observation>(points: &[V], model: &ClusterModel) -> f64 {
    points
        .iter()
        .zip(&model.assignments)
        .map(|(p, &a)| {
            let c = &model.centroids[a];
            densify(p, c.len()).iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        })
        .sum()
}

/// One independent fit per `k`, all with the same seed.
pub fn sse_curve<V: Observation>(
    points: &[V],
    k_values: &[usize],
    seed: u64,
    params: &KMeansParams,
) -> Result<Vec<(usize, f64)>, KMeansError> {
    k_values
        .iter()
        .map(|&k| kmeans_fit(points, k, seed, params).map(|m| (k, m.sse)))
        .collect()
}

/// Interior k with the largest second difference of the SSE curve; ties go to the
/// smallest k.
pub fn elbow_select(curve: &[(usize, f64)]) -> Result<usize, KMeansError> {
    if curve.len() < 3 {
        return Err(KMeansError::TooFewCurvePoints(curve.len()));
    }
    if curve.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(KMeansError::NonConsecutive);
    }
    let mut best: Option<(usize, f64)> = None;
    for w in curve.windows(3) {
        let second = (w[0].1 - w[1].1) - (w[1].1 - w[2].1);
        if best.is_none_or(|(_, b)| second > b) {
            best = Some((w[1].0, second));
        }
    }
    Ok(best.expect("at least one interior point").0)
}
