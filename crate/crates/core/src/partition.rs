//! k-means++ / Lloyd partitioning of the reduced space and nearest-centroid
//! assignment.
//!
//! Points are visited in a canonical order (lexicographic on coordinates)
//! so that seeding and centroid accumulation do not depend on input row
//! order. Seeding is greedy k-means++ with draws from a ChaCha stream keyed
//! by `(seed, step)`.
//! Distances are computed in parallel per point; every reduction runs
//! sequentially, so results are bitwise identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// One row per leaf, in seeding order.
    pub centroids: Matrix,
    /// Leaf of every input row.
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeansFit {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.rows()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Seeded stream for one seeding step.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn canonical_order(points: &Matrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.rows()).collect();
    order.sort_by(|&a, &b| {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// One weighted draw over `d2`; points already at distance 0 are never picked.
fn draw(d2: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in d2.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if acc > target {
                return i;
            }
        }
    }
    last_positive
}

/// Greedy k-means++: each step draws `2 + ln k` candidates and keeps the
/// one that lowers the total squared distance most (first drawn on ties).
fn plus_plus_seeding(points: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = points.rows();
    let trials = 2 + (k as f64).ln() as usize;
    let mut centroids = Matrix::zeros(k, points.cols());
    let mut chosen = vec![false; n];

    let first = step_rng(seed, 0).random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    chosen[first] = true;

    let mut d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| squared_distance(points.row(i), points.row(first)))
        .collect();

    for step in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut rng = step_rng(seed, step as u64);
            let mut best: Option<(usize, f64, Vec<f64>)> = None;
            for _ in 0..trials {
                let cand = draw(&d2, total, &mut rng);
                let c = points.row(cand);
                let next: Vec<f64> = d2
                    .par_iter()
                    .enumerate()
                    .map(|(i, &w)| w.min(squared_distance(points.row(i), c)))
                    .collect();
                let potential: f64 = next.iter().sum();
                if best.as_ref().is_none_or(|b| potential < b.1) {
                    best = Some((cand, potential, next));
                }
            }
            let (pick, _, next) = best.expect("at least two trials");
            d2 = next;
            pick
        } else {
            // every point sits on a centroid already
            let pick = chosen.iter().position(|c| !c).unwrap_or(0);
            let c = points.row(pick).to_vec();
            d2.par_iter_mut().enumerate().for_each(|(i, w)| {
                *w = w.min(squared_distance(points.row(i), &c));
            });
            pick
        };
        chosen[pick] = true;
        centroids.row_mut(step).copy_from_slice(points.row(pick));
    }
    centroids
}

/// Clusters the rows of `points` into `k` leaves.
pub fn kmeans_fit(points: &Matrix, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeansFit> {
    let n = points.rows();
    if k < 2 {
        return Err(Error::NPartitions(k));
    }
    if n < k {
        return Err(Error::TooFewPoints { needed: k, got: n });
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }

    let order = canonical_order(points);
    let mut canon = Matrix::zeros(n, points.cols());
    for (dst, &src) in order.iter().enumerate() {
        canon.row_mut(dst).copy_from_slice(points.row(src));
    }
    let points = canon;

    let mut centroids = plus_plus_seeding(&points, k, seed);
    let mut history = Vec::new();
    let mut labels;
    let mut iter = 0;
    loop {
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&centroids, points.row(i)))
            .collect();
        let inertia: f64 = assigned.iter().map(|&(_, d)| d).sum();
        labels = assigned.iter().map(|&(l, _)| l).collect::<Vec<_>>();
        let converged = match history.last() {
            Some(&prev) if prev > 0.0 => (prev - inertia) / prev < tol,
            Some(_) => true,
            None => inertia == 0.0,
        };
        history.push(inertia);
        if converged || iter == max_iters {
            break;
        }
        iter += 1;

        let mut sums = Matrix::zeros(k, points.cols());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for (j, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f64;
                for (dst, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *dst = s * inv;
                }
            }
        }
        repair_empty(&points, &mut centroids, &mut labels, &mut counts);
    }

    let mut original_labels = vec![0; n];
    for (canon_idx, &src) in order.iter().enumerate() {
        original_labels[src] = labels[canon_idx];
    }
    Ok(KMeansFit {
        centroids,
        labels: original_labels,
        inertia: *history.last().expect("at least one assignment"),
        inertia_history: history,
    })
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Points sitting exactly on their centroid are never moved.
fn repair_empty(points: &Matrix, centroids: &mut Matrix, labels: &mut [usize], counts: &mut [usize]) {
    if counts.iter().all(|&c| c > 0) {
        return;
    }
    let mut dist: Vec<f64> = (0..points.rows())
        .into_par_iter()
        .map(|i| squared_distance(points.row(i), centroids.row(labels[i])))
        .collect();
    for empty in 0..counts.len() {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for (i, &d) in dist.iter().enumerate() {
            if d > 0.0 && counts[labels[i]] > 1 && best.is_none_or(|b| d > dist[b]) {
                best = Some(i);
            }
        }
        let Some(i) = best else { return };
        counts[labels[i]] -= 1;
        counts[empty] = 1;
        labels[i] = empty;
        dist[i] = 0.0;
        centroids.row_mut(empty).copy_from_slice(points.row(i));
    }
}

/// Nearest centroid for every row of `vectors`; ties go to the lowest index.
pub fn assign(centroids: &Matrix, vectors: &Matrix) -> Result<Vec<usize>> {
    if vectors.cols() != centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.cols(),
            actual: vectors.cols(),
        });
    }
    Ok((0..vectors.rows())
        .into_par_iter()
        .map(|i| nearest(centroids, vectors.row(i)).0)
        .collect())
}
