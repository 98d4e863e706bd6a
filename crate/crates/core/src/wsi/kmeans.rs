//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::Tensor2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Tensor2D,
    pub wcss: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &Tensor2D) -> usize {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Within-cluster sum of squared distances.
pub fn wcss(points: &Tensor2D, assignments: &[usize], centroids: &Tensor2D) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(points.row(i), centroids.row(c)))
        .sum()
}

fn seed_centroids(points: &Tensor2D, k: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining points coincide with a centre; take any unused index.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

/// Clusters the rows of `points` into `k` groups, keeping the lowest-WCSS
/// result of `restarts` independently seeded runs (the first on ties).
///
/// Each run stops when an assignment pass changes nothing or after
/// `max_iters` passes. At the fixpoint every point is nearest (lowest index on
/// ties) to its own centroid and every centroid is the mean of its cluster. A
/// centroid that loses all its points is moved to the point farthest from its
/// current centroid.
pub fn kmeans(points: &Tensor2D, k: usize, seed: u64, max_iters: usize, restarts: usize) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} for {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, k, &mut rng, max_iters);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

fn lloyd(points: &Tensor2D, k: usize, rng: &mut ChaCha8Rng, max_iters: usize) -> KMeansResult {
    let n = points.rows();
    let dim = points.cols();
    let mut centroids = seed_centroids(points, k, rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut iterations = 0;

    for it in 0..max_iters.max(1) {
        iterations = it + 1;
        let fresh: Vec<usize> = (0..n).map(|i| nearest(points.row(i), &centroids)).collect();
        if fresh == assignments {
            break;
        }
        assignments = fresh;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            for j in 0..dim {
                centroids.set(c, j, sums[c * dim + j] / counts[c] as f64);
            }
        }
        let mut taken = Vec::new();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .filter(|i| !taken.contains(i))
                .max_by(|&a, &b| {
                    let da = sq_dist(points.row(a), centroids.row(assignments[a]));
                    let db = sq_dist(points.row(b), centroids.row(assignments[b]));
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap_or(0);
            taken.push(far);
            for j in 0..dim {
                centroids.set(c, j, points.get(far, j));
            }
        }
    }
    // The loop can end on its budget right after centroids moved; report the
    // assignment those centroids induce.
    let assignments: Vec<usize> = (0..n).map(|i| nearest(points.row(i), &centroids)).collect();
    let w = wcss(points, &assignments, &centroids);
    KMeansResult {
        assignments,
        centroids,
        wcss: w,
        iterations,
    }
}
