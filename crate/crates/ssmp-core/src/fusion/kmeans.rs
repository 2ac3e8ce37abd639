//! Seeded k-means over latent vectors (k-means++ initialization, Lloyd
//! iterations, empty clusters re-seeded from the farthest point).

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub struct KmeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KmeansResult> {
    const MAX_ITERS: usize = 100;
    const SHIFT_TOL: f64 = 1e-6;

    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!(
            "kmeans: k = {k} outside [1, {}]",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut draw = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if draw < w {
                    chosen = i;
                    break;
                }
                draw -= w;
            }
            chosen
        };
        centroids.push(points[next].clone());
    }

    let mut assignment = vec![0usize; points.len()];
    for _iter in 0..MAX_ITERS {
        for (i, p) in points.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = dist2(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            assignment[i] = best.0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, &v) in sums[assignment[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        // Re-seed empty clusters from the point farthest from its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, p), (j, q)| {
                        let di = dist2(p, &centroids[assignment[*i]]);
                        let dj = dist2(q, &centroids[assignment[*j]]);
                        di.partial_cmp(&dj).unwrap().then(j.cmp(i))
                    })
                    .map(|(i, _)| i)
                    .expect("non-empty point set");
                sums[c] = points[far].clone();
                counts[c] = 1;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(dist2(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < SHIFT_TOL {
            break;
        }
    }

    // Final assignment against the converged centroids.
    let mut cluster_sizes = vec![0usize; k];
    for (i, p) in points.iter().enumerate() {
        let mut best = (0usize, f64::INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let d = dist2(p, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        assignment[i] = best.0;
        cluster_sizes[best.0] += 1;
    }
    Ok(KmeansResult {
        centroids,
        assignment,
        cluster_sizes,
    })
}
