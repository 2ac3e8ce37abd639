//! Point-cloud data model and geometry kernels.
//!
//! The `PointCloud` is the universal currency of the pipeline: ground truth,
//! fused priors, prototypes, and network outputs are all ordered lists of 3D
//! coordinates. Point order is significant — prior fusion exploits index
//! correspondence between clouds decoded by the same decoder.

use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Ordered list of 3D points, optionally tagged with a category.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    category: Option<String>,
}

impl PointCloud {
    /// Builds a cloud, validating the type invariants: at least one point,
    /// all coordinates finite.
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite coordinate at point {i}: {p:?}"
                )));
            }
        }
        Ok(PointCloud {
            points,
            category: None,
        })
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let n = self.points.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Flat `[x0, y0, z0, x1, ...]` copy, handy for feeding tensors.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Inverse of [`PointCloud::flat`].
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::invalid("flat coordinate buffer not divisible by 3"));
        }
        PointCloud::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn validate_pair(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance over an empty cloud"));
    }
    Ok(())
}

/// Mean unsquared nearest-neighbor distance, symmetrized:
/// `(1/2Na) Σ_a min_b ‖p−q‖ + (1/2Nb) Σ_b min_a ‖q−p‖`.
///
/// Zero iff the clouds are equal as point sets. Accelerated by a kd-tree;
/// numerically identical to the brute-force double loop because both paths
/// evaluate the same distance expression and sum in input order.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    validate_pair(a, b)?;
    let index_b = SpatialIndex::build(b.points());
    let index_a = SpatialIndex::build(a.points());
    Ok(chamfer_with_indices(a, b, &index_a, &index_b))
}

pub(crate) fn chamfer_with_indices(
    a: &PointCloud,
    b: &PointCloud,
    index_a: &SpatialIndex,
    index_b: &SpatialIndex,
) -> f64 {
    let mut sum_ab = 0.0;
    for p in a.points() {
        sum_ab += index_b.nearest(p).1;
    }
    let mut sum_ba = 0.0;
    for q in b.points() {
        sum_ba += index_a.nearest(q).1;
    }
    0.5 * sum_ab / a.len() as f64 + 0.5 * sum_ba / b.len() as f64
}

/// Brute-force chamfer distance. Lives here as the reference the accelerated
/// path is checked against; also used directly when an oracle is wanted.
pub fn chamfer_distance_brute(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    validate_pair(a, b)?;
    let min_dist = |p: &[f64; 3], cloud: &PointCloud| {
        let mut best = f64::INFINITY;
        for q in cloud.points() {
            let d = dist(p, q);
            if d < best {
                best = d;
            }
        }
        best
    };
    let sum_ab: f64 = a.points().iter().map(|p| min_dist(p, b)).sum();
    let sum_ba: f64 = b.points().iter().map(|q| min_dist(q, a)).sum();
    Ok(0.5 * sum_ab / a.len() as f64 + 0.5 * sum_ba / b.len() as f64)
}

/// Gradient of [`chamfer_distance`] with respect to the coordinates of `a`,
/// treating the nearest-neighbor assignments as locally constant. Points at
/// exactly zero distance from their match contribute nothing (subgradient).
pub fn chamfer_distance_grad(a: &PointCloud, b: &PointCloud) -> Result<Vec<[f64; 3]>> {
    validate_pair(a, b)?;
    let index_b = SpatialIndex::build(b.points());
    let index_a = SpatialIndex::build(a.points());
    let mut grad = vec![[0.0; 3]; a.len()];
    let na = a.len() as f64;
    let nb = b.len() as f64;

    // Direction a -> b: each point of a pulls toward its match in b.
    for (i, p) in a.points().iter().enumerate() {
        let (j, d) = index_b.nearest(p);
        if d > 0.0 {
            let q = &b.points()[j];
            for axis in 0..3 {
                grad[i][axis] += 0.5 / na * (p[axis] - q[axis]) / d;
            }
        }
    }
    // Direction b -> a: points of b assigned to a's point i pull on it.
    for q in b.points() {
        let (i, d) = index_a.nearest(q);
        if d > 0.0 {
            let p = &a.points()[i];
            for axis in 0..3 {
                grad[i][axis] += 0.5 / nb * (p[axis] - q[axis]) / d;
            }
        }
    }
    Ok(grad)
}

/// Farthest point sampling: the first point is a seeded uniform draw, each
/// subsequent point maximizes the minimum distance to the selected set.
/// Deterministic given `seed`; distance ties resolve to the lowest index.
pub fn farthest_point_sample(pc: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    let n = pc.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "farthest_point_sample: m = {m} outside [1, {n}]"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let pts = pc.points();
    let mut chosen = Vec::with_capacity(m);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = first;
    for _ in 0..m {
        chosen.push(pts[current]);
        for (i, p) in pts.iter().enumerate() {
            let d = dist(p, &pts[current]);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
        let mut best = 0usize;
        for i in 1..n {
            if min_dist[i] > min_dist[best] {
                best = i;
            }
        }
        current = best;
    }
    let mut out = PointCloud::new(chosen)?;
    if let Some(cat) = pc.category() {
        out = out.with_category(cat);
    }
    Ok(out)
}

/// Centers the cloud on its centroid and scales so the farthest point sits
/// exactly on the unit sphere. Errors if every point is identical.
pub fn normalize_unit_sphere(pc: &PointCloud) -> Result<PointCloud> {
    let c = pc.centroid();
    let mut max_norm = 0.0f64;
    let mut shifted = Vec::with_capacity(pc.len());
    for p in pc.points() {
        let s = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        if norm > max_norm {
            max_norm = norm;
        }
        shifted.push(s);
    }
    if max_norm <= f64::EPSILON {
        return Err(Error::DegenerateInput(
            "cannot normalize a cloud whose points are all identical".into(),
        ));
    }
    for s in &mut shifted {
        for a in 0..3 {
            s[a] /= max_norm;
        }
    }
    let mut out = PointCloud::new(shifted)?;
    if let Some(cat) = pc.category() {
        out = out.with_category(cat);
    }
    Ok(out)
}

/// The centering/scaling transform [`normalize_unit_sphere`] applies,
/// exposed so auxiliary geometry (e.g. dense render samples) can be mapped
/// into the same frame as a normalized cloud.
pub fn unit_sphere_transform(pc: &PointCloud) -> Result<([f64; 3], f64)> {
    let c = pc.centroid();
    let mut max_norm = 0.0f64;
    for p in pc.points() {
        let s = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        if norm > max_norm {
            max_norm = norm;
        }
    }
    if max_norm <= f64::EPSILON {
        return Err(Error::DegenerateInput(
            "cannot normalize a cloud whose points are all identical".into(),
        ));
    }
    Ok((c, max_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_cloud(rng: &mut ChaCha12Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn chamfer_identity_is_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let a = random_cloud(&mut rng, 33);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_single_point_pair() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let d = chamfer_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random_cloud(&mut rng, 64);
            let b = random_cloud(&mut rng, 64);
            let fast = chamfer_distance(&a, &b).unwrap();
            let brute = chamfer_distance_brute(&a, &b).unwrap();
            assert!((fast - brute).abs() < 1e-9, "fast={fast} brute={brute}");
        }
    }

    #[test]
    fn chamfer_rejects_empty_and_nonfinite() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn chamfer_isometry_invariance() {
        // Rotating both clouds by the same rigid rotation must not change CD.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = random_cloud(&mut rng, 48);
        let b = random_cloud(&mut rng, 48);
        let theta = 0.83f64;
        let rot = |p: &[f64; 3]| {
            [
                p[0] * theta.cos() - p[1] * theta.sin(),
                p[0] * theta.sin() + p[1] * theta.cos(),
                p[2],
            ]
        };
        let ra = PointCloud::new(a.points().iter().map(rot).collect()).unwrap();
        let rb = PointCloud::new(b.points().iter().map(rot).collect()).unwrap();
        let d0 = chamfer_distance(&a, &b).unwrap();
        let d1 = chamfer_distance(&ra, &rb).unwrap();
        assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn grad_zero_on_identical_clouds() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a = random_cloud(&mut rng, 17);
        let g = chamfer_distance_grad(&a, &a).unwrap();
        for row in g {
            assert_eq!(row, [0.0; 3]);
        }
    }

    #[test]
    fn grad_single_pair_hand_value() {
        // Hand differentiation: grad on a's point is (1/2 + 1/2) * unit(a−b).
        let a = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let g = chamfer_distance_grad(&a, &b).unwrap();
        assert!((g[0][0] - 1.0).abs() < 1e-15);
        assert_eq!(g[0][1], 0.0);
        assert_eq!(g[0][2], 0.0);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let a = random_cloud(&mut rng, 12);
        let b = random_cloud(&mut rng, 15);
        let analytic = chamfer_distance_grad(&a, &b).unwrap();
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..a.len() {
            for axis in 0..3 {
                let mut plus = a.points().to_vec();
                plus[i][axis] += h;
                let mut minus = a.points().to_vec();
                minus[i][axis] -= h;
                let fp = chamfer_distance(&PointCloud::new(plus).unwrap(), &b).unwrap();
                let fm = chamfer_distance(&PointCloud::new(minus).unwrap(), &b).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic[i][axis];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                max_rel = max_rel.max((fd - an).abs() / denom);
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn fps_full_sample_is_permutation() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let a = random_cloud(&mut rng, 20);
        let s = farthest_point_sample(&a, 20, 9).unwrap();
        let mut orig: Vec<_> = a.points().iter().map(|p| format!("{p:?}")).collect();
        let mut samp: Vec<_> = s.points().iter().map(|p| format!("{p:?}")).collect();
        orig.sort();
        samp.sort();
        assert_eq!(orig, samp);
    }

    #[test]
    fn fps_m1_is_seeded_initial_point() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = random_cloud(&mut rng, 10);
        let s = farthest_point_sample(&a, 1, 13).unwrap();
        let mut check = ChaCha12Rng::seed_from_u64(13);
        let first = check.random_range(0..10usize);
        assert_eq!(s.points()[0], a.points()[first]);
    }

    #[test]
    fn fps_unit_square_picks_opposite_corner() {
        // Enumerated: starting at (0,0,0), the farthest corner is (1,1,0).
        let corners = PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
        ])
        .unwrap();
        // Find a seed whose first draw lands on index 0.
        let seed = (0..1000)
            .find(|&s| {
                ChaCha12Rng::seed_from_u64(s).random_range(0..4usize) == 0
            })
            .expect("some seed selects corner 0");
        let s = farthest_point_sample(&corners, 2, seed).unwrap();
        assert_eq!(s.points()[0], [0.0, 0.0, 0.0]);
        assert_eq!(s.points()[1], [1.0, 1.0, 0.0]);
    }

    #[test]
    fn fps_rejects_oversample() {
        let a = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(farthest_point_sample(&a, 3, 0).is_err());
    }

    #[test]
    fn normalize_two_point_symmetry() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let n = normalize_unit_sphere(&a).unwrap();
        assert!((n.points()[0][0] + 1.0).abs() < 1e-12);
        assert!((n.points()[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let a = PointCloud::new(vec![[0.5; 3]; 4]).unwrap();
        assert!(normalize_unit_sphere(&a).is_err());
    }

    #[test]
    fn normalize_invariants_hold() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let a = random_cloud(&mut rng, 100);
        let n = normalize_unit_sphere(&a).unwrap();
        let c = n.centroid();
        let cn = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        assert!(cn <= 1e-6);
        let max: f64 = n
            .points()
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max);
        assert!(max >= 1.0 - 1e-6 && max <= 1.0 + 1e-12);
    }

    proptest! {
        #[test]
        fn chamfer_is_symmetric(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let n = rng.random_range(1..40usize);
            let m = rng.random_range(1..40usize);
            let a = random_cloud(&mut rng, n);
            let b = random_cloud(&mut rng, m);
            let ab = chamfer_distance(&a, &b).unwrap();
            let ba = chamfer_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
        }

        #[test]
        fn normalize_is_idempotent(seed in 0u64..200) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let n = rng.random_range(2..60usize);
            let a = random_cloud(&mut rng, n);
            if let Ok(once) = normalize_unit_sphere(&a) {
                let twice = normalize_unit_sphere(&once).unwrap();
                for (p, q) in once.points().iter().zip(twice.points()) {
                    for axis in 0..3 {
                        prop_assert!((p[axis] - q[axis]).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
