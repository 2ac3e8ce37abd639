//! Shape prior construction: prototypes from latent-space clustering and
//! chamfer-weighted fusion of the prototypes into one initial cloud per
//! category.
//!
//! All prototypes in a set are decoded by the same decoder and therefore
//! share index correspondence, which is what makes point-wise weighted sums
//! of otherwise unordered clouds meaningful.

pub mod autoencoder;
pub mod kmeans;

pub use autoencoder::{AeConfig, PrototypeAutoencoder};

use crate::cloud::{
    chamfer_distance, farthest_point_sample, normalize_unit_sphere, PointCloud,
};
use crate::error::{Error, Result};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Distance floor: chamfer distances enter the weights as divisors.
pub const DISTANCE_FLOOR: f64 = 1e-8;

/// K prototype clouds for one category plus the member count of each
/// originating cluster.
#[derive(Debug, Clone)]
pub struct ShapePrototypeSet {
    pub prototypes: Vec<PointCloud>,
    pub cluster_sizes: Vec<usize>,
    pub category: String,
}

impl ShapePrototypeSet {
    pub fn k(&self) -> usize {
        self.prototypes.len()
    }

    pub fn n_points(&self) -> usize {
        self.prototypes[0].len()
    }

    fn validate(&self) -> Result<()> {
        if self.prototypes.is_empty() {
            return Err(Error::invalid("prototype set must hold at least one cloud"));
        }
        let n = self.prototypes[0].len();
        if self.prototypes.iter().any(|p| p.len() != n) {
            return Err(Error::invalid("prototypes must share a point count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionStrategy {
    /// Main strategy: weights proportional to inverse chamfer distance.
    InverseWeighted,
    /// Ablation F: weights proportional to the chamfer distance itself.
    DirectWeighted,
    /// Ablation N: unnormalized sum of prototypes scaled by inverse
    /// distance; the result is re-normalized to the unit sphere so it stays
    /// usable as an initial cloud.
    PenaltySum,
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FusionStrategy::InverseWeighted => "inverse",
            FusionStrategy::DirectWeighted => "direct",
            FusionStrategy::PenaltySum => "penalty",
        };
        write!(f, "{s}")
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse" => Ok(FusionStrategy::InverseWeighted),
            "direct" => Ok(FusionStrategy::DirectWeighted),
            "penalty" => Ok(FusionStrategy::PenaltySum),
            other => Err(Error::invalid(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub fused: PointCloud,
    pub weights: Vec<f64>,
    pub reference: PointCloud,
    pub strategy: FusionStrategy,
}

/// Clusters the autoencoder latents of `clouds` into `k` groups and decodes
/// each centroid into a prototype cloud.
pub fn extract_prototypes(
    ae: &PrototypeAutoencoder,
    clouds: &[PointCloud],
    k: usize,
    seed: u64,
    category: &str,
) -> Result<ShapePrototypeSet> {
    if k == 0 || k > clouds.len() {
        return Err(Error::invalid(format!(
            "extract_prototypes: k = {k} outside [1, {}]",
            clouds.len()
        )));
    }
    let latents: Vec<Vec<f64>> = clouds.iter().map(|c| ae.encode(c)).collect();
    let km = kmeans::kmeans(&latents, k, seed)?;
    let prototypes = km
        .centroids
        .iter()
        .map(|c| ae.decode(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapePrototypeSet {
        prototypes,
        cluster_sizes: km.cluster_sizes,
        category: category.to_string(),
    })
}

/// The reference cloud the fusion weights are measured against: all
/// prototypes concatenated, then farthest-point-sampled back to the
/// prototype size. The concatenation is sorted into a value-canonical
/// order first, so the reference depends only on the multiset of prototype
/// points, never on prototype order.
pub fn compute_reference_average(ps: &ShapePrototypeSet, seed: u64) -> Result<PointCloud> {
    ps.validate()?;
    let mut all = Vec::with_capacity(ps.k() * ps.n_points());
    for p in &ps.prototypes {
        all.extend_from_slice(p.points());
    }
    all.sort_unstable_by_key(|p| {
        (
            crate::nn::tensor::total_order_key(p[0]),
            crate::nn::tensor::total_order_key(p[1]),
            crate::nn::tensor::total_order_key(p[2]),
        )
    });
    let concat = PointCloud::new(all)?;
    farthest_point_sample(&concat, ps.n_points(), seed)
}

fn prototype_distances(ps: &ShapePrototypeSet, reference: &PointCloud) -> Result<Vec<f64>> {
    ps.prototypes
        .iter()
        .map(|p| Ok(chamfer_distance(p, reference)?.max(DISTANCE_FLOOR)))
        .collect()
}

fn pointwise_weighted_sum(ps: &ShapePrototypeSet, weights: &[f64]) -> PointCloud {
    let n = ps.n_points();
    let k = ps.k();
    let mut points = vec![[0.0f64; 3]; n];
    let mut terms = vec![0.0f64; k];
    for (i, acc) in points.iter_mut().enumerate() {
        for axis in 0..3 {
            for (slot, (proto, &w)) in ps.prototypes.iter().zip(weights).enumerate() {
                terms[slot] = w * proto.points()[i][axis];
            }
            // Canonical order keeps the sum independent of prototype order.
            acc[axis] = crate::nn::tensor::canonical_sum(&mut terms);
        }
    }
    PointCloud::new(points).expect("weighted sum of finite clouds is finite")
}

/// Fuses the prototypes under the given strategy. `seed` drives the
/// farthest-point sampling of the reference cloud.
pub fn fuse(ps: &ShapePrototypeSet, strategy: FusionStrategy, seed: u64) -> Result<FusionResult> {
    ps.validate()?;
    let reference = compute_reference_average(ps, seed)?;
    let distances = prototype_distances(ps, &reference)?;
    let (weights, fused) = match strategy {
        FusionStrategy::InverseWeighted => {
            let inv: Vec<f64> = distances.iter().map(|d| 1.0 / d).collect();
            let total: f64 = inv.iter().sum();
            let weights: Vec<f64> = inv.iter().map(|v| v / total).collect();
            let fused = pointwise_weighted_sum(ps, &weights);
            (weights, fused)
        }
        FusionStrategy::DirectWeighted => {
            let total: f64 = distances.iter().sum();
            let weights: Vec<f64> = distances.iter().map(|d| d / total).collect();
            let fused = pointwise_weighted_sum(ps, &weights);
            (weights, fused)
        }
        FusionStrategy::PenaltySum => {
            let weights: Vec<f64> = distances.iter().map(|d| 1.0 / d).collect();
            let raw = pointwise_weighted_sum(ps, &weights);
            // The unnormalized sum scales with K/d; re-normalize so the
            // result remains a usable initial cloud.
            let fused = normalize_unit_sphere(&raw)?;
            (weights, fused)
        }
    };
    let mut fused = fused;
    if !ps.category.is_empty() {
        fused = fused.with_category(&ps.category);
    }
    Ok(FusionResult {
        fused,
        weights,
        reference,
        strategy,
    })
}

pub fn fuse_inverse_weighted(ps: &ShapePrototypeSet, seed: u64) -> Result<FusionResult> {
    fuse(ps, FusionStrategy::InverseWeighted, seed)
}

pub fn fuse_direct_weighted(ps: &ShapePrototypeSet, seed: u64) -> Result<FusionResult> {
    fuse(ps, FusionStrategy::DirectWeighted, seed)
}

pub fn fuse_penalty_sum(ps: &ShapePrototypeSet, seed: u64) -> Result<FusionResult> {
    fuse(ps, FusionStrategy::PenaltySum, seed)
}

/// How the initial cloud for a category is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    /// Deterministic uniform sphere (the single-prior baseline).
    Sphere,
    /// Multi-prototype fusion.
    Fused,
}

impl fmt::Display for PriorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorMode::Sphere => write!(f, "sphere"),
            PriorMode::Fused => write!(f, "fused"),
        }
    }
}

impl FromStr for PriorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(PriorMode::Sphere),
            "fused" => Ok(PriorMode::Fused),
            other => Err(Error::invalid(format!("unknown prior mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionConfig {
    pub mode: PriorMode,
    pub k: usize,
    pub strategy: FusionStrategy,
    pub ae: AeConfig,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: PriorMode::Fused,
            k: 4,
            strategy: FusionStrategy::InverseWeighted,
            ae: AeConfig::default(),
            seed: 0,
        }
    }
}

/// Evenly distributed points on the unit sphere (Fibonacci lattice), the
/// classic single-prior initial cloud.
pub fn sphere_cloud(n: usize, category: &str) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let points = (0..n)
        .map(|i| {
            let y = if n == 1 {
                0.0
            } else {
                1.0 - 2.0 * i as f64 / (n - 1) as f64
            };
            let r = (1.0 - y * y).max(0.0).sqrt();
            let theta = golden * i as f64;
            [r * theta.cos(), y, r * theta.sin()]
        })
        .collect();
    PointCloud::new(points)
        .expect("sphere cloud is finite")
        .with_category(category)
}

/// Full per-category prior pipeline: train the autoencoder on this
/// category's labeled clouds, extract `k` prototypes (clamped to the number
/// of clouds when labels are scarce), and fuse them.
pub fn build_category_prior(
    clouds: &[PointCloud],
    category: &str,
    cfg: &FusionConfig,
) -> Result<FusionResult> {
    if cfg.mode == PriorMode::Sphere {
        let n = cfg.ae.n_points;
        return Ok(FusionResult {
            fused: sphere_cloud(n, category),
            weights: vec![1.0],
            reference: sphere_cloud(n, category),
            strategy: cfg.strategy,
        });
    }
    if clouds.is_empty() {
        return Err(Error::invalid(format!(
            "no labeled clouds for category {category}"
        )));
    }
    let k = cfg.k.min(clouds.len());
    if k < cfg.k {
        log::warn!(
            "category {category}: only {} labeled clouds, clamping k from {} to {k}",
            clouds.len(),
            cfg.k
        );
    }
    let ae = PrototypeAutoencoder::train(clouds, &cfg.ae)?;
    let prototypes = extract_prototypes(&ae, clouds, k, cfg.seed, category)?;
    fuse(&prototypes, cfg.strategy, cfg.seed.wrapping_add(1))
}

/// Sidecar manifest for a stored fusion result: flat `key = value` lines.
pub fn write_prior_manifest(
    path: impl AsRef<Path>,
    result: &FusionResult,
    category: &str,
    k: usize,
    n_points: usize,
    seed: u64,
) -> Result<()> {
    let path = path.as_ref();
    let weights = result
        .weights
        .iter()
        .map(|w| format!("{w:.17e}"))
        .collect::<Vec<_>>()
        .join(",");
    let body = format!(
        "category = {category}\nk = {k}\nn_points = {n_points}\nseed = {seed}\nstrategy = {}\nweights = {weights}\n",
        result.strategy
    );
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn tiny_ae_config(n_points: usize, seed: u64) -> AeConfig {
        AeConfig {
            n_points,
            latent_dim: 8,
            enc_hidden: 32,
            dec_hidden: 64,
            epochs: 150,
            batch: 8,
            seed,
            ..AeConfig::default()
        }
    }

    fn sample_box(rng: &mut ChaCha12Rng, n: usize, hx: f64, hy: f64, hz: f64) -> PointCloud {
        // Area-weighted sampling over the six faces of an axis-aligned box.
        let areas = [hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy];
        let total: f64 = areas.iter().sum::<f64>();
        let points = (0..n)
            .map(|_| {
                let mut pick = rng.random_range(0.0..total);
                let mut face = 5;
                for (i, &a) in areas.iter().enumerate() {
                    if pick < a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let u = rng.random_range(-1.0..1.0);
                let v = rng.random_range(-1.0..1.0);
                match face {
                    0 => [hx, u * hy, v * hz],
                    1 => [-hx, u * hy, v * hz],
                    2 => [u * hx, hy, v * hz],
                    3 => [u * hx, -hy, v * hz],
                    4 => [u * hx, v * hy, hz],
                    _ => [u * hx, v * hy, -hz],
                }
            })
            .collect();
        normalize_unit_sphere(&PointCloud::new(points).unwrap()).unwrap()
    }

    fn sample_cylinder(rng: &mut ChaCha12Rng, n: usize, radius: f64, half_h: f64) -> PointCloud {
        let lateral = 2.0 * std::f64::consts::PI * radius * 2.0 * half_h;
        let caps = 2.0 * std::f64::consts::PI * radius * radius;
        let total = lateral + caps;
        let points = (0..n)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                if rng.random_range(0.0..total) < lateral {
                    let y = rng.random_range(-half_h..half_h);
                    [radius * theta.cos(), y, radius * theta.sin()]
                } else {
                    let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                    let y = if rng.random_range(0..2) == 0 { half_h } else { -half_h };
                    [r * theta.cos(), y, r * theta.sin()]
                }
            })
            .collect();
        normalize_unit_sphere(&PointCloud::new(points).unwrap()).unwrap()
    }

    fn toy_prototypes(k: usize, n: usize, seed: u64) -> ShapePrototypeSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let prototypes = (0..k)
            .map(|_| {
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
            })
            .collect();
        ShapePrototypeSet {
            prototypes,
            cluster_sizes: vec![1; k],
            category: "toy".into(),
        }
    }

    #[test]
    fn ae_overfits_single_mode_data() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let cloud = sample_box(&mut rng, 64, 0.8, 0.5, 0.3);
        let clouds = vec![cloud.clone(); 8];
        let cfg = tiny_ae_config(64, 1);
        let ae = PrototypeAutoencoder::train(&clouds, &cfg).unwrap();
        let cd = ae.reconstruction_cd(&cloud).unwrap();
        assert!(
            cd < 10.0 * cfg.tolerance,
            "reconstruction CD {cd} above {}",
            10.0 * cfg.tolerance
        );
    }

    #[test]
    fn ae_encode_is_permutation_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let cloud = sample_box(&mut rng, 32, 0.6, 0.6, 0.6);
        let clouds = vec![cloud.clone(); 4];
        let mut cfg = tiny_ae_config(32, 3);
        cfg.epochs = 20;
        let ae = PrototypeAutoencoder::train(&clouds, &cfg).unwrap();

        let mut shuffled: Vec<[f64; 3]> = cloud.points().to_vec();
        shuffled.reverse();
        shuffled.swap(0, 7);
        let shuffled = PointCloud::new(shuffled).unwrap();
        let a = ae.encode(&cloud);
        let b = ae.encode(&shuffled);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn ae_separates_boxes_from_cylinders() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let n = 64;
        let mut clouds = Vec::new();
        for _ in 0..8 {
            let (hx, hy, hz) = (
                rng.random_range(0.5..1.0),
                rng.random_range(0.5..1.0),
                rng.random_range(0.5..1.0),
            );
            clouds.push(sample_box(&mut rng, n, hx, hy, hz));
        }
        for _ in 0..8 {
            let (r, h) = (rng.random_range(0.3..0.6), rng.random_range(0.6..1.0));
            clouds.push(sample_cylinder(&mut rng, n, r, h));
        }
        let cfg = tiny_ae_config(n, 5);
        let ae = PrototypeAutoencoder::train(&clouds, &cfg).unwrap();

        let mean_recon: f64 = clouds
            .iter()
            .map(|c| ae.reconstruction_cd(c).unwrap())
            .sum::<f64>()
            / clouds.len() as f64;
        let mut inter = 0.0;
        let mut pairs = 0;
        for i in 0..clouds.len() {
            for j in i + 1..clouds.len() {
                inter += chamfer_distance(&clouds[i], &clouds[j]).unwrap();
                pairs += 1;
            }
        }
        let mean_inter = inter / pairs as f64;
        assert!(
            mean_recon < mean_inter,
            "reconstruction {mean_recon} not below inter-cloud {mean_inter}"
        );

        // Two well-separated families, k = 2: clusters are pure.
        let protos = extract_prototypes(&ae, &clouds, 2, 9, "mixed").unwrap();
        assert_eq!(protos.cluster_sizes.iter().sum::<usize>(), clouds.len());
        let latents: Vec<Vec<f64>> = clouds.iter().map(|c| ae.encode(c)).collect();
        let km = kmeans::kmeans(&latents, 2, 9).unwrap();
        let first_half = &km.assignment[..8];
        let second_half = &km.assignment[8..];
        assert!(first_half.iter().all(|&a| a == first_half[0]));
        assert!(second_half.iter().all(|&a| a == second_half[0]));
        assert_ne!(first_half[0], second_half[0]);
    }

    #[test]
    fn prototypes_k1_is_decoded_mean_latent() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let n = 32;
        let clouds: Vec<PointCloud> = (0..5)
            .map(|_| sample_box(&mut rng, n, 0.8, 0.6, 0.4))
            .collect();
        let mut cfg = tiny_ae_config(n, 7);
        cfg.epochs = 30;
        let ae = PrototypeAutoencoder::train(&clouds, &cfg).unwrap();
        let protos = extract_prototypes(&ae, &clouds, 1, 0, "box").unwrap();
        let latents: Vec<Vec<f64>> = clouds.iter().map(|c| ae.encode(c)).collect();
        let dim = latents[0].len();
        let mean: Vec<f64> = (0..dim)
            .map(|d| latents.iter().map(|l| l[d]).sum::<f64>() / latents.len() as f64)
            .collect();
        let expected = ae.decode(&mean).unwrap();
        assert_eq!(protos.prototypes[0].points(), expected.points());
    }

    #[test]
    fn prototypes_k_equals_clouds_decode_each_latent() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n = 32;
        let clouds: Vec<PointCloud> = (0..4)
            .map(|i| sample_box(&mut rng, n, 0.5 + 0.1 * i as f64, 0.6, 0.4))
            .collect();
        let mut cfg = tiny_ae_config(n, 9);
        cfg.epochs = 30;
        let ae = PrototypeAutoencoder::train(&clouds, &cfg).unwrap();
        let protos = extract_prototypes(&ae, &clouds, clouds.len(), 1, "box").unwrap();
        let mut expected: Vec<Vec<[f64; 3]>> = clouds
            .iter()
            .map(|c| ae.decode(&ae.encode(c)).unwrap().points().to_vec())
            .collect();
        // Centroids come back in cluster order; match as sets.
        for proto in &protos.prototypes {
            let pos = expected
                .iter()
                .position(|e| {
                    e.iter()
                        .zip(proto.points())
                        .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9))
                })
                .expect("prototype matches one decoded latent");
            expected.remove(pos);
        }
        assert!(expected.is_empty());
    }

    #[test]
    fn extract_rejects_oversized_k() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let clouds = vec![sample_box(&mut rng, 16, 0.5, 0.5, 0.5); 2];
        let mut cfg = tiny_ae_config(16, 11);
        cfg.epochs = 1;
        let ae = PrototypeAutoencoder::train(&clouds, &cfg).unwrap();
        assert!(extract_prototypes(&ae, &clouds, 3, 0, "x").is_err());
    }

    #[test]
    fn reference_average_k1_is_permutation_of_prototype() {
        let ps = toy_prototypes(1, 24, 12);
        let reference = compute_reference_average(&ps, 3).unwrap();
        let mut orig: Vec<String> = ps.prototypes[0].points().iter().map(|p| format!("{p:?}")).collect();
        let mut got: Vec<String> = reference.points().iter().map(|p| format!("{p:?}")).collect();
        orig.sort();
        got.sort();
        assert_eq!(orig, got);
    }

    #[test]
    fn reference_average_sits_between_prototypes() {
        let ps = toy_prototypes(2, 48, 13);
        let reference = compute_reference_average(&ps, 5).unwrap();
        let d01 = chamfer_distance(&ps.prototypes[0], &ps.prototypes[1]).unwrap();
        let d0 = chamfer_distance(&reference, &ps.prototypes[0]).unwrap();
        let d1 = chamfer_distance(&reference, &ps.prototypes[1]).unwrap();
        assert!(d0 <= d01 && d1 <= d01, "d0={d0} d1={d1} d01={d01}");
    }

    #[test]
    fn fuse_k1_is_identity_with_unit_weight() {
        let ps = toy_prototypes(1, 16, 14);
        let r = fuse_inverse_weighted(&ps, 0).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert_eq!(r.fused.points(), ps.prototypes[0].points());
        let rd = fuse_direct_weighted(&ps, 0).unwrap();
        assert_eq!(rd.weights, vec![1.0]);
        assert_eq!(rd.fused.points(), ps.prototypes[0].points());
    }

    #[test]
    fn fuse_equal_distances_gives_midpoint() {
        // Two prototypes mirrored through the origin are equidistant from
        // any symmetric reference; force it by construction.
        let mut ps = toy_prototypes(1, 32, 15);
        let mirrored = PointCloud::new(
            ps.prototypes[0]
                .points()
                .iter()
                .map(|p| [-p[0], -p[1], -p[2]])
                .collect(),
        )
        .unwrap();
        ps.prototypes.push(mirrored);
        ps.cluster_sizes.push(1);
        let r = fuse_inverse_weighted(&ps, 7).unwrap();
        let d0 = chamfer_distance(&ps.prototypes[0], &r.reference).unwrap();
        let d1 = chamfer_distance(&ps.prototypes[1], &r.reference).unwrap();
        if (d0 - d1).abs() < 1e-12 {
            assert!((r.weights[0] - 0.5).abs() < 1e-9);
            assert!((r.weights[1] - 0.5).abs() < 1e-9);
            for (f, (a, b)) in r
                .fused
                .points()
                .iter()
                .zip(ps.prototypes[0].points().iter().zip(ps.prototypes[1].points()))
            {
                for axis in 0..3 {
                    let mid = 0.5 * (a[axis] + b[axis]);
                    assert!((f[axis] - mid).abs() < 1e-12);
                }
            }
        } else {
            // Seeded FPS broke the symmetry; the weights must still
            // reflect the distance ordering.
            assert_eq!(d0 < d1, r.weights[0] > r.weights[1]);
        }
    }

    #[test]
    fn fusion_matches_brute_force_oracle() {
        // Independent recomputation of all three strategies with the
        // brute-force chamfer distance.
        let ps = toy_prototypes(3, 40, 16);
        for strategy in [
            FusionStrategy::InverseWeighted,
            FusionStrategy::DirectWeighted,
            FusionStrategy::PenaltySum,
        ] {
            let r = fuse(&ps, strategy, 21).unwrap();
            let d: Vec<f64> = ps
                .prototypes
                .iter()
                .map(|p| {
                    crate::cloud::chamfer_distance_brute(p, &r.reference)
                        .unwrap()
                        .max(DISTANCE_FLOOR)
                })
                .collect();
            let expected_weights: Vec<f64> = match strategy {
                FusionStrategy::InverseWeighted => {
                    let inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
                    let t: f64 = inv.iter().sum();
                    inv.iter().map(|v| v / t).collect()
                }
                FusionStrategy::DirectWeighted => {
                    let t: f64 = d.iter().sum();
                    d.iter().map(|v| v / t).collect()
                }
                FusionStrategy::PenaltySum => d.iter().map(|x| 1.0 / x).collect(),
            };
            for (a, b) in r.weights.iter().zip(&expected_weights) {
                assert!((a - b).abs() < 1e-9, "{strategy}: weight {a} vs {b}");
            }
            let mut expected_points = vec![[0.0f64; 3]; ps.n_points()];
            for (proto, &w) in ps.prototypes.iter().zip(&expected_weights) {
                for (acc, p) in expected_points.iter_mut().zip(proto.points()) {
                    for axis in 0..3 {
                        acc[axis] += w * p[axis];
                    }
                }
            }
            let expected_cloud = PointCloud::new(expected_points).unwrap();
            let expected_cloud = if strategy == FusionStrategy::PenaltySum {
                normalize_unit_sphere(&expected_cloud).unwrap()
            } else {
                expected_cloud
            };
            for (a, b) in r.fused.points().iter().zip(expected_cloud.points()) {
                for axis in 0..3 {
                    assert!((a[axis] - b[axis]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn inverse_and_direct_weights_are_normalized_and_ordered() {
        let ps = toy_prototypes(4, 32, 17);
        let inv = fuse_inverse_weighted(&ps, 3).unwrap();
        let dir = fuse_direct_weighted(&ps, 3).unwrap();
        assert!((inv.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((dir.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let d: Vec<f64> = ps
            .prototypes
            .iter()
            .map(|p| chamfer_distance(p, &inv.reference).unwrap())
            .collect();
        for i in 0..4 {
            for j in 0..4 {
                if d[i] < d[j] {
                    assert!(inv.weights[i] > inv.weights[j], "inverse monotonicity");
                    assert!(dir.weights[i] < dir.weights[j], "direct reversal");
                }
            }
        }
    }

    #[test]
    fn permuting_prototypes_permutes_weights_and_keeps_fused_cloud() {
        let ps = toy_prototypes(3, 24, 18);
        let base = fuse_inverse_weighted(&ps, 11).unwrap();
        let perm = [2usize, 0, 1];
        let permuted_set = ShapePrototypeSet {
            prototypes: perm.iter().map(|&i| ps.prototypes[i].clone()).collect(),
            cluster_sizes: perm.iter().map(|&i| ps.cluster_sizes[i]).collect(),
            category: ps.category.clone(),
        };
        let permuted = fuse_inverse_weighted(&permuted_set, 11).unwrap();
        // The reference construction and the weighted sum are both
        // canonical in prototype order, so equality is exact.
        assert_eq!(permuted.reference.points(), base.reference.points());
        for (slot, &orig) in perm.iter().enumerate() {
            assert_eq!(permuted.weights[slot].to_bits(), base.weights[orig].to_bits());
        }
        assert_eq!(permuted.fused.points(), base.fused.points());
    }

    #[test]
    fn fusion_pipeline_is_bit_deterministic() {
        let ps = toy_prototypes(3, 24, 19);
        let a = fuse_inverse_weighted(&ps, 11).unwrap();
        let b = fuse_inverse_weighted(&ps, 11).unwrap();
        assert_eq!(a.fused.points(), b.fused.points());
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.reference.points(), b.reference.points());
    }

    #[test]
    fn sphere_cloud_is_unit_and_deterministic() {
        let a = sphere_cloud(128, "x");
        let b = sphere_cloud(128, "x");
        assert_eq!(a.points(), b.points());
        for p in a.points() {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
