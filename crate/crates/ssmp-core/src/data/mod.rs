//! Datasets: synthetic generation, label-ratio splitting, disk layout, and
//! external ingestion.
//!
//! Ground-truth clouds of unlabeled training samples are retained for
//! evaluation but firewalled from the trainer: the only cloud accessor a
//! trainer-facing view exposes fails on unlabeled samples.

pub mod ingest;
pub mod synth;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::img::Image;
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One (image, optional cloud) pair. The cloud field is private; use
/// [`Sample::labeled_cloud`] in training contexts (fails on unlabeled
/// samples) or [`Sample::eval_ground_truth`] in evaluation code.
#[derive(Debug, Clone)]
pub struct Sample {
    pub uid: String,
    pub category: String,
    pub image: Image,
    pub labeled: bool,
    pub split: Split,
    cloud: Option<PointCloud>,
}

impl Sample {
    pub fn new(
        uid: String,
        category: String,
        image: Image,
        cloud: Option<PointCloud>,
        split: Split,
    ) -> Self {
        Sample {
            uid,
            category,
            image,
            labeled: false,
            split,
            cloud,
        }
    }

    /// Trainer-context accessor: the ground truth of a sample that is not
    /// labeled is off limits during training.
    pub fn labeled_cloud(&self) -> Result<&PointCloud> {
        if !self.labeled {
            return Err(Error::invalid(format!(
                "sample {} is unlabeled; its cloud is not available to the trainer",
                self.uid
            )));
        }
        self.cloud
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("labeled sample {} has no cloud", self.uid)))
    }

    /// Evaluation-only accessor; never used on a training path.
    pub fn eval_ground_truth(&self) -> Option<&PointCloud> {
        self.cloud.as_ref()
    }

    pub fn has_cloud(&self) -> bool {
        self.cloud.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub categories: Vec<String>,
    pub n_points: usize,
    pub img_size: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn train_view(&self) -> TrainView<'_> {
        TrainView { dataset: self }
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Test)
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Train)
    }
}

/// Trainer-facing view: labeled samples expose their clouds, unlabeled
/// samples expose images only.
pub struct TrainView<'a> {
    dataset: &'a Dataset,
}

impl<'a> TrainView<'a> {
    pub fn labeled(&self) -> Vec<&'a Sample> {
        self.dataset
            .samples
            .iter()
            .filter(|s| s.split == Split::Train && s.labeled)
            .collect()
    }

    /// Unlabeled training samples; by construction nothing here grants
    /// cloud access within trainer code paths.
    pub fn unlabeled(&self) -> Vec<&'a Sample> {
        self.dataset
            .samples
            .iter()
            .filter(|s| s.split == Split::Train && !s.labeled)
            .collect()
    }

    pub fn labeled_by_category(&self) -> BTreeMap<String, Vec<&'a Sample>> {
        let mut out: BTreeMap<String, Vec<&'a Sample>> = BTreeMap::new();
        for s in self.labeled() {
            out.entry(s.category.clone()).or_default().push(s);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub categories: Vec<String>,
    pub per_category: usize,
    pub train_per_category: usize,
    pub n_points: usize,
    pub render_points: usize,
    pub img_size: usize,
    pub azimuth_range: (f64, f64),
    pub elevation_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            categories: vec![
                "bookcase".into(),
                "chair".into(),
                "lamp".into(),
                "table".into(),
                "vessel".into(),
            ],
            per_category: 300,
            train_per_category: 240,
            n_points: 256,
            render_points: 2048,
            img_size: 64,
            azimuth_range: (0.0, TAU),
            elevation_range: (-0.3, 0.9),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn to_file_string(&self) -> String {
        format!(
            "azimuth = {},{}\ncategories = {}\nelevation = {},{}\nimg_size = {}\nn_points = {}\nper_category = {}\nrender_points = {}\nseed = {}\ntrain_per_category = {}\n",
            self.azimuth_range.0,
            self.azimuth_range.1,
            self.categories.join(","),
            self.elevation_range.0,
            self.elevation_range.1,
            self.img_size,
            self.n_points,
            self.per_category,
            self.render_points,
            self.seed,
            self.train_per_category,
        )
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        let parse_pair = |v: &str| -> Result<(f64, f64)> {
            let parts: Vec<&str> = v.split(',').map(|s| s.trim()).collect();
            if parts.len() != 2 {
                return Err(Error::invalid(format!("expected lo,hi range, got {v:?}")));
            }
            Ok((
                parts[0].parse().map_err(|_| Error::invalid("bad range"))?,
                parts[1].parse().map_err(|_| Error::invalid("bad range"))?,
            ))
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!("config line without '=': {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::invalid(format!("bad value {value:?} for {key}"));
            match key {
                "azimuth" => cfg.azimuth_range = parse_pair(value)?,
                "categories" => {
                    cfg.categories = value.split(',').map(|s| s.trim().to_string()).collect()
                }
                "elevation" => cfg.elevation_range = parse_pair(value)?,
                "img_size" => cfg.img_size = value.parse().map_err(|_| bad())?,
                "n_points" => cfg.n_points = value.parse().map_err(|_| bad())?,
                "per_category" => cfg.per_category = value.parse().map_err(|_| bad())?,
                "render_points" => cfg.render_points = value.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "train_per_category" => {
                    cfg.train_per_category = value.parse().map_err(|_| bad())?
                }
                other => return Err(Error::invalid(format!("unknown data key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}

/// Stable per-sample seed derivation (FNV-1a over the base seed, category,
/// and index).
fn derive_seed(base: u64, category: &str, index: usize) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h = (h ^ b as u64).wrapping_mul(0x100000001b3);
        }
    };
    eat(&base.to_le_bytes());
    eat(category.as_bytes());
    eat(&(index as u64).to_le_bytes());
    h
}

/// Generates the synthetic dataset: per category, `train_per_category`
/// training samples and the remainder test samples. Byte-deterministic
/// given the config.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.train_per_category > cfg.per_category {
        return Err(Error::invalid(
            "train_per_category exceeds per_category".to_string(),
        ));
    }
    let mut samples = Vec::with_capacity(cfg.categories.len() * cfg.per_category);
    for category in &cfg.categories {
        for idx in 0..cfg.per_category {
            let seed = derive_seed(cfg.seed, category, idx);
            let (cloud, image) = synth::generate_shape(
                category,
                cfg.n_points,
                cfg.render_points,
                cfg.img_size,
                cfg.azimuth_range,
                cfg.elevation_range,
                seed,
            )?;
            let split = if idx < cfg.train_per_category {
                Split::Train
            } else {
                Split::Test
            };
            samples.push(Sample::new(
                format!("{category}-{idx:04}"),
                category.clone(),
                image,
                Some(cloud),
                split,
            ));
        }
    }
    Ok(Dataset {
        samples,
        categories: cfg.categories.clone(),
        n_points: cfg.n_points,
        img_size: cfg.img_size,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    /// Fraction of training samples that keep their labels, in (0, 1].
    pub labeled_ratio: f64,
    pub seed: u64,
}

/// Marks a stratified random subset of each category's training samples as
/// labeled. Deterministic given the seed; re-splitting replaces the
/// previous assignment.
pub fn split_labeled(dataset: &mut Dataset, spec: &SplitSpec) -> Result<(usize, usize)> {
    if !(spec.labeled_ratio > 0.0 && spec.labeled_ratio <= 1.0) {
        return Err(Error::invalid(format!(
            "labeled_ratio {} outside (0, 1]",
            spec.labeled_ratio
        )));
    }
    for s in dataset.samples.iter_mut() {
        s.labeled = false;
    }
    let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.split == Split::Train {
            by_category.entry(s.category.clone()).or_default().push(i);
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut labeled = 0usize;
    let mut unlabeled = 0usize;
    for (_cat, mut indices) in by_category {
        indices.shuffle(&mut rng);
        let want = ((indices.len() as f64) * spec.labeled_ratio).round() as usize;
        let want = want.clamp(1, indices.len());
        for (rank, idx) in indices.into_iter().enumerate() {
            let flag = rank < want;
            dataset.samples[idx].labeled = flag;
            if flag {
                labeled += 1;
            } else {
                unlabeled += 1;
            }
        }
    }
    Ok((labeled, unlabeled))
}
