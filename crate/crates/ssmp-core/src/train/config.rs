//! Training hyperparameters and the flat key-value pipeline config.
//!
//! One `PipelineConfig` describes an entire run: network shape, prior
//! construction, the label split, and both training stages. It round-trips
//! through a `key = value` text file, and every key can be overridden
//! individually, which is what the ablation runner's mechanical config
//! diffing is built on.

use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionStrategy, PriorMode};
use crate::net::{DecoderKind, NetConfig};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the basis orthogonality penalty in the warm-up loss.
    pub orth_weight: f64,
    /// Weight of the feature-perturbation consistency term.
    pub w_feature: f64,
    /// Weight of the strong-augmentation consistency terms.
    pub w_strong: f64,
    /// EMA momentum at the start of the guided stage; ramped to 1 by a
    /// cosine schedule.
    pub alpha0: f64,
    pub warmup_epochs: usize,
    pub guided_epochs: usize,
    pub warmup_batch: usize,
    pub guided_batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Guided-stage learning-rate schedule; the guided stage continues from
    /// a converged teacher, so it typically wants a cooler schedule than
    /// the warm-up.
    pub guided_lr_start: f64,
    pub guided_lr_end: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            orth_weight: 100.0,
            w_feature: 0.5,
            w_strong: 0.5,
            alpha0: 0.9996,
            warmup_epochs: 60,
            guided_epochs: 30,
            warmup_batch: 32,
            guided_batch: 16,
            lr_start: 1e-3,
            lr_end: 1e-5,
            guided_lr_start: 3e-4,
            guided_lr_end: 1e-5,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.orth_weight < 0.0 {
            return Err(Error::invalid("orth_weight must be non-negative"));
        }
        for (name, v) in [("w_feature", self.w_feature), ("w_strong", self.w_strong)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(Error::invalid(format!("alpha0 = {} outside (0, 1]", self.alpha0)));
        }
        if self.lr_end >= self.lr_start {
            return Err(Error::invalid("lr_end must be below lr_start"));
        }
        if self.guided_lr_end >= self.guided_lr_start {
            return Err(Error::invalid("guided_lr_end must be below guided_lr_start"));
        }
        if self.warmup_batch == 0 || self.guided_batch == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        Ok(())
    }
}

/// Everything one run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub fusion_mode: PriorMode,
    pub fusion_k: usize,
    pub fusion_strategy: FusionStrategy,
    pub ae_epochs: usize,
    pub labeled_ratio: f64,
    pub split_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            net: NetConfig::default(),
            train: TrainConfig::default(),
            fusion_mode: PriorMode::Fused,
            fusion_k: 4,
            fusion_strategy: FusionStrategy::InverseWeighted,
            ae_epochs: 300,
            labeled_ratio: 0.1,
            split_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if !(self.labeled_ratio > 0.0 && self.labeled_ratio <= 1.0) {
            return Err(Error::invalid("labeled_ratio outside (0, 1]"));
        }
        if self.fusion_k == 0 {
            return Err(Error::invalid("fusion_k must be positive"));
        }
        Ok(())
    }

    pub fn fusion_config(&self) -> FusionConfig {
        let mut ae = crate::fusion::AeConfig {
            n_points: self.net.n_points,
            epochs: self.ae_epochs,
            seed: self.train.seed,
            ..crate::fusion::AeConfig::default()
        };
        // Tiny clouds need less autoencoder capacity.
        if self.net.n_points <= 64 {
            ae.latent_dim = 16;
            ae.enc_hidden = 48;
            ae.dec_hidden = 96;
        }
        FusionConfig {
            mode: self.fusion_mode,
            k: self.fusion_k,
            strategy: self.fusion_strategy,
            ae,
            seed: self.train.seed,
        }
    }

    /// Canonical flat rendering: sorted `key = value` pairs covering every
    /// field.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let n = &self.net;
        let t = &self.train;
        let conv = n
            .conv_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut pairs = vec![
            ("data.labeled_ratio".into(), format!("{}", self.labeled_ratio)),
            ("data.split_seed".into(), format!("{}", self.split_seed)),
            ("fusion.ae_epochs".into(), format!("{}", self.ae_epochs)),
            ("fusion.k".into(), format!("{}", self.fusion_k)),
            ("fusion.mode".into(), format!("{}", self.fusion_mode)),
            ("fusion.strategy".into(), format!("{}", self.fusion_strategy)),
            ("net.adain_momentum".into(), format!("{}", n.adain_momentum)),
            ("net.conv_channels".into(), conv),
            ("net.d_img".into(), format!("{}", n.d_img)),
            ("net.decoder".into(), format!("{}", n.decoder)),
            ("net.global_attn_threshold".into(), format!("{}", n.global_attn_threshold)),
            ("net.heads".into(), format!("{}", n.heads)),
            ("net.hidden".into(), format!("{}", n.hidden)),
            ("net.img_channels".into(), format!("{}", n.img_channels)),
            ("net.img_size".into(), format!("{}", n.img_size)),
            ("net.knn_k".into(), format!("{}", n.knn_k)),
            ("net.n_points".into(), format!("{}", n.n_points)),
            ("net.sigma_floor".into(), format!("{}", n.sigma_floor)),
            (
                "net.stage_dims".into(),
                format!("{},{},{}", n.stage_dims[0], n.stage_dims[1], n.stage_dims[2]),
            ),
            ("net.z_dim".into(), format!("{}", n.z_dim)),
            ("train.alpha0".into(), format!("{}", t.alpha0)),
            ("train.guided_batch".into(), format!("{}", t.guided_batch)),
            ("train.guided_epochs".into(), format!("{}", t.guided_epochs)),
            ("train.guided_lr_end".into(), format!("{}", t.guided_lr_end)),
            ("train.guided_lr_start".into(), format!("{}", t.guided_lr_start)),
            ("train.lr_end".into(), format!("{}", t.lr_end)),
            ("train.lr_start".into(), format!("{}", t.lr_start)),
            ("train.orth_weight".into(), format!("{}", t.orth_weight)),
            ("train.seed".into(), format!("{}", t.seed)),
            ("train.w_feature".into(), format!("{}", t.w_feature)),
            ("train.w_strong".into(), format!("{}", t.w_strong)),
            ("train.warmup_batch".into(), format!("{}", t.warmup_batch)),
            ("train.warmup_epochs".into(), format!("{}", t.warmup_epochs)),
            ("train.weight_decay".into(), format!("{}", t.weight_decay)),
        ];
        pairs.sort();
        pairs
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::invalid(format!("bad value {what:?} for key"));
        match key {
            "data.labeled_ratio" => {
                self.labeled_ratio = value.parse().map_err(|_| bad(value))?
            }
            "data.split_seed" => self.split_seed = value.parse().map_err(|_| bad(value))?,
            "fusion.ae_epochs" => self.ae_epochs = value.parse().map_err(|_| bad(value))?,
            "fusion.k" => self.fusion_k = value.parse().map_err(|_| bad(value))?,
            "fusion.mode" => self.fusion_mode = PriorMode::from_str(value)?,
            "fusion.strategy" => self.fusion_strategy = FusionStrategy::from_str(value)?,
            "net.adain_momentum" => {
                self.net.adain_momentum = value.parse().map_err(|_| bad(value))?
            }
            "net.conv_channels" => {
                self.net.conv_channels = value
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| bad(value)))
                    .collect::<Result<Vec<_>>>()?
            }
            "net.d_img" => self.net.d_img = value.parse().map_err(|_| bad(value))?,
            "net.decoder" => self.net.decoder = DecoderKind::from_str(value)?,
            "net.global_attn_threshold" => {
                self.net.global_attn_threshold = value.parse().map_err(|_| bad(value))?
            }
            "net.heads" => self.net.heads = value.parse().map_err(|_| bad(value))?,
            "net.hidden" => self.net.hidden = value.parse().map_err(|_| bad(value))?,
            "net.img_channels" => {
                self.net.img_channels = value.parse().map_err(|_| bad(value))?
            }
            "net.img_size" => self.net.img_size = value.parse().map_err(|_| bad(value))?,
            "net.knn_k" => self.net.knn_k = value.parse().map_err(|_| bad(value))?,
            "net.n_points" => self.net.n_points = value.parse().map_err(|_| bad(value))?,
            "net.sigma_floor" => self.net.sigma_floor = value.parse().map_err(|_| bad(value))?,
            "net.stage_dims" => {
                let dims: Vec<usize> = value
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| bad(value)))
                    .collect::<Result<Vec<_>>>()?;
                if dims.len() != 3 {
                    return Err(Error::invalid("stage_dims needs exactly 3 entries"));
                }
                self.net.stage_dims = [dims[0], dims[1], dims[2]];
            }
            "net.z_dim" => self.net.z_dim = value.parse().map_err(|_| bad(value))?,
            "train.alpha0" => self.train.alpha0 = value.parse().map_err(|_| bad(value))?,
            "train.guided_batch" => {
                self.train.guided_batch = value.parse().map_err(|_| bad(value))?
            }
            "train.guided_epochs" => {
                self.train.guided_epochs = value.parse().map_err(|_| bad(value))?
            }
            "train.guided_lr_end" => {
                self.train.guided_lr_end = value.parse().map_err(|_| bad(value))?
            }
            "train.guided_lr_start" => {
                self.train.guided_lr_start = value.parse().map_err(|_| bad(value))?
            }
            "train.lr_end" => self.train.lr_end = value.parse().map_err(|_| bad(value))?,
            "train.lr_start" => self.train.lr_start = value.parse().map_err(|_| bad(value))?,
            "train.orth_weight" => {
                self.train.orth_weight = value.parse().map_err(|_| bad(value))?
            }
            "train.seed" => self.train.seed = value.parse().map_err(|_| bad(value))?,
            "train.w_feature" => self.train.w_feature = value.parse().map_err(|_| bad(value))?,
            "train.w_strong" => self.train.w_strong = value.parse().map_err(|_| bad(value))?,
            "train.warmup_batch" => {
                self.train.warmup_batch = value.parse().map_err(|_| bad(value))?
            }
            "train.warmup_epochs" => {
                self.train.warmup_epochs = value.parse().map_err(|_| bad(value))?
            }
            "train.weight_decay" => {
                self.train.weight_decay = value.parse().map_err(|_| bad(value))?
            }
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Parses a flat config file; unknown keys are errors.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!("config line without '=': {line:?}")));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys whose values differ between two configs.
    pub fn diff_keys(&self, other: &PipelineConfig) -> Vec<String> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, _)| a.0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_roundtrip_preserves_config() {
        let mut cfg = PipelineConfig::default();
        cfg.set("net.n_points", "64").unwrap();
        cfg.set("fusion.strategy", "penalty").unwrap();
        cfg.set("train.alpha0", "0.999").unwrap();
        let text = cfg.to_file_string();
        let back = PipelineConfig::from_str_content(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("net.bogus", "1").is_err());
        assert!(cfg.set("net.n_points", "many").is_err());
    }

    #[test]
    fn diff_keys_isolates_overrides() {
        let base = PipelineConfig::default();
        let mut arm = base.clone();
        arm.set("net.decoder", "mlp").unwrap();
        assert_eq!(base.diff_keys(&arm), vec!["net.decoder".to_string()]);
        assert!(base.diff_keys(&base.clone()).is_empty());
    }
}
