//! Network hyperparameters and the config hash that ties checkpoints,
//! priors, and datasets together.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    SelfAttention,
    Mlp,
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecoderKind::SelfAttention => write!(f, "self-attention"),
            DecoderKind::Mlp => write!(f, "mlp"),
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self-attention" => Ok(DecoderKind::SelfAttention),
            "mlp" => Ok(DecoderKind::Mlp),
            other => Err(Error::invalid(format!("unknown decoder kind {other:?}"))),
        }
    }
}

/// Shape of the reconstruction network. Three deformation stages are fixed;
/// everything else is configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Points per cloud for training and evaluation.
    pub n_points: usize,
    /// Square input image side.
    pub img_size: usize,
    pub img_channels: usize,
    /// Output channels of each stride-2 conv block.
    pub conv_channels: Vec<usize>,
    /// Image feature dimension.
    pub d_img: usize,
    /// Per-stage point feature widths; the last one is the decoder model dim.
    pub stage_dims: [usize; 3],
    /// Dimension of the per-stage semantic code (one activation per basis
    /// vector).
    pub z_dim: usize,
    pub heads: usize,
    /// Neighborhood size of the point feature extractor.
    pub knn_k: usize,
    /// At or below this many points the extractor switches to global
    /// single-head attention.
    pub global_attn_threshold: usize,
    pub decoder: DecoderKind,
    /// Width of the geometry / displacement MLP hidden layers.
    pub hidden: usize,
    pub sigma_floor: f64,
    pub adain_momentum: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            n_points: 256,
            img_size: 64,
            img_channels: 1,
            conv_channels: vec![16, 32, 64, 128],
            d_img: 256,
            stage_dims: [128, 64, 64],
            z_dim: 16,
            heads: 8,
            knn_k: 16,
            global_attn_threshold: 64,
            decoder: DecoderKind::SelfAttention,
            hidden: 128,
            sigma_floor: 1e-5,
            adain_momentum: 0.9,
        }
    }
}

impl NetConfig {
    pub fn d_model(&self) -> usize {
        self.stage_dims[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::invalid("n_points must be positive"));
        }
        if self.d_model() % self.heads != 0 {
            return Err(Error::invalid(format!(
                "head count {} must divide the model dim {}",
                self.heads,
                self.d_model()
            )));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::invalid("at least one conv block required"));
        }
        let mut side = self.img_size;
        for _ in &self.conv_channels {
            if side < 2 {
                return Err(Error::invalid(
                    "image too small for the configured conv stack",
                ));
            }
            side = side.div_ceil(2);
        }
        Ok(())
    }

    /// Canonical one-line-per-field rendering; the config hash is the
    /// SHA-256 of this string.
    pub fn canonical_string(&self) -> String {
        let conv = self
            .conv_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "adain_momentum={}\nconv_channels={}\nd_img={}\ndecoder={}\nglobal_attn_threshold={}\nheads={}\nhidden={}\nimg_channels={}\nimg_size={}\nknn_k={}\nn_points={}\nsigma_floor={}\nstage_dims={},{},{}\nz_dim={}\n",
            self.adain_momentum,
            conv,
            self.d_img,
            self.decoder,
            self.global_attn_threshold,
            self.heads,
            self.hidden,
            self.img_channels,
            self.img_size,
            self.knn_k,
            self.n_points,
            self.sigma_floor,
            self.stage_dims[0],
            self.stage_dims[1],
            self.stage_dims[2],
            self.z_dim,
        )
    }

    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = NetConfig::default();
        let b = NetConfig::default();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = NetConfig {
            n_points: 128,
            ..NetConfig::default()
        };
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn validate_rejects_bad_heads() {
        let cfg = NetConfig {
            heads: 7,
            ..NetConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
