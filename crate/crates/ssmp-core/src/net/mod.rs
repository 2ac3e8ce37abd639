//! The reconstruction network.
//!
//! An image feature conditions three deformation stages over the fused
//! initial cloud; a displacement decoder adds the result back onto the
//! initial cloud. All learnable state lives in a flat [`ParamSet`] so the
//! teacher and student can share structure while owning separate weights.

pub mod config;
pub mod decoder;
pub mod image_encoder;
pub mod stage;

#[cfg(test)]
mod tests;

pub use config::{DecoderKind, NetConfig};
pub use stage::{Mode, Neighborhoods, StatUpdates};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::{Linear, ParamSet, Tape, TapeParams, Tensor, Var};
use decoder::{Decoder, MlpDecoder, SelfAttentionDecoder};
use image_encoder::ImageEncoder;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use stage::{normalize_rows, Stage};

#[derive(Debug, Clone)]
pub struct ReconNet {
    pub cfg: NetConfig,
    pub image_encoder: ImageEncoder,
    embed: Linear,
    stages: Vec<Stage>,
    pub decoder: Decoder,
}

impl ReconNet {
    /// Registers all parameters into `ps` and returns the network structure.
    /// Initialization is fully determined by `seed`.
    pub fn build(cfg: &NetConfig, ps: &mut ParamSet, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let image_encoder = ImageEncoder::build(
            ps,
            "img",
            cfg.img_size,
            cfg.img_channels,
            &cfg.conv_channels,
            cfg.d_img,
            &mut rng,
        );
        let embed = Linear::new(ps, "embed", 3, cfg.stage_dims[0], &mut rng);
        let mut stages = Vec::with_capacity(3);
        let mut in_dim = cfg.stage_dims[0];
        for (i, &dim) in cfg.stage_dims.iter().enumerate() {
            stages.push(Stage::build(
                ps,
                &format!("stage{i}"),
                in_dim,
                dim,
                cfg.d_img,
                cfg.z_dim,
                cfg.hidden,
                cfg.sigma_floor,
                &mut rng,
            ));
            in_dim = dim;
        }
        let decoder = match cfg.decoder {
            DecoderKind::SelfAttention => Decoder::SelfAttention(SelfAttentionDecoder::build(
                ps,
                "decoder",
                cfg.d_model(),
                cfg.heads,
                cfg.hidden,
                &mut rng,
            )),
            DecoderKind::Mlp => {
                Decoder::Mlp(MlpDecoder::build(ps, "decoder", cfg.d_model(), cfg.hidden, &mut rng))
            }
        };
        Ok(ReconNet {
            cfg: cfg.clone(),
            image_encoder,
            embed,
            stages,
            decoder,
        })
    }

    /// Image -> feature row. Deterministic; the backbone seam for swapping
    /// in a different encoder is [`ReconNet::forward_from_feature`].
    pub fn encode_image<'t>(
        &self,
        tape: &'t Tape,
        tp: &TapeParams<'t>,
        image: &Image,
    ) -> Result<Var<'t>> {
        self.image_encoder.apply(tape, tp, image)
    }

    /// Full forward pass: encode the image, then deform the initial cloud.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        tp: &TapeParams<'t>,
        ps: &ParamSet,
        image: &Image,
        initial: &PointCloud,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'t>> {
        let x = self.encode_image(tape, tp, image)?;
        self.forward_from_feature(tape, tp, ps, x, initial, mode)
    }

    /// Deformation pipeline from an already-computed image feature row.
    pub fn forward_from_feature<'t>(
        &self,
        tape: &'t Tape,
        tp: &TapeParams<'t>,
        ps: &ParamSet,
        x_img: Var<'t>,
        initial: &PointCloud,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'t>> {
        if x_img.shape() != vec![1, self.cfg.d_img] {
            return Err(Error::invalid(format!(
                "image feature shape {:?}, expected [1, {}]",
                x_img.shape(),
                self.cfg.d_img
            )));
        }
        let n = initial.len();
        let hood = if n > self.cfg.global_attn_threshold {
            if self.cfg.knn_k >= n {
                log::warn!("knn_k {} >= cloud size {n}; clamping to {}", self.cfg.knn_k, n - 1);
            }
            Some(Neighborhoods::build(initial.points(), self.cfg.knn_k.min(n - 1)))
        } else {
            None
        };
        let initial_t = tape.leaf(Tensor::from_vec(&[n, 3], initial.flat()));
        let mut feats = self.embed.apply(tp, initial_t);
        for stage in &self.stages {
            feats = stage.apply(tape, tp, ps, x_img, feats, hood.as_ref(), mode)?;
        }
        let disp = self.decoder.apply(tp, feats);
        Ok(disp.add(initial_t))
    }

    /// Soft orthogonality penalty over all stage bases:
    /// `Σ_i ‖U_i U_iᵀ − I‖²_F`, zero exactly at orthonormal bases.
    pub fn orthogonality_loss<'t>(&self, tape: &'t Tape, tp: &TapeParams<'t>) -> Var<'t> {
        let mut total: Option<Var<'t>> = None;
        for stage in &self.stages {
            let u = tp.var(stage.semantic.basis);
            let gram = u.matmul(u.transpose());
            let k = gram.shape()[0];
            let neg_eye = Tensor::identity(k).scale(-1.0);
            let term = gram.add_const(&neg_eye).sum_sq();
            total = Some(match total {
                None => term,
                Some(acc) => acc.add(term),
            });
        }
        total.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)))
    }

    /// Rescales every basis vector to unit norm. Run after each optimizer
    /// step; orthogonality between vectors is driven by the loss, unit
    /// length by this projection.
    pub fn renormalize_bases(&self, ps: &mut ParamSet) {
        for stage in &self.stages {
            normalize_rows(ps.get_mut(stage.semantic.basis));
        }
    }

    /// Folds training-mode statistics into the stored moving averages.
    pub fn apply_stat_updates(&self, ps: &mut ParamSet, updates: &StatUpdates) {
        let momentum = self.cfg.adain_momentum;
        for (id, batch) in updates {
            let stored = ps.get_mut(*id);
            for (s, &b) in stored.data_mut().iter_mut().zip(batch.data()) {
                *s = momentum * *s + (1.0 - momentum) * b;
            }
        }
    }

    pub fn stage(&self, i: usize) -> &Stage {
        &self.stages[i]
    }

    pub fn config_hash(&self) -> String {
        self.cfg.config_hash()
    }
}
