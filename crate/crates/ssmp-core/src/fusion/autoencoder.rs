//! Point-cloud autoencoder used to place training shapes in a compact
//! latent space for prototype clustering.
//!
//! The encoder is a per-point MLP followed by channel-wise max pooling, so
//! encoding is invariant to point order. The decoder maps a latent vector to
//! a fixed-size cloud with a deterministic output ordering, which is what
//! gives decoded prototypes their index correspondence.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::optim::{cosine_lr, AdamW};
use crate::nn::{chamfer_to_const, Mlp, ParamSet, Tape, TapeParams, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct AeConfig {
    pub n_points: usize,
    pub latent_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Reconstruction quality the training schedule is sized for; tests
    /// allow 10x this on degenerate single-mode data.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            n_points: 256,
            latent_dim: 32,
            enc_hidden: 64,
            dec_hidden: 128,
            epochs: 300,
            batch: 16,
            lr_start: 1e-3,
            lr_end: 1e-5,
            tolerance: 5e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrototypeAutoencoder {
    pub cfg: AeConfig,
    params: ParamSet,
    point_mlp: Mlp,
    head: Mlp,
    dec: Mlp,
}

impl PrototypeAutoencoder {
    fn build(cfg: &AeConfig) -> Self {
        let mut params = ParamSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let h = cfg.enc_hidden;
        let point_mlp = Mlp::new(&mut params, "enc.point", &[3, h, h], &mut rng, false);
        let head = Mlp::new(&mut params, "enc.head", &[h, cfg.latent_dim], &mut rng, false);
        let dec = Mlp::new(
            &mut params,
            "dec",
            &[cfg.latent_dim, cfg.dec_hidden, cfg.dec_hidden, cfg.n_points * 3],
            &mut rng,
            false,
        );
        // Bias the output layer toward a uniform sphere so decoding starts
        // from a spread-out shape; chamfer training from a near-origin
        // clump stalls in poor assignments.
        let sphere = crate::fusion::sphere_cloud(cfg.n_points, "");
        let bias_id = params
            .id_of("dec.2.b")
            .expect("decoder output bias exists");
        params.set(bias_id, Tensor::from_vec(&[1, cfg.n_points * 3], sphere.flat()));
        PrototypeAutoencoder {
            cfg: cfg.clone(),
            params,
            point_mlp,
            head,
            dec,
        }
    }

    /// Trains on `clouds`, minimizing the chamfer distance between each
    /// cloud and its reconstruction. Deterministic given the config seed.
    pub fn train(clouds: &[PointCloud], cfg: &AeConfig) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::invalid("autoencoder needs at least one cloud"));
        }
        for (i, c) in clouds.iter().enumerate() {
            if c.len() != cfg.n_points {
                return Err(Error::invalid(format!(
                    "cloud {i} has {} points, expected {}",
                    c.len(),
                    cfg.n_points
                )));
            }
        }
        let mut ae = Self::build(cfg);
        let mut opt = AdamW::new(&ae.params, 1e-4);
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..clouds.len()).collect();
        let total_steps = (cfg.epochs * clouds.len().div_ceil(cfg.batch)) as u64;
        let mut step = 0u64;
        for _epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch) {
                let mut grad_acc: Vec<Option<Tensor>> = vec![None; ae.params.len()];
                for &idx in batch {
                    let cloud = &clouds[idx];
                    let tape = Tape::new();
                    let tp = TapeParams::register(&tape, &ae.params);
                    let recon = ae.forward(&tape, &tp, cloud);
                    let loss = chamfer_to_const(recon, cloud).scale(1.0 / batch.len() as f64);
                    let grads = tape.backward(loss);
                    for (slot, g) in tp.collect_grads(&grads).into_iter().enumerate() {
                        if let Some(g) = g {
                            match &mut grad_acc[slot] {
                                Some(acc) => acc.axpy(1.0, &g),
                                a @ None => *a = Some(g),
                            }
                        }
                    }
                }
                let lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end);
                opt.step(&mut ae.params, &grad_acc, lr);
                step += 1;
            }
        }
        Ok(ae)
    }

    fn forward<'t>(
        &self,
        tape: &'t Tape,
        tp: &TapeParams<'t>,
        cloud: &PointCloud,
    ) -> crate::nn::Var<'t> {
        let points = tape.leaf(Tensor::from_vec(&[cloud.len(), 3], cloud.flat()));
        let per_point = self.point_mlp.apply(tp, points).relu();
        let pooled = per_point.max_rows();
        let latent = self.head.apply(tp, pooled);
        self.dec
            .apply(tp, latent)
            .reshape(&[self.cfg.n_points, 3])
    }

    /// Permutation-invariant latent embedding.
    pub fn encode(&self, cloud: &PointCloud) -> Vec<f64> {
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, &self.params);
        let points = tape.leaf(Tensor::from_vec(&[cloud.len(), 3], cloud.flat()));
        let per_point = self.point_mlp.apply(&tp, points).relu();
        let pooled = per_point.max_rows();
        self.head.apply(&tp, pooled).value().data().to_vec()
    }

    /// Decodes a latent vector; identical latents decode to identical
    /// clouds with identical point ordering.
    pub fn decode(&self, latent: &[f64]) -> Result<PointCloud> {
        if latent.len() != self.cfg.latent_dim {
            return Err(Error::invalid(format!(
                "latent has dim {}, expected {}",
                latent.len(),
                self.cfg.latent_dim
            )));
        }
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, &self.params);
        let z = tape.leaf(Tensor::from_vec(&[1, self.cfg.latent_dim], latent.to_vec()));
        let out = self.dec.apply(&tp, z).value().data().to_vec();
        PointCloud::from_flat(&out)
    }

    pub fn reconstruction_cd(&self, cloud: &PointCloud) -> Result<f64> {
        let recon = self.decode(&self.encode(cloud))?;
        crate::cloud::chamfer_distance(&recon, cloud)
    }
}
