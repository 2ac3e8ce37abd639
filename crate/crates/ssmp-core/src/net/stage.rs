//! One deformation stage: point feature extraction, image-conditioned
//! geometric modulation, semantic subspace features, adaptive instance
//! normalization, and semantic integration.

use crate::error::{Error, Result};
use crate::nn::layers::{init_uniform, ParamId, ParamSet};
use crate::nn::{Linear, Mlp, Tape, TapeParams, Tensor, Var};
use crate::spatial::SpatialIndex;
use rand::Rng;
use std::rc::Rc;

/// Moving-statistics sink filled during training-mode forwards; the trainer
/// folds these into the stored buffers after the step.
pub type StatUpdates = Vec<(ParamId, Tensor)>;

/// Forward mode: training uses instance statistics and reports them;
/// evaluation reads the stored moving averages.
pub enum Mode<'a> {
    Train(&'a mut StatUpdates),
    Eval,
}

/// Precomputed neighborhood structure for one input cloud. Each point owns a
/// group of `group` candidate rows: itself first, then its nearest
/// neighbors ordered by distance.
pub struct Neighborhoods {
    pub flat: Rc<Vec<usize>>,
    pub group: usize,
    /// `(n*group + j) x 3` coordinate differences `p_n - p_j`.
    pub pos_diff: Tensor,
}

impl Neighborhoods {
    pub fn build(points: &[[f64; 3]], k: usize) -> Self {
        let n = points.len();
        let k_eff = k.min(n.saturating_sub(1));
        let group = k_eff + 1;
        let index = SpatialIndex::build(points);
        let mut flat = Vec::with_capacity(n * group);
        let mut pos_diff = Tensor::zeros(&[n * group, 3]);
        for (i, p) in points.iter().enumerate() {
            // nearest_k includes the query point itself at distance zero.
            let neighbors = index.nearest_k(p, group);
            debug_assert_eq!(neighbors[0].0, i);
            for (slot, &(j, _)) in neighbors.iter().enumerate() {
                flat.push(j);
                let row = i * group + slot;
                for axis in 0..3 {
                    pos_diff.data_mut()[row * 3 + axis] = p[axis] - points[j][axis];
                }
            }
        }
        Neighborhoods {
            flat: Rc::new(flat),
            group,
            pos_diff,
        }
    }
}

/// Point feature extractor: vector attention over local neighborhoods, with
/// a global single-head fallback for small clouds.
#[derive(Debug, Clone)]
pub struct PointAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    pos: Mlp,
    score: Mlp,
    /// Learned shortcut added to the attention mix; keeps per-point
    /// identity from washing out through the neighborhood averaging.
    skip: Linear,
    out_dim: usize,
}

impl PointAttention {
    pub fn build(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        PointAttention {
            wq: Linear::new(ps, &format!("{name}.wq"), in_dim, out_dim, rng),
            wk: Linear::new(ps, &format!("{name}.wk"), in_dim, out_dim, rng),
            wv: Linear::new(ps, &format!("{name}.wv"), in_dim, out_dim, rng),
            pos: Mlp::new(ps, &format!("{name}.pos"), &[3, out_dim, out_dim], rng, false),
            score: Mlp::new(
                ps,
                &format!("{name}.score"),
                &[out_dim, out_dim, out_dim],
                rng,
                false,
            ),
            skip: Linear::new(ps, &format!("{name}.skip"), in_dim, out_dim, rng),
            out_dim,
        }
    }

    /// Local vector attention: per-channel weights over each point's
    /// neighborhood, with a learned relative-position term added to both the
    /// score input and the mixed values.
    pub fn apply_local<'t>(
        &self,
        tape: &'t Tape,
        tp: &TapeParams<'t>,
        feats: Var<'t>,
        hood: &Neighborhoods,
    ) -> Var<'t> {
        let q = self.wq.apply(tp, feats);
        let k = self.wk.apply(tp, feats);
        let v = self.wv.apply(tp, feats);
        let kg = k.gather_rows(hood.flat.clone());
        let vg = v.gather_rows(hood.flat.clone());
        let qrep = q.repeat_rows(hood.group);
        let delta = self.pos.apply(tp, tape.leaf(hood.pos_diff.clone()));
        let scores = self.score.apply(tp, qrep.sub(kg).add(delta));
        let attn = scores.group_softmax(hood.group);
        let mixed = attn.mul(vg.add(delta)).group_sum(hood.group);
        mixed.add(self.skip.apply(tp, feats))
    }

    /// Global fallback: plain single-head scaled dot-product attention over
    /// all points.
    pub fn apply_global<'t>(&self, tp: &TapeParams<'t>, feats: Var<'t>) -> Var<'t> {
        let q = self.wq.apply(tp, feats);
        let k = self.wk.apply(tp, feats);
        let v = self.wv.apply(tp, feats);
        let scale = 1.0 / (self.out_dim as f64).sqrt();
        let attn = q.matmul(k.transpose()).scale(scale).softmax_rows();
        attn.attn_weighted_sum(v).add(self.skip.apply(tp, feats))
    }
}

/// Learned linear subspace that decodes semantic attributes from the image
/// code: one scalar activation per basis vector, scaled by a learned
/// importance, summed with a bias.
#[derive(Debug, Clone)]
pub struct SemanticSubspace {
    code: Mlp,
    /// `z_dim x dim`; each row is one basis vector.
    pub basis: ParamId,
    importance: ParamId,
    bias: ParamId,
    z_dim: usize,
}

impl SemanticSubspace {
    pub fn build(
        ps: &mut ParamSet,
        name: &str,
        d_img: usize,
        z_dim: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let code = Mlp::new(ps, &format!("{name}.code"), &[d_img, z_dim], rng, false);
        let mut basis_init = init_uniform(&[z_dim, dim], dim, rng);
        normalize_rows(&mut basis_init);
        let basis = ps.add(format!("{name}.basis"), basis_init, true);
        let importance = ps.add(format!("{name}.importance"), Tensor::filled(&[1, z_dim], 1.0), true);
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[1, dim]), true);
        SemanticSubspace {
            code,
            basis,
            importance,
            bias,
            z_dim,
        }
    }

    /// `S = (importance ⊙ code(x)) · U + b`, a `1 x dim` row.
    pub fn apply<'t>(&self, tp: &TapeParams<'t>, x_img: Var<'t>) -> Result<Var<'t>> {
        let z = self.code.apply(tp, x_img);
        if z.shape() != vec![1, self.z_dim] {
            return Err(Error::invalid(format!(
                "semantic code shape {:?} does not match basis count {}",
                z.shape(),
                self.z_dim
            )));
        }
        let scaled = z.mul(tp.var(self.importance));
        Ok(scaled
            .matmul(tp.var(self.basis))
            .add_row_broadcast(tp.var(self.bias)))
    }
}

pub fn normalize_rows(t: &mut Tensor) {
    let (n, c) = (t.rows(), t.cols());
    for i in 0..n {
        let row = &mut t.data_mut()[i * c..(i + 1) * c];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row {
                *v /= norm;
            }
        }
    }
}

/// One deformation stage.
#[derive(Debug, Clone)]
pub struct Stage {
    pub dim: usize,
    extractor: PointAttention,
    /// Per-point MLP over `[image feature : point feature]`, producing the
    /// scale/shift modulation pair.
    geom: Mlp,
    pub semantic: SemanticSubspace,
    integrate: Mlp,
    run_mean: ParamId,
    run_var: ParamId,
    sigma_floor: f64,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        dim: usize,
        d_img: usize,
        z_dim: usize,
        hidden: usize,
        sigma_floor: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let extractor = PointAttention::build(ps, &format!("{name}.attn"), in_dim, dim, rng);
        let geom = Mlp::new(
            ps,
            &format!("{name}.geom"),
            &[d_img + in_dim, hidden, 2 * dim],
            rng,
            false,
        );
        // Start the normalization scale at one (identity-like modulation);
        // a near-zero initial scale suppresses the per-point signal and
        // stalls chamfer training.
        let geom_bias = ps
            .id_of(&format!("{name}.geom.1.b"))
            .expect("geometry output bias exists");
        let mut bias_init = Tensor::zeros(&[1, 2 * dim]);
        for j in 0..dim {
            bias_init.data_mut()[j] = 1.0;
        }
        ps.set(geom_bias, bias_init);
        let semantic = SemanticSubspace::build(ps, &format!("{name}.sem"), d_img, z_dim, dim, rng);
        let integrate = Mlp::new(ps, &format!("{name}.phi"), &[dim, dim], rng, false);
        let run_mean = ps.add(format!("{name}.adain.mean"), Tensor::zeros(&[dim]), false);
        let run_var = ps.add(format!("{name}.adain.var"), Tensor::filled(&[dim], 1.0), false);
        Stage {
            dim,
            extractor,
            geom,
            semantic,
            integrate,
            run_mean,
            run_var,
            sigma_floor,
        }
    }

    /// Geometric modulation from the concatenated image/point features.
    pub fn modulation<'t>(
        &self,
        tp: &TapeParams<'t>,
        x_img: Var<'t>,
        feats: Var<'t>,
    ) -> (Var<'t>, Var<'t>) {
        let joint = feats.concat_row_broadcast(x_img);
        let out = self.geom.apply(tp, joint);
        let gamma = out.slice_cols(0, self.dim);
        let beta = out.slice_cols(self.dim, self.dim);
        (gamma, beta)
    }

    pub fn extract<'t>(
        &self,
        tape: &'t Tape,
        tp: &TapeParams<'t>,
        feats: Var<'t>,
        hood: Option<&Neighborhoods>,
    ) -> Var<'t> {
        match hood {
            Some(h) => self.extractor.apply_local(tape, tp, feats, h),
            None => self.extractor.apply_global(tp, feats),
        }
    }

    pub fn adain<'t>(
        &self,
        ps: &ParamSet,
        q: Var<'t>,
        gamma: Var<'t>,
        beta: Var<'t>,
        mode: &mut Mode<'_>,
    ) -> Var<'t> {
        match mode {
            Mode::Train(sink) => {
                let (out, mean, var) = q.adain_batch(gamma, beta, self.sigma_floor);
                sink.push((self.run_mean, mean));
                sink.push((self.run_var, var));
                out
            }
            Mode::Eval => q.adain_eval(
                gamma,
                beta,
                ps.get(self.run_mean),
                ps.get(self.run_var),
                self.sigma_floor,
            ),
        }
    }

    /// Full stage: extract, modulate, normalize, integrate semantics.
    pub fn apply<'t>(
        &self,
        tape: &'t Tape,
        tp: &TapeParams<'t>,
        ps: &ParamSet,
        x_img: Var<'t>,
        feats: Var<'t>,
        hood: Option<&Neighborhoods>,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'t>> {
        let q = self.extract(tape, tp, feats, hood);
        let (gamma, beta) = self.modulation(tp, x_img, feats);
        let qhat = self.adain(ps, q, gamma, beta, mode);
        let s = self.semantic.apply(tp, x_img)?;
        let phi = self.integrate.apply(tp, s);
        Ok(qhat.add_row_broadcast(phi))
    }

    pub fn buffer_ids(&self) -> (ParamId, ParamId) {
        (self.run_mean, self.run_var)
    }
}
