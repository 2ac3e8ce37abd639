//! Displacement decoders: multi-head self-attention (default) and a plain
//! per-point MLP used by the decoder-type ablation.
//!
//! Both produce an `N x 3` displacement added residually to the initial
//! cloud. The displacement head's last layer starts at zero, so an untrained
//! network reproduces the initial cloud exactly.

use crate::nn::{LayerNorm, Linear, Mlp, ParamSet, TapeParams, Tensor, Var};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct SelfAttentionDecoder {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    norm: LayerNorm,
    disp: Mlp,
    heads: usize,
    d_model: usize,
}

impl SelfAttentionDecoder {
    pub fn build(
        ps: &mut ParamSet,
        name: &str,
        d_model: usize,
        heads: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert_eq!(d_model % heads, 0, "heads must divide the model dim");
        SelfAttentionDecoder {
            wq: Linear::new(ps, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(ps, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(ps, &format!("{name}.wv"), d_model, d_model, rng),
            norm: LayerNorm::new(ps, &format!("{name}.norm"), d_model),
            disp: Mlp::new(ps, &format!("{name}.disp"), &[d_model, hidden, 3], rng, true),
            heads,
            d_model,
        }
    }

    /// Per-head attention mix, concatenated back to `N x d_model`.
    fn attention<'t>(&self, tp: &TapeParams<'t>, feats: Var<'t>) -> Var<'t> {
        let q = self.wq.apply(tp, feats);
        let k = self.wk.apply(tp, feats);
        let v = self.wv.apply(tp, feats);
        let dk = self.d_model / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut merged: Option<Var<'t>> = None;
        for h in 0..self.heads {
            let qh = q.slice_cols(h * dk, dk);
            let kh = k.slice_cols(h * dk, dk);
            let vh = v.slice_cols(h * dk, dk);
            let weights = qh.matmul(kh.transpose()).scale(scale).softmax_rows();
            let mixed = weights.attn_weighted_sum(vh);
            merged = Some(match merged {
                None => mixed,
                Some(acc) => acc.concat_cols(mixed),
            });
        }
        merged.expect("at least one head")
    }

    pub fn apply<'t>(&self, tp: &TapeParams<'t>, feats: Var<'t>) -> Var<'t> {
        let mixed = self.attention(tp, feats);
        let normed = self.norm.apply(tp, mixed);
        self.disp.apply(tp, normed)
    }

    /// Per-head attention weight matrices, for inspection and tests.
    pub fn attention_weights(&self, tp: &TapeParams<'_>, feats: Var<'_>) -> Vec<Tensor> {
        let q = self.wq.apply(tp, feats);
        let k = self.wk.apply(tp, feats);
        let dk = self.d_model / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        (0..self.heads)
            .map(|h| {
                let qh = q.slice_cols(h * dk, dk);
                let kh = k.slice_cols(h * dk, dk);
                qh.matmul(kh.transpose())
                    .scale(scale)
                    .softmax_rows()
                    .value()
                    .as_ref()
                    .clone()
            })
            .collect()
    }

    /// Value projection of the features, for the single-point identity test.
    pub fn value_projection(&self, tp: &TapeParams<'_>, feats: Var<'_>) -> Tensor {
        self.wv.apply(tp, feats).value().as_ref().clone()
    }
}

#[derive(Debug, Clone)]
pub struct MlpDecoder {
    disp: Mlp,
}

impl MlpDecoder {
    pub fn build(
        ps: &mut ParamSet,
        name: &str,
        d_model: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        MlpDecoder {
            disp: Mlp::new(ps, &format!("{name}.disp"), &[d_model, hidden, 3], rng, true),
        }
    }

    pub fn apply<'t>(&self, tp: &TapeParams<'t>, feats: Var<'t>) -> Var<'t> {
        self.disp.apply(tp, feats)
    }
}

#[derive(Debug, Clone)]
pub enum Decoder {
    SelfAttention(SelfAttentionDecoder),
    Mlp(MlpDecoder),
}

impl Decoder {
    pub fn apply<'t>(&self, tp: &TapeParams<'t>, feats: Var<'t>) -> Var<'t> {
        match self {
            Decoder::SelfAttention(d) => d.apply(tp, feats),
            Decoder::Mlp(d) => d.apply(tp, feats),
        }
    }
}
