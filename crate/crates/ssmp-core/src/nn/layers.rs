//! Parameter registry and the small layer vocabulary the networks are
//! composed from.
//!
//! Layers do not own tensors. They hold [`ParamId`]s into a [`ParamSet`];
//! the same layer structure can therefore run against the teacher's or the
//! student's parameters, and the optimizer and EMA operate on flat,
//! name-addressable collections.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use std::collections::HashMap;

pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (running statistics) are not touched by the optimizer.
    pub trainable: bool,
}

/// Flat, ordered, name-addressable collection of parameters and buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.entries[id].value.shape(),
            value.shape(),
            "shape change on parameter {}",
            self.entries[id].name
        );
        self.entries[id].value = value;
    }

    /// Checks that two sets have the same names, shapes, and flags.
    pub fn congruent(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Consistency(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.value.shape() != b.value.shape() || a.trainable != b.trainable
            {
                return Err(Error::Consistency(format!(
                    "parameter mismatch at {} vs {}",
                    a.name, b.name
                )));
            }
        }
        Ok(())
    }

    /// `self = alpha * self + (1 - alpha) * other`, element-wise over every
    /// entry (parameters and buffers alike).
    pub fn blend(&mut self, other: &ParamSet, alpha: f64) -> Result<()> {
        self.congruent(other)?;
        if alpha == 1.0 {
            return Ok(());
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if alpha == 0.0 {
                a.value = b.value.clone();
            } else {
                for (x, &y) in a.value.data_mut().iter_mut().zip(b.value.data()) {
                    *x = alpha * *x + (1.0 - alpha) * y;
                }
            }
        }
        Ok(())
    }

    /// Order-stable checksum over all entries; used to assert that a set was
    /// not touched.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for e in &self.entries {
            for b in e.name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
            }
            for v in e.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Per-tape leaf variables for every entry of a [`ParamSet`], aligned by id.
pub struct TapeParams<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> TapeParams<'t> {
    pub fn register(tape: &'t Tape, params: &ParamSet) -> Self {
        TapeParams {
            vars: params
                .entries()
                .iter()
                .map(|e| tape.leaf(e.value.clone()))
                .collect(),
        }
    }

    /// Like [`TapeParams::register`], but routes the listed parameter ids
    /// through externally supplied vars so gradients can be taken with
    /// respect to them (finite-difference checks use this).
    pub fn register_with_overrides(
        tape: &'t Tape,
        params: &ParamSet,
        override_ids: &[ParamId],
        override_vars: &[Var<'t>],
    ) -> Self {
        let mut vars: Vec<Var<'t>> = params
            .entries()
            .iter()
            .map(|e| tape.leaf(e.value.clone()))
            .collect();
        for (slot, &id) in override_ids.iter().enumerate() {
            vars[id] = override_vars[slot];
        }
        TapeParams { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id]
    }

    /// Extracts per-parameter gradients (aligned with the `ParamSet`) from a
    /// backward pass.
    pub fn collect_grads(&self, node_grads: &[Option<Tensor>]) -> Vec<Option<Tensor>> {
        self.vars
            .iter()
            .map(|v| node_grads[v.index()].clone())
            .collect()
    }
}

/// Fan-in scaled uniform initialization.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Fully connected layer `y = x W + b` over `N x in` row batches.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = ps.add(
            format!("{name}.w"),
            init_uniform(&[in_dim, out_dim], in_dim, rng),
            true,
        );
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[1, out_dim]), true);
        Linear { w, b }
    }

    /// A layer whose weights and bias start at exactly zero (used for the
    /// displacement head so training starts from the identity mapping).
    pub fn new_zeroed(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[in_dim, out_dim]), true);
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[1, out_dim]), true);
        Linear { w, b }
    }

    pub fn apply<'t>(&self, tp: &TapeParams<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(tp.var(self.w)).add_row_broadcast(tp.var(self.b))
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        dims: &[usize],
        rng: &mut impl Rng,
        zero_last: bool,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let lname = format!("{name}.{i}");
            let layer = if zero_last && i == dims.len() - 2 {
                Linear::new_zeroed(ps, &lname, dims[i], dims[i + 1])
            } else {
                Linear::new(ps, &lname, dims[i], dims[i + 1], rng)
            };
            layers.push(layer);
        }
        Mlp { layers }
    }

    pub fn apply<'t>(&self, tp: &TapeParams<'t>, mut x: Var<'t>) -> Var<'t> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(tp, x);
            if i + 1 < self.layers.len() {
                x = x.relu();
            }
        }
        x
    }
}

/// 3x3 stride-2 convolution block with bias and ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * 9;
        let w = ps.add(
            format!("{name}.w"),
            init_uniform(&[out_ch, in_ch, 3, 3], fan_in, rng),
            true,
        );
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[out_ch]), true);
        ConvBlock { w, b }
    }

    pub fn apply<'t>(&self, tp: &TapeParams<'t>, x: Var<'t>) -> Var<'t> {
        x.conv2d(tp.var(self.w), tp.var(self.b), 2, 1).relu()
    }
}

/// Learnable layer normalization over rows.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gain = ps.add(format!("{name}.gain"), Tensor::filled(&[1, dim], 1.0), true);
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[1, dim]), true);
        LayerNorm {
            gain,
            bias,
            eps: 1e-6,
        }
    }

    pub fn apply<'t>(&self, tp: &TapeParams<'t>, x: Var<'t>) -> Var<'t> {
        x.layer_norm_rows(tp.var(self.gain), tp.var(self.bias), self.eps)
    }
}
