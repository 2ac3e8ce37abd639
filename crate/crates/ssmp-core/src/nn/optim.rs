//! Decoupled-weight-decay adaptive optimizer and learning-rate schedule.

use super::layers::ParamSet;
use super::tensor::Tensor;

/// AdamW: Adam moments plus weight decay applied directly to the parameters
/// rather than through the gradient. Buffers (non-trainable entries) are
/// skipped entirely.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ParamSet, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
            v: params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
            t: 0,
        }
    }

    /// One update with gradients aligned to the parameter set. `None`
    /// entries (unreached parameters) are treated as zero gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in 0..params.len() {
            if !params.entries()[id].trainable {
                continue;
            }
            let Some(g) = &grads[id] else { continue };
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let p = params.get_mut(id);
            for i in 0..g.len() {
                let gi = g.data()[i];
                m.data_mut()[i] = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                v.data_mut()[i] = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                let update = mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p.data()[i];
                p.data_mut()[i] -= lr * update;
            }
        }
    }
}

/// Cosine decay from `lr_start` to `lr_end` over `total` steps.
pub fn cosine_lr(step: u64, total: u64, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_end;
    }
    let t = (step.min(total)) as f64 / total as f64;
    lr_end + (lr_start - lr_end) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
