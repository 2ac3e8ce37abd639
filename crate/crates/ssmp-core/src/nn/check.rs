//! Central finite-difference gradient checking.
//!
//! The checker only ever calls the forward pass, so it is independent of the
//! analytic backward implementations it verifies.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `‖g_analytic − g_fd‖ / max(‖g_fd‖, floor)` aggregated over all inputs.
    pub rel_error: f64,
    /// Largest per-element relative deviation.
    pub max_elem_rel: f64,
}

/// Shapes a closure into the higher-ranked form [`finite_diff_check`] needs.
pub fn fd_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    f
}

/// Compares the analytic gradient of `build` (a scalar-valued function of
/// the leaf tensors) against central finite differences with step `h`.
pub fn finite_diff_check<F>(build: F, inputs: &[Tensor], h: f64) -> GradCheck
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&tape, &vars);
        let grads = tape.backward(loss);
        vars.iter()
            .map(|v| {
                grads[v.index()]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(&v.shape()))
            })
            .collect::<Vec<_>>()
    };

    let eval = |perturbed: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        build(&tape, &vars).value().item()
    };

    let mut diff_sq = 0.0f64;
    let mut fd_sq = 0.0f64;
    let mut max_elem_rel = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[e] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = analytic[ti].data()[e];
            diff_sq += (fd - an) * (fd - an);
            fd_sq += fd * fd;
            let denom = fd.abs().max(an.abs());
            if denom > 1e-6 {
                max_elem_rel = max_elem_rel.max((fd - an).abs() / denom);
            }
        }
    }
    GradCheck {
        rel_error: diff_sq.sqrt() / fd_sq.sqrt().max(1e-10),
        max_elem_rel,
    }
}
