//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A `Tape` records one forward pass; `backward` replays it in reverse and
//! accumulates gradients into every node. Each training sample gets its own
//! tape, so tapes are single-threaded and cheap to drop.
//!
//! Reductions that run across a permutable axis (attention mixing, batch
//! statistics, softmax denominators) sum their terms in an order determined
//! by the summand values, not their positions in memory. Permuting the rows
//! of the input therefore reproduces bit-identical outputs, which is what
//! lets the forward pass satisfy exact permutation equivariance.

use super::tensor::{canonical_sum, Tensor};
use crate::cloud::PointCloud;
use crate::spatial::SpatialIndex;
use std::cell::RefCell;
use std::rc::Rc;

type EmitFn<'a> = dyn FnMut(usize, Tensor) + 'a;
type BackFn = Box<dyn Fn(&Tensor, &mut EmitFn)>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackFn>,
}

/// Records the computation graph of one forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Registers an input. Gradients accumulate into leaves but do not
    /// propagate further.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None)
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn value(&self, idx: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[idx].value)
    }

    /// Runs reverse-mode accumulation from `loss` (a scalar node).
    /// Returns per-node gradients; entries for nodes the loss does not
    /// depend on are `None`.
    pub fn backward(&self, loss: Var<'_>) -> Vec<Option<Tensor>> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.idx].value.len(),
            1,
            "backward from a non-scalar node"
        );
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.idx).rev() {
            let node = &nodes[idx];
            let Some(back) = &node.backward else { continue };
            let Some(grad) = grads[idx].take() else { continue };
            let parents = node.parents.clone();
            back(&grad, &mut |slot, contribution| {
                let target = parents[slot];
                match &mut grads[target] {
                    Some(acc) => acc.axpy(1.0, &contribution),
                    slot_grad @ None => *slot_grad = Some(contribution),
                }
            });
        }
        grads
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.idx)
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    // ---- elementwise -----------------------------------------------------

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let out = self.value().add(&other.value());
        self.tape.push(
            out,
            vec![self.idx, other.idx],
            Some(Box::new(|g, emit| {
                emit(0, g.clone());
                emit(1, g.clone());
            })),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let out = self.value().sub(&other.value());
        self.tape.push(
            out,
            vec![self.idx, other.idx],
            Some(Box::new(|g, emit| {
                emit(0, g.clone());
                emit(1, g.scale(-1.0));
            })),
        )
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let out = a.mul(&b);
        self.tape.push(
            out,
            vec![self.idx, other.idx],
            Some(Box::new(move |g, emit| {
                emit(0, g.mul(&b));
                emit(1, g.mul(&a));
            })),
        )
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        let out = self.value().scale(k);
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| emit(0, g.scale(k)))),
        )
    }

    /// Adds a constant tensor (no gradient flows into it).
    pub fn add_const(self, constant: &Tensor) -> Var<'t> {
        let out = self.value().add(constant);
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(|g, emit| emit(0, g.clone()))),
        )
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(self, constant: &Tensor) -> Var<'t> {
        let out = self.value().mul(constant);
        let c = constant.clone();
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| emit(0, g.mul(&c)))),
        )
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value();
        let out = v.map(|x| x.max(0.0));
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                emit(0, g.zip_map(&v, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            })),
        )
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = rhs.value();
        let out = a.matmul(&b);
        self.tape.push(
            out,
            vec![self.idx, rhs.idx],
            Some(Box::new(move |g, emit| {
                emit(0, g.matmul(&b.transpose()));
                emit(1, a.transpose().matmul(g));
            })),
        )
    }

    pub fn transpose(self) -> Var<'t> {
        let out = self.value().transpose();
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(|g, emit| emit(0, g.transpose()))),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let orig = self.shape();
        let out = self.value().reshaped(shape);
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| emit(0, g.reshaped(&orig)))),
        )
    }

    // ---- structure ---------------------------------------------------------

    /// Per-row concatenation of two matrices with equal row counts.
    pub fn concat_cols(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let (n, ca) = (a.rows(), a.cols());
        let cb = b.cols();
        assert_eq!(n, b.rows(), "concat_cols row mismatch");
        let mut out = Tensor::zeros(&[n, ca + cb]);
        for i in 0..n {
            out.data_mut()[i * (ca + cb)..i * (ca + cb) + ca]
                .copy_from_slice(&a.data()[i * ca..(i + 1) * ca]);
            out.data_mut()[i * (ca + cb) + ca..(i + 1) * (ca + cb)]
                .copy_from_slice(&b.data()[i * cb..(i + 1) * cb]);
        }
        self.tape.push(
            out,
            vec![self.idx, other.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[n, ca]);
                let mut gb = Tensor::zeros(&[n, cb]);
                for i in 0..n {
                    ga.data_mut()[i * ca..(i + 1) * ca]
                        .copy_from_slice(&g.data()[i * (ca + cb)..i * (ca + cb) + ca]);
                    gb.data_mut()[i * cb..(i + 1) * cb]
                        .copy_from_slice(&g.data()[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                }
                emit(0, ga);
                emit(1, gb);
            })),
        )
    }

    /// Concatenates a single row vector (`1 x D`) onto every row of `self`.
    pub fn concat_row_broadcast(self, row: Var<'t>) -> Var<'t> {
        let a = self.value();
        let r = row.value();
        let (n, ca) = (a.rows(), a.cols());
        let d = r.len();
        let mut out = Tensor::zeros(&[n, ca + d]);
        for i in 0..n {
            out.data_mut()[i * (ca + d)..i * (ca + d) + ca]
                .copy_from_slice(&a.data()[i * ca..(i + 1) * ca]);
            out.data_mut()[i * (ca + d) + ca..(i + 1) * (ca + d)].copy_from_slice(r.data());
        }
        let row_shape = r.shape().to_vec();
        self.tape.push(
            out,
            vec![self.idx, row.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[n, ca]);
                let mut gr = Tensor::zeros(&row_shape);
                for i in 0..n {
                    ga.data_mut()[i * ca..(i + 1) * ca]
                        .copy_from_slice(&g.data()[i * (ca + d)..i * (ca + d) + ca]);
                    for j in 0..d {
                        gr.data_mut()[j] += g.data()[i * (ca + d) + ca + j];
                    }
                }
                emit(0, ga);
                emit(1, gr);
            })),
        )
    }

    /// Adds a `1 x C` row vector to every row of an `N x C` matrix.
    pub fn add_row_broadcast(self, row: Var<'t>) -> Var<'t> {
        let a = self.value();
        let r = row.value();
        let (n, c) = (a.rows(), a.cols());
        assert_eq!(r.len(), c, "row broadcast width mismatch");
        let mut out = a.as_ref().clone();
        for i in 0..n {
            for j in 0..c {
                out.data_mut()[i * c + j] += r.data()[j];
            }
        }
        let row_shape = r.shape().to_vec();
        self.tape.push(
            out,
            vec![self.idx, row.idx],
            Some(Box::new(move |g, emit| {
                emit(0, g.clone());
                let mut gr = Tensor::zeros(&row_shape);
                for i in 0..n {
                    for j in 0..c {
                        gr.data_mut()[j] += g.data()[i * c + j];
                    }
                }
                emit(1, gr);
            })),
        )
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let a = self.value();
        let (n, c) = (a.rows(), a.cols());
        assert!(start + len <= c, "slice_cols out of range");
        let mut out = Tensor::zeros(&[n, len]);
        for i in 0..n {
            out.data_mut()[i * len..(i + 1) * len]
                .copy_from_slice(&a.data()[i * c + start..i * c + start + len]);
        }
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[n, c]);
                for i in 0..n {
                    ga.data_mut()[i * c + start..i * c + start + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                emit(0, ga);
            })),
        )
    }

    /// Selects rows by index; an index may repeat.
    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Var<'t> {
        let a = self.value();
        let (n, c) = (a.rows(), a.cols());
        let m = idx.len();
        let mut out = Tensor::zeros(&[m, c]);
        for (slot, &i) in idx.iter().enumerate() {
            out.data_mut()[slot * c..(slot + 1) * c].copy_from_slice(&a.data()[i * c..(i + 1) * c]);
        }
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[n, c]);
                for (slot, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga.data_mut()[i * c + j] += g.data()[slot * c + j];
                    }
                }
                emit(0, ga);
            })),
        )
    }

    /// Repeats every row `k` times: output row `n*k + j` equals input row `n`.
    pub fn repeat_rows(self, k: usize) -> Var<'t> {
        let a = self.value();
        let (n, c) = (a.rows(), a.cols());
        let mut out = Tensor::zeros(&[n * k, c]);
        for i in 0..n {
            for j in 0..k {
                out.data_mut()[(i * k + j) * c..(i * k + j + 1) * c]
                    .copy_from_slice(&a.data()[i * c..(i + 1) * c]);
            }
        }
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[n, c]);
                for i in 0..n {
                    for j in 0..k {
                        for col in 0..c {
                            ga.data_mut()[i * c + col] += g.data()[(i * k + j) * c + col];
                        }
                    }
                }
                emit(0, ga);
            })),
        )
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum_all(self) -> Var<'t> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let out = Tensor::scalar(a.sum());
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                emit(0, Tensor::filled(&shape, g.item()));
            })),
        )
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum of squared entries.
    pub fn sum_sq(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::scalar(a.data().iter().map(|v| v * v).sum());
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                emit(0, a.scale(2.0 * g.item()));
            })),
        )
    }

    /// Column-wise max over rows; gradient flows to the (first) argmax row.
    pub fn max_rows(self) -> Var<'t> {
        let a = self.value();
        let (n, c) = (a.rows(), a.cols());
        let mut out = Tensor::zeros(&[1, c]);
        let mut arg = vec![0usize; c];
        for j in 0..c {
            let mut best = a.at2(0, j);
            for i in 1..n {
                if a.at2(i, j) > best {
                    best = a.at2(i, j);
                    arg[j] = i;
                }
            }
            out.data_mut()[j] = best;
        }
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[n, c]);
                for j in 0..c {
                    ga.data_mut()[arg[j] * c + j] = g.data()[j];
                }
                emit(0, ga);
            })),
        )
    }

    // ---- attention ----------------------------------------------------------

    /// Row-wise softmax. The normalizing sum per row is evaluated in
    /// value-canonical order.
    pub fn softmax_rows(self) -> Var<'t> {
        let a = self.value();
        let (n, c) = (a.rows(), a.cols());
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let row = &a.data()[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let mut sorted = exps.clone();
            let denom = canonical_sum(&mut sorted);
            for (j, e) in exps.drain(..).enumerate() {
                out.data_mut()[i * c + j] = e / denom;
            }
        }
        let y = Rc::new(out.clone());
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[n, c]);
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g.at2(i, j) * y.at2(i, j);
                    }
                    for j in 0..c {
                        ga.data_mut()[i * c + j] = y.at2(i, j) * (g.at2(i, j) - dot);
                    }
                }
                emit(0, ga);
            })),
        )
    }

    /// `weights (N x M) . values (M x C)`, with each output element summed in
    /// an order keyed by the weight values (ties fall back to comparing the
    /// corresponding value rows). This is the attention mixing step; the
    /// canonical order makes it invariant to a joint permutation of weights
    /// columns and value rows.
    pub fn attn_weighted_sum(self, values: Var<'t>) -> Var<'t> {
        let a = self.value();
        let v = values.value();
        let (n, m) = (a.rows(), a.cols());
        let c = v.cols();
        assert_eq!(m, v.rows(), "attn_weighted_sum inner dim mismatch");
        let mut out = Tensor::zeros(&[n, c]);
        let mut order: Vec<usize> = Vec::with_capacity(m);
        for i in 0..n {
            order.clear();
            order.extend(0..m);
            let row = &a.data()[i * m..(i + 1) * m];
            order.sort_unstable_by(|&x, &y| {
                let kx = total_key(row[x]);
                let ky = total_key(row[y]);
                kx.cmp(&ky).then_with(|| {
                    let rx = &v.data()[x * c..(x + 1) * c];
                    let ry = &v.data()[y * c..(y + 1) * c];
                    for (px, py) in rx.iter().zip(ry) {
                        let o = total_key(*px).cmp(&total_key(*py));
                        if o != std::cmp::Ordering::Equal {
                            return o;
                        }
                    }
                    std::cmp::Ordering::Equal
                })
            });
            for col in 0..c {
                let mut acc = 0.0;
                for &j in &order {
                    acc += row[j] * v.at2(j, col);
                }
                out.data_mut()[i * c + col] = acc;
            }
        }
        self.tape.push(
            out,
            vec![self.idx, values.idx],
            Some(Box::new(move |g, emit| {
                emit(0, g.matmul(&v.transpose()));
                emit(1, a.transpose().matmul(g));
            })),
        )
    }

    /// Softmax within consecutive groups of `group` rows, independently per
    /// column. Used by neighborhood attention where each point owns a block
    /// of `group` candidate rows.
    pub fn group_softmax(self, group: usize) -> Var<'t> {
        let a = self.value();
        let (rows, c) = (a.rows(), a.cols());
        assert_eq!(rows % group, 0, "group_softmax row count not divisible");
        let n = rows / group;
        let mut out = Tensor::zeros(&[rows, c]);
        let mut exps = vec![0.0f64; group];
        for b in 0..n {
            for col in 0..c {
                let mut max = f64::NEG_INFINITY;
                for j in 0..group {
                    max = max.max(a.at2(b * group + j, col));
                }
                for j in 0..group {
                    exps[j] = (a.at2(b * group + j, col) - max).exp();
                }
                let mut sorted = exps.clone();
                let denom = canonical_sum(&mut sorted);
                for j in 0..group {
                    out.data_mut()[(b * group + j) * c + col] = exps[j] / denom;
                }
            }
        }
        let y = Rc::new(out.clone());
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[rows, c]);
                for b in 0..n {
                    for col in 0..c {
                        let mut dot = 0.0;
                        for j in 0..group {
                            let r = b * group + j;
                            dot += g.at2(r, col) * y.at2(r, col);
                        }
                        for j in 0..group {
                            let r = b * group + j;
                            ga.data_mut()[r * c + col] = y.at2(r, col) * (g.at2(r, col) - dot);
                        }
                    }
                }
                emit(0, ga);
            })),
        )
    }

    /// Sums consecutive groups of `group` rows into one row each, per column,
    /// in value-canonical order.
    pub fn group_sum(self, group: usize) -> Var<'t> {
        let a = self.value();
        let (rows, c) = (a.rows(), a.cols());
        assert_eq!(rows % group, 0, "group_sum row count not divisible");
        let n = rows / group;
        let mut out = Tensor::zeros(&[n, c]);
        let mut buf = vec![0.0f64; group];
        for b in 0..n {
            for col in 0..c {
                for j in 0..group {
                    buf[j] = a.at2(b * group + j, col);
                }
                out.data_mut()[b * c + col] = canonical_sum(&mut buf);
            }
        }
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                let mut ga = Tensor::zeros(&[rows, c]);
                for b in 0..n {
                    for col in 0..c {
                        for j in 0..group {
                            ga.data_mut()[(b * group + j) * c + col] = g.at2(b, col);
                        }
                    }
                }
                emit(0, ga);
            })),
        )
    }

    // ---- normalization -------------------------------------------------------

    /// Layer normalization across each row, with learnable gain and bias.
    pub fn layer_norm_rows(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Var<'t> {
        let x = self.value();
        let gn = gain.value();
        let bs = bias.value();
        let (n, c) = (x.rows(), x.cols());
        assert_eq!(gn.len(), c);
        assert_eq!(bs.len(), c);
        let mut out = Tensor::zeros(&[n, c]);
        let mut xhat = Tensor::zeros(&[n, c]);
        let mut inv_std = vec![0.0f64; n];
        for i in 0..n {
            let row = &x.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat.data_mut()[i * c + j] = h;
                out.data_mut()[i * c + j] = gn.data()[j] * h + bs.data()[j];
            }
        }
        let xhat = Rc::new(xhat);
        let gain_shape = gn.shape().to_vec();
        let bias_shape = bs.shape().to_vec();
        self.tape.push(
            out,
            vec![self.idx, gain.idx, bias.idx],
            Some(Box::new(move |g, emit| {
                let mut gx = Tensor::zeros(&[n, c]);
                let mut gg = Tensor::zeros(&gain_shape);
                let mut gb = Tensor::zeros(&bias_shape);
                for i in 0..n {
                    let mut mean_h = 0.0;
                    let mut mean_hx = 0.0;
                    for j in 0..c {
                        let h = g.at2(i, j) * gn.data()[j];
                        mean_h += h;
                        mean_hx += h * xhat.at2(i, j);
                        gg.data_mut()[j] += g.at2(i, j) * xhat.at2(i, j);
                        gb.data_mut()[j] += g.at2(i, j);
                    }
                    mean_h /= c as f64;
                    mean_hx /= c as f64;
                    for j in 0..c {
                        let h = g.at2(i, j) * gn.data()[j];
                        gx.data_mut()[i * c + j] =
                            inv_std[i] * (h - mean_h - xhat.at2(i, j) * mean_hx);
                    }
                }
                emit(0, gx);
                emit(1, gg);
                emit(2, gb);
            })),
        )
    }

    /// Adaptive instance normalization with statistics taken from the
    /// current instance: per channel over the N rows,
    /// `y = gamma * (x - mu) / sigma + beta`, `sigma = max(sqrt(var), floor)`.
    ///
    /// Returns the output plus the batch `(mean, var)` per channel so the
    /// caller can fold them into moving averages.
    pub fn adain_batch(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        sigma_floor: f64,
    ) -> (Var<'t>, Tensor, Tensor) {
        let x = self.value();
        let (n, c) = (x.rows(), x.cols());
        let mut mean = Tensor::zeros(&[c]);
        let mut var = Tensor::zeros(&[c]);
        let mut buf = vec![0.0f64; n];
        for j in 0..c {
            for i in 0..n {
                buf[i] = x.at2(i, j);
            }
            let m = canonical_sum(&mut buf) / n as f64;
            mean.data_mut()[j] = m;
            for i in 0..n {
                let d = x.at2(i, j) - m;
                buf[i] = d * d;
            }
            var.data_mut()[j] = canonical_sum(&mut buf) / n as f64;
        }
        let out = self.adain_with_stats(gamma, beta, &mean, &var, sigma_floor, true);
        (out, mean, var)
    }

    /// AdaIN with externally supplied statistics (the stored moving
    /// averages). No gradient flows into the statistics.
    pub fn adain_eval(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        mean: &Tensor,
        var: &Tensor,
        sigma_floor: f64,
    ) -> Var<'t> {
        self.adain_with_stats(gamma, beta, mean, var, sigma_floor, false)
    }

    fn adain_with_stats(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        mean: &Tensor,
        var: &Tensor,
        sigma_floor: f64,
        stats_from_input: bool,
    ) -> Var<'t> {
        let x = self.value();
        let gm = gamma.value();
        let bt = beta.value();
        let (n, c) = (x.rows(), x.cols());
        assert_eq!(gm.shape(), x.shape(), "adain gamma shape");
        assert_eq!(bt.shape(), x.shape(), "adain beta shape");
        let sigma: Vec<f64> = var.data().iter().map(|&v| v.sqrt().max(sigma_floor)).collect();
        let floored: Vec<bool> = var.data().iter().map(|&v| v.sqrt() < sigma_floor).collect();
        let mut xhat = Tensor::zeros(&[n, c]);
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n {
            for j in 0..c {
                let h = (x.at2(i, j) - mean.data()[j]) / sigma[j];
                xhat.data_mut()[i * c + j] = h;
                out.data_mut()[i * c + j] = gm.at2(i, j) * h + bt.at2(i, j);
            }
        }
        let xhat = Rc::new(xhat);
        self.tape.push(
            out,
            vec![self.idx, gamma.idx, beta.idx],
            Some(Box::new(move |g, emit| {
                let mut gx = Tensor::zeros(&[n, c]);
                let mut gg = Tensor::zeros(&[n, c]);
                let gb = g.clone();
                for i in 0..n {
                    for j in 0..c {
                        gg.data_mut()[i * c + j] = g.at2(i, j) * xhat.at2(i, j);
                    }
                }
                if stats_from_input {
                    // Statistics are a function of x: standard norm backward
                    // per channel, with the variance path dropped on floored
                    // channels (the floor is flat there).
                    for j in 0..c {
                        let mut mean_h = 0.0;
                        let mut mean_hx = 0.0;
                        for i in 0..n {
                            let h = g.at2(i, j) * gm.at2(i, j);
                            mean_h += h;
                            mean_hx += h * xhat.at2(i, j);
                        }
                        mean_h /= n as f64;
                        mean_hx /= n as f64;
                        for i in 0..n {
                            let h = g.at2(i, j) * gm.at2(i, j);
                            let centered = h - mean_h;
                            gx.data_mut()[i * c + j] = if floored[j] {
                                centered / sigma[j]
                            } else {
                                (centered - xhat.at2(i, j) * mean_hx) / sigma[j]
                            };
                        }
                    }
                } else {
                    for i in 0..n {
                        for j in 0..c {
                            gx.data_mut()[i * c + j] = g.at2(i, j) * gm.at2(i, j) / sigma[j];
                        }
                    }
                }
                emit(0, gx);
                emit(1, gg);
                emit(2, gb);
            })),
        )
    }

    // ---- convolution -----------------------------------------------------------

    /// 2-d convolution over a `[C, H, W]` volume with `[O, C, K, K]` weights,
    /// stride `s`, symmetric zero padding `p`. Implemented as im2col + GEMM.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        let b = bias.value();
        let (cin, h, win) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, cin2, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        assert_eq!(cin, cin2, "conv2d channel mismatch");
        assert_eq!(w.shape()[3], k);
        assert_eq!(b.len(), o);
        let hout = (h + 2 * pad - k) / stride + 1;
        let wout = (win + 2 * pad - k) / stride + 1;
        let patch = cin * k * k;

        let mut cols = Tensor::zeros(&[hout * wout, patch]);
        for oy in 0..hout {
            for ox in 0..wout {
                let row = oy * wout + ox;
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < win as isize {
                                cols.data_mut()[row * patch + c * k * k + ky * k + kx] =
                                    x.data()[c * h * win + iy as usize * win + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let w_mat = w.reshaped(&[o, patch]);
        let out_mat = cols.matmul(&w_mat.transpose()); // [hout*wout, o]
        let mut out = Tensor::zeros(&[o, hout, wout]);
        for r in 0..hout * wout {
            for oc in 0..o {
                out.data_mut()[oc * hout * wout + r] = out_mat.data()[r * o + oc] + b.data()[oc];
            }
        }
        let cols = Rc::new(cols);
        let w_shape = w.shape().to_vec();
        self.tape.push(
            out,
            vec![self.idx, weight.idx, bias.idx],
            Some(Box::new(move |g, emit| {
                let spatial = hout * wout;
                let mut g_mat = Tensor::zeros(&[spatial, o]);
                let mut gb = Tensor::zeros(&[o]);
                for oc in 0..o {
                    for r in 0..spatial {
                        let v = g.data()[oc * spatial + r];
                        g_mat.data_mut()[r * o + oc] = v;
                        gb.data_mut()[oc] += v;
                    }
                }
                // dW = g_mat^T . cols, reshaped to [O, C, K, K].
                let gw = g_mat.transpose().matmul(&cols).reshaped(&w_shape);
                // d(cols) = g_mat . w_mat; scatter back through im2col.
                let w_mat = w.reshaped(&[o, patch]);
                let g_cols = g_mat.matmul(&w_mat); // [spatial, patch]
                let mut gx = Tensor::zeros(&[cin, h, win]);
                for oy in 0..hout {
                    for ox in 0..wout {
                        let row = oy * wout + ox;
                        for c in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < win as isize {
                                        gx.data_mut()
                                            [c * h * win + iy as usize * win + ix as usize] +=
                                            g_cols.data()[row * patch + c * k * k + ky * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                emit(0, gx);
                emit(1, gw);
                emit(2, gb);
            })),
        )
    }

    /// Mean over the spatial dims of a `[C, H, W]` volume, yielding `1 x C`.
    pub fn mean_spatial(self) -> Var<'t> {
        let x = self.value();
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let spatial = h * w;
        let mut out = Tensor::zeros(&[1, c]);
        for ch in 0..c {
            let sum: f64 = x.data()[ch * spatial..(ch + 1) * spatial].iter().sum();
            out.data_mut()[ch] = sum / spatial as f64;
        }
        self.tape.push(
            out,
            vec![self.idx],
            Some(Box::new(move |g, emit| {
                let mut gx = Tensor::zeros(&[c, h, w]);
                for ch in 0..c {
                    let v = g.data()[ch] / spatial as f64;
                    for s in 0..spatial {
                        gx.data_mut()[ch * spatial + s] = v;
                    }
                }
                emit(0, gx);
            })),
        )
    }
}

fn total_key(v: f64) -> u64 {
    super::tensor::total_order_key(v)
}

/// Chamfer distance from a variable `N x 3` matrix to a constant target
/// cloud, as a differentiable scalar. The nearest-neighbor assignments are
/// treated as locally constant in the backward pass.
pub fn chamfer_to_const<'t>(pred: Var<'t>, target: &PointCloud) -> Var<'t> {
    let p = pred.value();
    assert_eq!(p.cols(), 3, "chamfer_to_const expects an N x 3 matrix");
    let n = p.rows();
    let pred_points: Vec<[f64; 3]> = (0..n).map(|i| [p.at2(i, 0), p.at2(i, 1), p.at2(i, 2)]).collect();
    let index_t = SpatialIndex::build(target.points());
    let index_p = SpatialIndex::build(&pred_points);
    let na = n as f64;
    let nb = target.len() as f64;

    let mut value = 0.0;
    let mut grad = Tensor::zeros(&[n, 3]);
    for (i, pt) in pred_points.iter().enumerate() {
        let (j, d) = index_t.nearest(pt);
        value += 0.5 * d / na;
        if d > 0.0 {
            let q = &target.points()[j];
            for axis in 0..3 {
                grad.data_mut()[i * 3 + axis] += 0.5 / na * (pt[axis] - q[axis]) / d;
            }
        }
    }
    for q in target.points() {
        let (i, d) = index_p.nearest(q);
        value += 0.5 * d / nb;
        if d > 0.0 {
            let pt = &pred_points[i];
            for axis in 0..3 {
                grad.data_mut()[i * 3 + axis] += 0.5 / nb * (pt[axis] - q[axis]) / d;
            }
        }
    }
    pred.tape.push(
        Tensor::scalar(value),
        vec![pred.idx],
        Some(Box::new(move |g, emit| {
            emit(0, grad.scale(g.item()));
        })),
    )
}
