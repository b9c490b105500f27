//! Tape-based reverse-mode differentiation over batched 2-D tensors.
//!
//! Complex quantities travel as real tensors whose rows hold `[Re | Im]`
//! halves. Gradients with respect to a complex block follow the convention
//! `g = dL/dRe + j dL/dIm`, under which a linear map `z = H x` pulls back as
//! `g_x = H^H g_z`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, C64};

use super::store::{EntryKind, Gradients, ParamId, ParameterStore};
use super::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch normalization uses batch statistics and records running updates.
    Train,
    /// Batch normalization uses frozen running statistics.
    Eval,
}

/// Node handle inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Running-statistic update produced by a train-mode batch-norm node.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    BroadcastRows(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    UnitNorm {
        x: Var,
        inv_norm: Vec<f64>,
    },
    UnitModulus {
        x: Var,
        inv_mod: Tensor,
    },
    CMatVec {
        x: Var,
        mats: Arc<Vec<ComplexMatrix>>,
        adjoint: bool,
    },
    ConjDot {
        b: Var,
        a: Var,
    },
    ConjDot3 {
        b: Var,
        v: Var,
        a: Var,
        conj_v: bool,
    },
    Abs2(Var),
    Mean(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated.
///
/// Parameters are read from the borrowed store without copying; gradients and
/// batch-norm updates are returned for the caller to apply.
pub struct Graph<'a> {
    store: &'a ParameterStore,
    mode: Mode,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate>,
}

fn cget(t: &Tensor, row: usize, k: usize, half: usize) -> C64 {
    let r = t.row(row);
    C64::new(r[k], r[half + k])
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::Dimension { op, lhs, rhs }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParameterStore, mode: Mode) -> Self {
        Self {
            store,
            mode,
            nodes: Vec::new(),
            params: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored tensor. Repeated requests share one node so that
    /// tied uses accumulate into a single gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let needs_grad = self.store.kind(id) == EntryKind::Trainable;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let out = av.matmul(bv)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x + 1 b` for a `1 x n` row `b`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, bb) in out.row_mut(i).iter_mut().zip(bv.as_slice()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b), &[x, b]))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.as_slice().iter().zip(bv.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.shape(parts[0]), self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                out.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Repeats a `1 x n` row `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return Err(shape_err("broadcast_rows", xv.shape(), (1, xv.cols())));
        }
        let out = Tensor::from_fn(rows, xv.cols(), |_, j| xv.get(0, j));
        Ok(self.push(out, Op::BroadcastRows(x), &[x]))
    }

    /// Per-column batch normalization with scale `gamma` and shift `beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, running_mean: ParamId, running_var: ParamId, eps: f64) -> Result<Var> {
        let (gv, bv) = (self.param(gamma), self.param(beta));
        let xv = self.value(x);
        let (n, d) = xv.shape();
        if self.value(gv).shape() != (1, d) || self.value(bv).shape() != (1, d) {
            return Err(shape_err("batch_norm", xv.shape(), self.shape(gv)));
        }
        let batch_stats = self.mode == Mode::Train;
        let (mean, var) = if batch_stats {
            if n < 2 {
                return Err(Error::InvalidArgument("batch statistics need at least two rows".into()));
            }
            let mut mean = vec![0.0; d];
            for i in 0..n {
                for (m, x) in mean.iter_mut().zip(xv.row(i)) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for i in 0..n {
                for ((v, x), m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            (mean, var)
        } else {
            (
                self.store.value(running_mean).as_slice().to_vec(),
                self.store.value(running_var).as_slice().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = Tensor::from_fn(n, d, |i, j| (xv.get(i, j) - mean[j]) * inv_std[j]);
        let (g, b) = (self.value(gv), self.value(bv));
        let out = Tensor::from_fn(n, d, |i, j| g.get(0, j) * xhat.get(i, j) + b.get(0, j));
        if batch_stats {
            let unbiased = n as f64 / (n as f64 - 1.0);
            self.bn_updates.push(BnUpdate {
                mean: running_mean,
                var: running_var,
                batch_mean: mean,
                batch_var: var.iter().map(|v| v * unbiased).collect(),
            });
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma: gv,
                beta: bv,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gv, bv],
        ))
    }

    /// Scales each row, read as `M` complex values, to unit Euclidean norm.
    pub fn unit_norm(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut inv_norm = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let n = xv.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 1e-12) || !n.is_finite() {
                return Err(Error::Degenerate(format!("row {i} has norm {n:e}; cannot normalize")));
            }
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
            inv_norm.push(1.0 / n);
        }
        Ok(self.push(out, Op::UnitNorm { x, inv_norm }, &[x]))
    }

    /// Maps each complex entry `z` of each row to `z / |z|`.
    pub fn unit_modulus(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() % 2 != 0 {
            return Err(shape_err("unit_modulus", xv.shape(), (xv.rows(), xv.cols() + 1)));
        }
        let half = xv.cols() / 2;
        let mut out = xv.clone();
        let mut inv_mod = Tensor::zeros(xv.rows(), half);
        for i in 0..xv.rows() {
            for k in 0..half {
                let (re, im) = (xv.get(i, k), xv.get(i, half + k));
                let r = re.hypot(im);
                if !(r >= 1e-12) || !r.is_finite() {
                    return Err(Error::Degenerate(format!(
                        "entry {k} of row {i} has modulus {r:e}; no phase to keep"
                    )));
                }
                out.set(i, k, re / r);
                out.set(i, half + k, im / r);
                inv_mod.set(i, k, 1.0 / r);
            }
        }
        Ok(self.push(out, Op::UnitModulus { x, inv_mod }, &[x]))
    }

    /// Row-wise complex matrix-vector product with fixed matrices: `mats`
    /// holds one matrix per row, or a single matrix shared by all rows.
    pub fn cmatvec(&mut self, mats: Arc<Vec<ComplexMatrix>>, x: Var, adjoint: bool) -> Result<Var> {
        let xv = self.value(x);
        let rows = xv.rows();
        if mats.is_empty() || (mats.len() != 1 && mats.len() != rows) {
            return Err(Error::InvalidArgument(format!(
                "{} matrices for a batch of {rows}",
                mats.len()
            )));
        }
        let (p, q) = if adjoint {
            (mats[0].cols(), mats[0].rows())
        } else {
            mats[0].shape()
        };
        if xv.cols() != 2 * q {
            return Err(shape_err("cmatvec", (p, q), xv.shape()));
        }
        let mut out = Tensor::zeros(rows, 2 * p);
        for i in 0..rows {
            let h = &mats[if mats.len() == 1 { 0 } else { i }];
            if h.shape() != mats[0].shape() {
                return Err(shape_err("cmatvec", mats[0].shape(), h.shape()));
            }
            let xi = xv.complex_row(i);
            let z = if adjoint { h.adjoint_matvec(&xi)? } else { h.matvec(&xi)? };
            let r = out.row_mut(i);
            for (k, zk) in z.iter().enumerate() {
                r[k] = zk.re;
                r[p + k] = zk.im;
            }
        }
        Ok(self.push(out, Op::CMatVec { x, mats, adjoint }, &[x]))
    }

    /// `b^H a` per row, as a `B x 2` complex column.
    pub fn conj_dot(&mut self, b: Var, a: Var) -> Result<Var> {
        let (bv, av) = (self.value(b), self.value(a));
        if bv.shape() != av.shape() || av.cols() % 2 != 0 {
            return Err(shape_err("conj_dot", bv.shape(), av.shape()));
        }
        let half = av.cols() / 2;
        let mut out = Tensor::zeros(av.rows(), 2);
        for i in 0..av.rows() {
            let s: C64 = (0..half).map(|k| cget(bv, i, k, half).conj() * cget(av, i, k, half)).sum();
            out.set(i, 0, s.re);
            out.set(i, 1, s.im);
        }
        Ok(self.push(out, Op::ConjDot { b, a }, &[b, a]))
    }

    /// `sum_n conj(b_n) phi(v_n) a_n` per row, `phi` the identity or conjugation.
    pub fn conj_dot3(&mut self, b: Var, v: Var, a: Var, conj_v: bool) -> Result<Var> {
        let (bv, vv, av) = (self.value(b), self.value(v), self.value(a));
        if bv.shape() != av.shape() || vv.shape() != av.shape() || av.cols() % 2 != 0 {
            return Err(shape_err("conj_dot3", bv.shape(), vv.shape()));
        }
        let half = av.cols() / 2;
        let mut out = Tensor::zeros(av.rows(), 2);
        for i in 0..av.rows() {
            let s: C64 = (0..half)
                .map(|k| {
                    let vk = cget(vv, i, k, half);
                    let phi = if conj_v { vk.conj() } else { vk };
                    cget(bv, i, k, half).conj() * phi * cget(av, i, k, half)
                })
                .sum();
            out.set(i, 0, s.re);
            out.set(i, 1, s.im);
        }
        Ok(self.push(out, Op::ConjDot3 { b, v, a, conj_v }, &[b, v, a]))
    }

    /// `|z|^2` per row of a `B x 2` complex column.
    pub fn abs2(&mut self, z: Var) -> Result<Var> {
        let zv = self.value(z);
        if zv.cols() != 2 {
            return Err(shape_err("abs2", zv.shape(), (zv.rows(), 2)));
        }
        let out = Tensor::from_fn(zv.rows(), 1, |i, _| zv.get(i, 0).powi(2) + zv.get(i, 1).powi(2));
        Ok(self.push(out, Op::Abs2(z), &[z]))
    }

    /// Mean of every entry, as a `1 x 1` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::row_vector(vec![xv.sum() / xv.len().max(1) as f64]);
        self.push(out, Op::Mean(x), &[x])
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "loss must be a scalar, has shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::row_vector(vec![1.0]));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    out.grads.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    if self.wants(*a) {
                        let (av, bv) = (self.value(*a), self.value(*b));
                        let acc = slot(&mut grads, *a, av.shape());
                        gemm(1.0, &g, false, bv, true, 1.0, acc);
                    }
                    if self.wants(*b) {
                        let (av, bv) = (self.value(*a), self.value(*b));
                        let acc = slot(&mut grads, *b, bv.shape());
                        gemm(1.0, av, true, &g, false, 1.0, acc);
                    }
                }
                Op::AddRow(x, b) => {
                    if self.wants(*b) {
                        let mut gb = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.wants(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    if self.wants(*a) {
                        let t = hadamard(&g, self.value(*b));
                        accumulate(&mut grads, *a, t);
                    }
                    if self.wants(*b) {
                        let t = hadamard(&g, self.value(*a));
                        accumulate(&mut grads, *b, t);
                    }
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.map(|v| v * c)),
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().expect("value");
                    let t = zip_map(&g, y, |gi, yi| gi * yi * (1.0 - yi));
                    accumulate(&mut grads, *x, t);
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().expect("value");
                    let t = zip_map(&g, y, |gi, yi| gi * (1.0 - yi * yi));
                    accumulate(&mut grads, *x, t);
                }
                Op::Relu(x) => {
                    let y = node.value.as_ref().expect("value");
                    let t = zip_map(&g, y, |gi, yi| if yi > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *x, t);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        if self.wants(p) {
                            let t = Tensor::from_fn(r, c, |ii, jj| g.get(ii, off + jj));
                            accumulate(&mut grads, p, t);
                        }
                        off += c;
                    }
                }
                Op::BroadcastRows(x) => {
                    let mut t = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in t.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, t);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, d) = g.shape();
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for r in 0..n {
                        for j in 0..d {
                            dgamma[j] += g.get(r, j) * xhat.get(r, j);
                            dbeta[j] += g.get(r, j);
                        }
                    }
                    if self.wants(*x) {
                        let gv = self.value(*gamma);
                        let dx = if *batch_stats {
                            // dx = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
                            let mut s1 = vec![0.0; d];
                            let mut s2 = vec![0.0; d];
                            for r in 0..n {
                                for j in 0..d {
                                    let dxh = g.get(r, j) * gv.get(0, j);
                                    s1[j] += dxh;
                                    s2[j] += dxh * xhat.get(r, j);
                                }
                            }
                            let nf = n as f64;
                            Tensor::from_fn(n, d, |r, j| {
                                let dxh = g.get(r, j) * gv.get(0, j);
                                inv_std[j] / nf * (nf * dxh - s1[j] - xhat.get(r, j) * s2[j])
                            })
                        } else {
                            Tensor::from_fn(n, d, |r, j| g.get(r, j) * gv.get(0, j) * inv_std[j])
                        };
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.wants(*gamma) {
                        accumulate(&mut grads, *gamma, Tensor::row_vector(dgamma));
                    }
                    if self.wants(*beta) {
                        accumulate(&mut grads, *beta, Tensor::row_vector(dbeta));
                    }
                }
                Op::UnitNorm { x, inv_norm } => {
                    let y = node.value.as_ref().expect("value");
                    let mut dx = g.clone();
                    for r in 0..g.rows() {
                        let yr = y.row(r);
                        let dot: f64 = yr.iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        let s = inv_norm[r];
                        for (o, (&gy, &yy)) in dx.row_mut(r).iter_mut().zip(g.row(r).iter().zip(yr)) {
                            *o = s * (gy - yy * dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::UnitModulus { x, inv_mod } => {
                    let y = node.value.as_ref().expect("value");
                    let half = y.cols() / 2;
                    let mut dx = Tensor::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        for k in 0..half {
                            let (yr, yi) = (y.get(r, k), y.get(r, half + k));
                            let (gr, gi) = (g.get(r, k), g.get(r, half + k));
                            let dot = yr * gr + yi * gi;
                            let s = inv_mod.get(r, k);
                            dx.set(r, k, s * (gr - yr * dot));
                            dx.set(r, half + k, s * (gi - yi * dot));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::CMatVec { x, mats, adjoint } => {
                    let (rows, cols) = self.shape(*x);
                    let q = cols / 2;
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let h = &mats[if mats.len() == 1 { 0 } else { r }];
                        let gz = g.complex_row(r);
                        // z = H x  =>  g_x = H^H g_z;   z = H^H x  =>  g_x = H g_z
                        let gx = if *adjoint { h.matvec(&gz)? } else { h.adjoint_matvec(&gz)? };
                        let row = dx.row_mut(r);
                        for (k, v) in gx.iter().enumerate() {
                            row[k] = v.re;
                            row[q + k] = v.im;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConjDot { b, a } => {
                    let (bv, av) = (self.value(*b), self.value(*a));
                    let (rows, cols) = av.shape();
                    let half = cols / 2;
                    let mut da = Tensor::zeros(rows, cols);
                    let mut db = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let gy = C64::new(g.get(r, 0), g.get(r, 1));
                        for k in 0..half {
                            let (bk, ak) = (cget(bv, r, k, half), cget(av, r, k, half));
                            let ga = gy * bk;
                            let gb = ak * gy.conj();
                            da.set(r, k, ga.re);
                            da.set(r, half + k, ga.im);
                            db.set(r, k, gb.re);
                            db.set(r, half + k, gb.im);
                        }
                    }
                    if self.wants(*a) {
                        accumulate(&mut grads, *a, da);
                    }
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::ConjDot3 { b, v, a, conj_v } => {
                    let (bv, vv, av) = (self.value(*b), self.value(*v), self.value(*a));
                    let (rows, cols) = av.shape();
                    let half = cols / 2;
                    let mut da = Tensor::zeros(rows, cols);
                    let mut db = Tensor::zeros(rows, cols);
                    let mut dv = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let gy = C64::new(g.get(r, 0), g.get(r, 1));
                        for k in 0..half {
                            let (bk, vk, ak) = (cget(bv, r, k, half), cget(vv, r, k, half), cget(av, r, k, half));
                            let phi = if *conj_v { vk.conj() } else { vk };
                            let ga = gy * bk * phi.conj();
                            let gb = phi * ak * gy.conj();
                            let gv = if *conj_v {
                                bk.conj() * ak * gy.conj()
                            } else {
                                gy * bk * ak.conj()
                            };
                            for (t, z) in [(&mut da, ga), (&mut db, gb), (&mut dv, gv)] {
                                t.set(r, k, z.re);
                                t.set(r, half + k, z.im);
                            }
                        }
                    }
                    if self.wants(*a) {
                        accumulate(&mut grads, *a, da);
                    }
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                    if self.wants(*v) {
                        accumulate(&mut grads, *v, dv);
                    }
                }
                Op::Abs2(z) => {
                    let zv = self.value(*z);
                    let t = Tensor::from_fn(zv.rows(), 2, |r, c| 2.0 * zv.get(r, c) * g.get(r, 0));
                    accumulate(&mut grads, *z, t);
                }
                Op::Mean(x) => {
                    let (r, c) = self.shape(*x);
                    let s = g.get(0, 0) / (r * c).max(1) as f64;
                    accumulate(&mut grads, *x, Tensor::filled(r, c, s));
                }
            }
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&t),
        empty => *empty = Some(t),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

impl ParameterStore {
    /// Folds batch statistics into running statistics:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate], momentum: f64) {
        for u in updates {
            for (r, b) in self.value_mut(u.mean).as_mut_slice().iter_mut().zip(&u.batch_mean) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
            for (r, b) in self.value_mut(u.var).as_mut_slice().iter_mut().zip(&u.batch_var) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
    }
}
