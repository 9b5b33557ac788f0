//! Reverse-mode autodiff over a flat tape of tensor ops.
//!
//! A `Tape` is built per forward pass: leaves are constants (`constant`) or
//! named parameters (`param`), interior nodes record the op and its parents,
//! and `backward` walks the tape once in reverse, accumulating gradients for
//! every parameter leaf. Only the ops this crate actually uses exist here.

use std::collections::HashMap;

use super::params::ParamStore;
use crate::tensor::{matmul_acc_mk_nk, matmul_acc_tk_kn, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Constant,
    Param,
    Add(NodeId, NodeId),
    /// `x [.., d] + b [d]`, broadcasting over leading axes.
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Elementwise product with a constant tensor (masks, detached factors).
    MulConst(NodeId, Tensor),
    /// `[.., m, k] x [k, n]` with a shared rank-2 right factor.
    Matmul(NodeId, NodeId),
    /// `[b, m, k] x [b, k, n]`.
    BatchMatmul(NodeId, NodeId),
    TransposeLast2(NodeId),
    /// `[a, b, c] -> [b, a, c]`.
    Swap01(NodeId),
    Reshape(NodeId),
    Concat(usize, Vec<NodeId>),
    Slice {
        src: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    /// Rotary embedding on the last axis, one fractional index per position
    /// along the second-to-last axis.
    Rope {
        src: NodeId,
        indices: Vec<f64>,
        base: f64,
    },
    Silu(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Abs(NodeId),
    SoftmaxLast(NodeId),
    /// Normalize over the last axis, then scale/shift by `gamma`/`beta`.
    LayerNorm(NodeId, NodeId, NodeId),
    /// Row gather from a rank-2 table.
    Gather(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward pass worth of computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// Leaf bound to `store[name]`; gradients accumulate under that name.
    /// Repeated calls for the same name share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> NodeId {
        if let Some(&id) = self.param_leaves.get(name) {
            return id;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .clone();
        let id = self.push(value, Op::Param, true);
        self.param_leaves.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).add(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!(bv.rank(), 1, "bias must be rank 1");
        let d = bv.shape()[0];
        assert_eq!(
            *xv.shape().last().unwrap(),
            d,
            "bias width {} does not divide input {:?}",
            d,
            xv.shape()
        );
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(d) {
            for (o, &b) in chunk.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data);
        let ng = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddBias(x, bias), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).sub(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).mul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn mul_const(&mut self, a: NodeId, c: Tensor) -> NodeId {
        let value = self.value(a).mul(&c);
        let ng = self.needs(a);
        self.push(value, Op::MulConst(a, c), ng)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Matmul(a, b), ng)
    }

    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).batch_matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::BatchMatmul(a, b), ng)
    }

    pub fn transpose_last2(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose_last2();
        let ng = self.needs(a);
        self.push(value, Op::TransposeLast2(a), ng)
    }

    pub fn swap01(&mut self, a: NodeId) -> NodeId {
        let value = swap01(self.value(a));
        let ng = self.needs(a);
        self.push(value, Op::Swap01(a), ng)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let value = self.value(a).clone().reshape(shape);
        let ng = self.needs(a);
        self.push(value, Op::Reshape(a), ng)
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = concat(axis, &values);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::Concat(axis, parts.to_vec()), ng)
    }

    pub fn slice(&mut self, src: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let value = slice(self.value(src), axis, start, len);
        let ng = self.needs(src);
        self.push(value, Op::Slice { src, axis, start, len }, ng)
    }

    pub fn rope(&mut self, src: NodeId, indices: &[f64], base: f64) -> NodeId {
        let value = super::rope::rope_apply(self.value(src), indices, base);
        let ng = self.needs(src);
        self.push(
            value,
            Op::Rope { src, indices: indices.to_vec(), base },
            ng,
        )
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.needs(a);
        self.push(value, Op::Silu(a), ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(softplus);
        let ng = self.needs(a);
        self.push(value, Op::Softplus(a), ng)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::abs);
        let ng = self.needs(a);
        self.push(value, Op::Abs(a), ng)
    }

    pub fn softmax_last(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let d = *av.shape().last().expect("softmax needs at least one axis");
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data);
        let ng = self.needs(a);
        self.push(value, Op::SoftmaxLast(a), ng)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let d = *xv.shape().last().unwrap();
        assert_eq!(gv.shape(), &[d], "layer_norm gamma width");
        assert_eq!(bv.shape(), &[d], "layer_norm beta width");
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            let (mean, rstd) = row_moments(row);
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - mean) * rstd * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(value, Op::LayerNorm(x, gamma, beta), ng)
    }

    pub fn gather(&mut self, table: NodeId, rows: &[usize]) -> NodeId {
        let tv = self.value(table);
        assert_eq!(tv.rank(), 2, "gather table must be rank 2");
        let (n, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            assert!(r < n, "gather row {r} out of range {n}");
            data.extend_from_slice(&tv.data()[r * d..(r + 1) * d]);
        }
        let value = Tensor::new(vec![rows.len(), d], data);
        let ng = self.needs(table);
        self.push(value, Op::Gather(table, rows.to_vec()), ng)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let value = Tensor::scalar(self.value(a).sum() / n);
        let ng = self.needs(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Inner product with a constant: `sum(c .* x)`.
    pub fn dot_const(&mut self, x: NodeId, c: Tensor) -> NodeId {
        let prod = self.mul_const(x, c);
        self.sum(prod)
    }

    /// Mean squared difference against a constant target.
    pub fn mse_const(&mut self, x: NodeId, target: &Tensor) -> NodeId {
        let t = self.constant(target.clone());
        let diff = self.sub(x, t);
        let sq = self.mul(diff, diff);
        self.mean(sq)
    }

    /// Reverse sweep from a scalar `root`; returns accumulated gradients for
    /// every parameter leaf that influences it. Parameters of `ref_params`
    /// that never appeared on the tape get zero gradients so the result is
    /// always store-shaped.
    pub fn backward(&self, root: NodeId, ref_params: &ParamStore) -> ParamStore {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Param) {
                grads[i] = Some(g); // keep leaf gradients for collection
            }
        }

        let mut out = ref_params.zeros_like();
        for (name, &id) in &self.param_leaves {
            if let Some(g) = grads[id.0].take() {
                out.set(name, g).expect("param leaf shape drift");
            }
        }
        out
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let accum = |grads: &mut Vec<Option<Tensor>>, id: NodeId, delta: Tensor| {
            if !self.needs(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_scaled(&delta, 1.0),
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[i].op {
            Op::Constant | Op::Param => {}
            Op::Add(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.clone());
            }
            Op::AddBias(x, bias) => {
                accum(grads, *x, g.clone());
                if self.needs(*bias) {
                    let d = self.value(*bias).shape()[0];
                    let mut bg = vec![0.0; d];
                    for chunk in g.data().chunks(d) {
                        for (acc, &v) in bg.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                    accum(grads, *bias, Tensor::from_vec(bg));
                }
            }
            Op::Sub(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accum(grads, *a, g.mul(self.value(*b)));
                }
                if self.needs(*b) {
                    accum(grads, *b, g.mul(self.value(*a)));
                }
            }
            Op::Scale(a, c) => accum(grads, *a, g.scale(*c)),
            Op::MulConst(a, c) => accum(grads, *a, g.mul(c)),
            Op::Matmul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let k = *av.shape().last().unwrap();
                let n = bv.shape()[1];
                let m = av.len() / k;
                if self.needs(*a) {
                    // dA = dC * B^T
                    let mut da = vec![0.0; m * k];
                    matmul_acc_mk_nk(g.data(), bv.data(), &mut da, m, n, k);
                    accum(grads, *a, Tensor::new(av.shape().to_vec(), da));
                }
                if self.needs(*b) {
                    // dB = A^T * dC
                    let mut db = vec![0.0; k * n];
                    matmul_acc_tk_kn(av.data(), g.data(), &mut db, k, m, n);
                    accum(grads, *b, Tensor::new(bv.shape().to_vec(), db));
                }
            }
            Op::BatchMatmul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (bsz, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = bv.shape()[2];
                if self.needs(*a) {
                    let mut da = vec![0.0; bsz * m * k];
                    for s in 0..bsz {
                        matmul_acc_mk_nk(
                            &g.data()[s * m * n..(s + 1) * m * n],
                            &bv.data()[s * k * n..(s + 1) * k * n],
                            &mut da[s * m * k..(s + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    accum(grads, *a, Tensor::new(av.shape().to_vec(), da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; bsz * k * n];
                    for s in 0..bsz {
                        matmul_acc_tk_kn(
                            &av.data()[s * m * k..(s + 1) * m * k],
                            &g.data()[s * m * n..(s + 1) * m * n],
                            &mut db[s * k * n..(s + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    accum(grads, *b, Tensor::new(bv.shape().to_vec(), db));
                }
            }
            Op::TransposeLast2(a) => accum(grads, *a, g.transpose_last2()),
            Op::Swap01(a) => accum(grads, *a, swap01(g)),
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                accum(grads, *a, g.clone().reshape(&shape));
            }
            Op::Concat(axis, parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    if self.needs(p) {
                        accum(grads, p, slice(g, *axis, start, len));
                    }
                    start += len;
                }
            }
            Op::Slice { src, axis, start, len } => {
                let mut dsrc = Tensor::zeros(self.value(*src).shape());
                scatter_slice(&mut dsrc, g, *axis, *start, *len);
                accum(grads, *src, dsrc);
            }
            Op::Rope { src, indices, base } => {
                // Rotation is orthogonal: pull the gradient back by -angle.
                let neg: Vec<f64> = indices.iter().map(|&x| -x).collect();
                accum(grads, *src, super::rope::rope_apply(g, &neg, *base));
            }
            Op::Silu(a) => {
                let da = self.value(*a).map(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                accum(grads, *a, g.mul(&da));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let da = y.map(|t| 1.0 - t * t);
                accum(grads, *a, g.mul(&da));
            }
            Op::Softplus(a) => {
                let da = self.value(*a).map(sigmoid);
                accum(grads, *a, g.mul(&da));
            }
            Op::Abs(a) => {
                let da = self.value(*a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                accum(grads, *a, g.mul(&da));
            }
            Op::SoftmaxLast(a) => {
                let y = &self.nodes[i].value;
                let d = *y.shape().last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for ((dxr, yr), gr) in dx
                    .chunks_mut(d)
                    .zip(y.data().chunks(d))
                    .zip(g.data().chunks(d))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accum(grads, *a, Tensor::new(y.shape().to_vec(), dx));
            }
            Op::LayerNorm(x, gamma, beta) => {
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let d = *xv.shape().last().unwrap();
                let rows = xv.len() / d;
                let mut dx = vec![0.0; xv.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let xr = &xv.data()[r * d..(r + 1) * d];
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let (mean, rstd) = row_moments(xr);
                    // xhat and the two row means the gradient needs.
                    let mut m_gg = 0.0; // mean(gamma .* g)
                    let mut m_ggx = 0.0; // mean(gamma .* g .* xhat)
                    for j in 0..d {
                        let xh = (xr[j] - mean) * rstd;
                        let gg = gv.data()[j] * gr[j];
                        m_gg += gg;
                        m_ggx += gg * xh;
                        dgamma[j] += gr[j] * xh;
                        dbeta[j] += gr[j];
                    }
                    m_gg /= d as f64;
                    m_ggx /= d as f64;
                    let dxr = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        let xh = (xr[j] - mean) * rstd;
                        let gg = gv.data()[j] * gr[j];
                        dxr[j] = (gg - m_gg - xh * m_ggx) * rstd;
                    }
                }
                accum(grads, *x, Tensor::new(xv.shape().to_vec(), dx));
                accum(grads, *gamma, Tensor::from_vec(dgamma));
                accum(grads, *beta, Tensor::from_vec(dbeta));
            }
            Op::Gather(table, rows) => {
                if self.needs(*table) {
                    let tv = self.value(*table);
                    let d = tv.shape()[1];
                    let mut dt = Tensor::zeros(tv.shape());
                    for (k, &r) in rows.iter().enumerate() {
                        let src = &g.data()[k * d..(k + 1) * d];
                        let dst = &mut dt.data_mut()[r * d..(r + 1) * d];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    accum(grads, *table, dt);
                }
            }
            Op::Sum(a) => {
                let go = g.item();
                accum(grads, *a, Tensor::full(self.value(*a).shape(), go));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let go = g.item() / n;
                accum(grads, *a, Tensor::full(self.value(*a).shape(), go));
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

fn swap01(t: &Tensor) -> Tensor {
    assert_eq!(t.rank(), 3, "swap01 needs rank 3");
    let (a, b, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = vec![0.0; t.len()];
    for i in 0..a {
        for j in 0..b {
            let src = &t.data()[(i * b + j) * c..(i * b + j + 1) * c];
            let dst = &mut out[(j * a + i) * c..(j * a + i + 1) * c];
            dst.copy_from_slice(src);
        }
    }
    Tensor::new(vec![b, a, c], out)
}

/// (elements before `axis`, axis length, elements after `axis`)
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn concat(axis: usize, parts: &[&Tensor]) -> Tensor {
    let first = parts[0];
    for p in parts {
        assert_eq!(p.rank(), first.rank(), "concat rank mismatch");
        for (ax, (a, b)) in p.shape().iter().zip(first.shape()).enumerate() {
            assert!(ax == axis || a == b, "concat shape mismatch at axis {ax}");
        }
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis];
            let base = o * len * inner;
            out.extend_from_slice(&p.data()[base..base + len * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    Tensor::new(shape, out)
}

fn slice(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, alen, inner) = axis_split(t.shape(), axis);
    assert!(start + len <= alen, "slice {start}+{len} out of axis {alen}");
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * alen + start) * inner;
        out.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, out)
}

fn scatter_slice(dst: &mut Tensor, src: &Tensor, axis: usize, start: usize, len: usize) {
    let (outer, alen, inner) = axis_split(dst.shape(), axis);
    for o in 0..outer {
        let dbase = (o * alen + start) * inner;
        let sbase = o * len * inner;
        let d = &mut dst.data_mut()[dbase..dbase + len * inner];
        let s = &src.data()[sbase..sbase + len * inner];
        for (a, &b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}
