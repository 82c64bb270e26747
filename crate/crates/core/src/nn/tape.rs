//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`] walks
//! the nodes in reverse and accumulates gradients into the inputs that require
//! them. Ops work on batches: matrices are `[rows, cols]`, images are
//! `[batch, channels, height, width]`, and "axis 1" ops (concat, slice) treat any
//! tensor as `[outer, axis1, inner]`.

use std::sync::Arc;

use super::kernels::{gemm, sigmoid, ConvGeom, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Clamp applied to probabilities inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Dense { x: Var, w: Var, b: Option<Var> },
    Propagate { adj: Arc<Vec<f64>>, n: usize, x: Var },
    Conv2d { x: Var, k: Var, b: Option<Var>, geom: ConvGeom },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    ScaleMask { x: Var, mask: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, group: usize, heads: usize, probs: Vec<f64> },
    WeightedPool { x: Var, w: Var, group: usize },
    Sum(Var),
    BceMean { p: Var, labels: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `x·W + b` with `x: [n, d]`, `W: [d, m]`, `b: [m]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, d) = self.value(x).matrix_dims("dense")?;
        let (d2, m) = self.value(w).matrix_dims("dense")?;
        if d != d2 {
            return Err(Error::shape("dense", format!("x is {n}×{d} but W is {d2}×{m}")));
        }
        let mut out = vec![0.0; n * m];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != m {
                return Err(Error::shape("dense", format!("bias has {} entries, need {m}", bias.len())));
            }
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm(
            n,
            d,
            m,
            1.0,
            MatRef::rows(self.value(x).data(), d),
            MatRef::rows(self.value(w).data(), m),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
            m,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Dense { x, w, b }, rg))
    }

    /// Block-diagonal propagation `Y_b = Â·X_b` for every block of `n` rows of `x`.
    pub fn propagate(&mut self, adj: Arc<Vec<f64>>, n: usize, x: Var) -> Result<Var> {
        let (rows, d) = self.value(x).matrix_dims("propagate")?;
        if adj.len() != n * n || n == 0 || rows % n != 0 {
            return Err(Error::shape("propagate", format!("{rows} rows do not form blocks of a {n}-vertex graph")));
        }
        let mut out = vec![0.0; rows * d];
        let xs = self.value(x).data();
        for blk in 0..rows / n {
            let off = blk * n * d;
            gemm(
                n,
                n,
                d,
                1.0,
                MatRef::rows(&adj, n),
                MatRef::rows(&xs[off..off + n * d], d),
                0.0,
                &mut out[off..off + n * d],
                d,
            );
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[rows, d], out)?, Op::Propagate { adj, n, x }, rg))
    }

    /// Same-padded stride-1 cross-correlation: `x: [B, C_in, H, W]`,
    /// `k: [C_out, C_in, kh, kw]`, `b: [C_out]` → `[B, C_out, H, W]`.
    pub fn conv2d_same(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        let (bsz, c_in, height, width) = match self.shape(x) {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(Error::shape("conv2d", format!("input must be rank 4, got {s:?}"))),
        };
        let (c_out, kc, kh, kw) = match self.shape(k) {
            [o, c, h, w] => (*o, *c, *h, *w),
            s => return Err(Error::shape("conv2d", format!("kernel must be rank 4, got {s:?}"))),
        };
        if kc != c_in {
            return Err(Error::shape("conv2d", format!("kernel expects {kc} channels, input has {c_in}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel {kh}×{kw} must have odd sides")));
        }
        if let Some(b) = b {
            if self.value(b).len() != c_out {
                return Err(Error::shape("conv2d", "bias length differs from output channels"));
            }
        }
        let geom = ConvGeom { c_in, height, width, kh, kw };
        let plane = geom.plane();
        let plen = geom.patch_len();
        let mut out = vec![0.0; bsz * c_out * plane];
        let mut cols = vec![0.0; plen * plane];
        let xs = self.value(x).data();
        let ks = self.value(k).data();
        for s in 0..bsz {
            geom.im2col(&xs[s * c_in * plane..(s + 1) * c_in * plane], &mut cols);
            let dst = &mut out[s * c_out * plane..(s + 1) * c_out * plane];
            if let Some(b) = b {
                for (o, chunk) in dst.chunks_exact_mut(plane).enumerate() {
                    chunk.fill(self.nodes[b.0].value.data()[o]);
                }
            }
            gemm(
                c_out,
                plen,
                plane,
                1.0,
                MatRef::rows(ks, plen),
                MatRef::rows(&cols, plane),
                if b.is_some() { 1.0 } else { 0.0 },
                dst,
                plane,
            );
        }
        let rg = self.rg(x) || self.rg(k) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[bsz, c_out, height, width], out)?;
        Ok(self.push(value, Op::Conv2d { x, k, b, geom }, rg))
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape(), src.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| 1.0 - v, Op::OneMinus(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", self.value(a), self.value(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Concatenation along axis 1 (the feature / channel axis).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let (outer, _, inner) = self.value(first).axis1_split();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            let (o, m, i) = t.axis1_split();
            if o != outer || i != inner || t.rank() != self.value(first).rank() {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", self.shape(first), t.shape())));
            }
            total += m;
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let (_, m, _) = self.value(p).axis1_split();
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * m * inner..(o + 1) * m * inner]);
            }
        }
        let mut shape = self.shape(first).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("concat", "inputs need at least two axes"));
        }
        shape[1] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// `len` entries of axis 1 starting at `start`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (outer, mid, inner) = self.value(x).axis1_split();
        if self.value(x).rank() < 2 || start + len > mid || len == 0 {
            return Err(Error::shape("slice", format!("[{start}, {}) of axis of size {mid}", start + len)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = self.shape(x).to_vec();
        shape[1] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Slice { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Multiplies by a fixed per-element factor (used for dropout masks).
    pub fn scale_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::shape("mask", "mask length differs from input"));
        }
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ScaleMask { x, mask }, rg))
    }

    /// Scaled dot-product attention within groups of `group` consecutive rows,
    /// split into `heads` heads along the columns. `q, k, v: [B·group, D]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, group: usize, heads: usize) -> Result<Var> {
        let (rows, dm) = self.value(q).matrix_dims("attention")?;
        same_shape("attention", self.value(q), self.value(k))?;
        same_shape("attention", self.value(q), self.value(v))?;
        if heads == 0 || dm % heads != 0 {
            return Err(Error::shape("attention", format!("width {dm} not divisible by {heads} heads")));
        }
        if group == 0 || rows % group != 0 {
            return Err(Error::shape("attention", format!("{rows} rows not divisible into groups of {group}")));
        }
        let dk = dm / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let n = group;
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; (rows / n) * heads * n * n];
        let mut out = vec![0.0; rows * dm];
        for g in 0..rows / n {
            for h in 0..heads {
                let off = g * n * dm + h * dk;
                let p = &mut probs[(g * heads + h) * n * n..(g * heads + h + 1) * n * n];
                gemm(n, dk, n, scale, MatRef::rows(&qs[off..], dm), MatRef::transposed(&ks[off..], dm), 0.0, p, n);
                for row in p.chunks_exact_mut(n) {
                    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let mut sum = 0.0;
                    for e in row.iter_mut() {
                        *e = (*e - max).exp();
                        sum += *e;
                    }
                    for e in row.iter_mut() {
                        *e /= sum;
                    }
                }
                gemm(n, n, dk, 1.0, MatRef::rows(p, n), MatRef::rows(&vs[off..], dm), 0.0, &mut out[off..], dm);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let value = Tensor::new(&[rows, dm], out)?;
        Ok(self.push(value, Op::Attention { q, k, v, group, heads, probs }, rg))
    }

    /// Attention weights of the most recent forward pass through `att`, laid
    /// out `[group_index][head][n][n]`.
    pub fn attention_probs(&self, att: Var) -> Option<&[f64]> {
        match &self.nodes[att.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `y_b = (1/n)·Σ_v w_v·x_{b·n+v}` for `x: [B·n, d]`, `w: [n]`.
    pub fn weighted_pool(&mut self, x: Var, w: Var, group: usize) -> Result<Var> {
        let (rows, d) = self.value(x).matrix_dims("pool")?;
        if group == 0 || rows % group != 0 || self.value(w).len() != group {
            return Err(Error::shape("pool", format!("{rows} rows, {} weights", self.value(w).len())));
        }
        let (xs, ws) = (self.value(x).data(), self.value(w).data());
        let inv = 1.0 / group as f64;
        let mut out = vec![0.0; rows / group * d];
        for b in 0..rows / group {
            let dst = &mut out[b * d..(b + 1) * d];
            for v in 0..group {
                let wv = ws[v] * inv;
                let src = &xs[(b * group + v) * d..(b * group + v + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += wv * s;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        let value = Tensor::new(&[rows / group, d], out)?;
        Ok(self.push(value, Op::WeightedPool { x, w, group }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean binary cross-entropy of probabilities `p` (any shape) against 0/1 labels.
    pub fn bce_mean(&mut self, p: Var, labels: &[f64]) -> Result<Var> {
        let ps = self.value(p).data();
        if ps.len() != labels.len() || labels.is_empty() {
            return Err(Error::shape("bce", format!("{} scores, {} labels", ps.len(), labels.len())));
        }
        let loss = ps.iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum::<f64>() / labels.len() as f64;
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(loss), Op::BceMean { p, labels: labels.to_vec() }, rg))
    }

    /// Reverse pass from the scalar `target`; replaces any earlier gradients.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).len() != 1 {
            return Err(Error::shape("backward", "target must be a scalar"));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[target.0] = Some(vec![1.0]);
        for i in (0..=target.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Detach the op so input values can be borrowed alongside the gradient buffers.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[i].value.data();
        match &op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (n, d) = (nodes[x.0].value.dim(0), nodes[x.0].value.dim(1));
                let m = nodes[w.0].value.dim(1);
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    gemm(n, m, d, 1.0, MatRef::rows(g, m), MatRef::transposed(val(*w), m), 1.0, dx, d);
                }
                if let Some(dw) = grad_buf(nodes, grads, *w) {
                    gemm(d, n, m, 1.0, MatRef::transposed(val(*x), d), MatRef::rows(g, m), 1.0, dw, m);
                }
                if let Some(db) = b.and_then(|b| grad_buf(nodes, grads, b)) {
                    for row in g.chunks_exact(m) {
                        accumulate(db, row);
                    }
                }
            }
            Op::Propagate { adj, n, x } => {
                let (rows, d) = (nodes[x.0].value.dim(0), nodes[x.0].value.dim(1));
                let n = *n;
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for blk in 0..rows / n {
                        let off = blk * n * d;
                        gemm(
                            n,
                            n,
                            d,
                            1.0,
                            MatRef::transposed(adj, n),
                            MatRef::rows(&g[off..off + n * d], d),
                            1.0,
                            &mut dx[off..off + n * d],
                            d,
                        );
                    }
                }
            }
            Op::Conv2d { x, k, b, geom } => {
                let bsz = nodes[x.0].value.dim(0);
                let c_out = nodes[k.0].value.dim(0);
                let (plane, plen, c_in) = (geom.plane(), geom.patch_len(), geom.c_in);
                let mut cols = vec![0.0; plen * plane];
                for s in 0..bsz {
                    let gs = &g[s * c_out * plane..(s + 1) * c_out * plane];
                    if let Some(dk) = grad_buf(nodes, grads, *k) {
                        geom.im2col(&val(*x)[s * c_in * plane..(s + 1) * c_in * plane], &mut cols);
                        gemm(
                            c_out,
                            plane,
                            plen,
                            1.0,
                            MatRef::rows(gs, plane),
                            MatRef::transposed(&cols, plane),
                            1.0,
                            dk,
                            plen,
                        );
                    }
                    if nodes[x.0].requires_grad {
                        gemm(
                            plen,
                            c_out,
                            plane,
                            1.0,
                            MatRef::transposed(val(*k), plen),
                            MatRef::rows(gs, plane),
                            0.0,
                            &mut cols,
                            plane,
                        );
                        let dx = grad_buf(nodes, grads, *x).expect("requires grad");
                        geom.col2im(&cols, &mut dx[s * c_in * plane..(s + 1) * c_in * plane]);
                    }
                }
                if let Some(db) = b.and_then(|b| grad_buf(nodes, grads, b)) {
                    for s in 0..bsz {
                        for (o, dbo) in db.iter_mut().enumerate() {
                            let base = (s * c_out + o) * plane;
                            *dbo += g[base..base + plane].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(val(*x)) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::OneMinus(x) => {
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d -= gi;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(dv) = grad_buf(nodes, grads, v) {
                        accumulate(dv, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = grad_buf(nodes, grads, *a) {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(val(*b)) {
                        *d += gi * y;
                    }
                }
                if let Some(db) = grad_buf(nodes, grads, *b) {
                    for ((d, gi), y) in db.iter_mut().zip(g).zip(val(*a)) {
                        *d += gi * y;
                    }
                }
            }
            Op::Concat(parts) => {
                let (outer, total, inner) = nodes[i].value.axis1_split();
                let mut offset = 0;
                for &p in parts {
                    let (_, m, _) = nodes[p.0].value.axis1_split();
                    if let Some(dp) = grad_buf(nodes, grads, p) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + m) * inner];
                            accumulate(&mut dp[o * m * inner..(o + 1) * m * inner], src);
                        }
                    }
                    offset += m;
                }
            }
            Op::Slice { x, start } => {
                let (outer, len, inner) = nodes[i].value.axis1_split();
                let (_, mid, _) = nodes[x.0].value.axis1_split();
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for o in 0..outer {
                        let base = (o * mid + start) * inner;
                        accumulate(&mut dx[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    accumulate(dx, g);
                }
            }
            Op::ScaleMask { x, mask } => {
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for ((d, s), m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += s * m;
                    }
                }
            }
            Op::Attention { q, k, v, group, heads, probs } => {
                let n = *group;
                let (rows, dm) = (nodes[q.0].value.dim(0), nodes[q.0].value.dim(1));
                let dk = dm / heads;
                let scale = 1.0 / (dk as f64).sqrt();
                let (qs, ks, vs) = (val(*q), val(*k), val(*v));
                let mut dq = vec![0.0; rows * dm];
                let mut dkk = vec![0.0; rows * dm];
                let mut dv = vec![0.0; rows * dm];
                let mut dp = vec![0.0; n * n];
                for grp in 0..rows / n {
                    for h in 0..*heads {
                        let off = grp * n * dm + h * dk;
                        let p = &probs[(grp * heads + h) * n * n..(grp * heads + h + 1) * n * n];
                        // dV = Pᵀ·dO
                        gemm(
                            n,
                            n,
                            dk,
                            1.0,
                            MatRef::transposed(p, n),
                            MatRef::rows(&g[off..], dm),
                            1.0,
                            &mut dv[off..],
                            dm,
                        );
                        // dP = dO·Vᵀ
                        gemm(
                            n,
                            dk,
                            n,
                            1.0,
                            MatRef::rows(&g[off..], dm),
                            MatRef::transposed(&vs[off..], dm),
                            0.0,
                            &mut dp,
                            n,
                        );
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                        for (prow, drow) in p.chunks_exact(n).zip(dp.chunks_exact_mut(n)) {
                            let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                            for (d, pv) in drow.iter_mut().zip(prow) {
                                *d = pv * (*d - dot);
                            }
                        }
                        gemm(
                            n,
                            n,
                            dk,
                            scale,
                            MatRef::rows(&dp, n),
                            MatRef::rows(&ks[off..], dm),
                            1.0,
                            &mut dq[off..],
                            dm,
                        );
                        gemm(
                            n,
                            n,
                            dk,
                            scale,
                            MatRef::transposed(&dp, n),
                            MatRef::rows(&qs[off..], dm),
                            1.0,
                            &mut dkk[off..],
                            dm,
                        );
                    }
                }
                for (var, delta) in [(*q, dq), (*k, dkk), (*v, dv)] {
                    if let Some(buf) = grad_buf(nodes, grads, var) {
                        accumulate(buf, &delta);
                    }
                }
            }
            Op::WeightedPool { x, w, group } => {
                let group = *group;
                let (rows, d) = (nodes[x.0].value.dim(0), nodes[x.0].value.dim(1));
                let inv = 1.0 / group as f64;
                let (xs, ws) = (val(*x), val(*w));
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for b in 0..rows / group {
                        let gb = &g[b * d..(b + 1) * d];
                        for v in 0..group {
                            let wv = ws[v] * inv;
                            let row = &mut dx[(b * group + v) * d..(b * group + v + 1) * d];
                            for (r, s) in row.iter_mut().zip(gb) {
                                *r += wv * s;
                            }
                        }
                    }
                }
                if let Some(dw) = grad_buf(nodes, grads, *w) {
                    for b in 0..rows / group {
                        let gb = &g[b * d..(b + 1) * d];
                        for (v, dwv) in dw.iter_mut().enumerate() {
                            let row = &xs[(b * group + v) * d..(b * group + v + 1) * d];
                            *dwv += inv * row.iter().zip(gb).map(|(a, c)| a * c).sum::<f64>();
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = grad_buf(nodes, grads, *x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::BceMean { p, labels } => {
                let scale = g[0] / labels.len() as f64;
                if let Some(dp) = grad_buf(nodes, grads, *p) {
                    for ((d, &pi), &y) in dp.iter_mut().zip(val(*p)).zip(labels) {
                        *d += scale * bce_grad(pi, y);
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}

fn grad_buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Binary cross-entropy of one prediction, with the probability clamped to `[ε, 1 − ε]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

fn bce_grad(p: f64, y: f64) -> f64 {
    if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}
