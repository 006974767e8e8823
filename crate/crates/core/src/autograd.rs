//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] is an append-only list of nodes. Every op pushes its output
//! value together with whatever it needs for the backward pass, and hands
//! back a [`Var`] (the node id). Because inputs must already exist when an op
//! is recorded, node order is a topological order and [`Tape::backward`] is
//! a single reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_into, matmul_tn_into, SparseMatrix, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    SpMM(Arc<SparseMatrix>, Var),
    Binary(Elementwise, Var, Var),
    Unary(Activation, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<Tensor>),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    MaxOverRows(Var, Vec<usize>),
    MaskedMeanRows(Var, Arc<Vec<bool>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dim_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{what}: shapes {a:?} and {b:?} are incompatible"))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last [`backward`](Tape::backward) loss with respect to
    /// `v`; zeros when `v` was not reached.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Product with a constant sparse matrix.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, d: Var) -> Result<Var> {
        let out = s.mul_dense(self.value(d))?;
        let rg = self.rg(d);
        Ok(self.push(out, Op::SpMM(Arc::clone(s), d), rg))
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err(&format!("{kind:?}"), va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| match kind {
                Elementwise::Add => x + y,
                Elementwise::Sub => x - y,
                Elementwise::Mul => x * y,
            })
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, a, b)
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        let out = match kind {
            Activation::Relu => self.value(a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Activation::Sigmoid => self.value(a).map(|x| 1.0 / (1.0 + (-x).exp())),
        };
        let rg = self.rg(a);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(Activation::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(Activation::Sigmoid, a)
    }

    /// Adds a `1 × n` row to every row of an `m × n` tensor.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(dim_err("add_row_bias", va.shape(), vb.shape()));
        }
        let n = va.cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(vec![va.rows(), n], data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRowBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Arc<Tensor>) -> Result<Var> {
        let va = self.value(a);
        if va.shape() != c.shape() {
            return Err(dim_err("mul_const", va.shape(), c.shape()));
        }
        let data = va.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_forward(self.value(a), None);
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Row softmax restricted to columns whose `valid` flag is set; masked
    /// columns get exactly zero weight.
    pub fn masked_softmax_rows(&mut self, a: Var, valid: Arc<Vec<bool>>) -> Result<Var> {
        let va = self.value(a);
        if valid.len() != va.cols() {
            return Err(Error::Dimension(format!(
                "softmax mask of length {} for {:?}",
                valid.len(),
                va.shape()
            )));
        }
        if !valid.iter().any(|&v| v) {
            return Err(Error::Contract("softmax over a fully masked row".into()));
        }
        let out = softmax_forward(va, Some(&valid));
        let rg = self.rg(a);
        Ok(self.push(out, Op::SoftmaxRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.numel() == 0 {
            return Err(Error::Domain("sum of an empty tensor".into()));
        }
        let out = Tensor::scalar(va.data().iter().sum());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.numel() == 0 {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(va.data().iter().sum::<f64>() / va.numel() as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mean(a), rg))
    }

    /// Columnwise maximum over rows; ties resolve to the lowest row.
    pub fn max_over_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        if r == 0 || c == 0 {
            return Err(Error::Domain("max over rows of an empty tensor".into()));
        }
        let mut arg = vec![0usize; c];
        let mut best = va.row(0).to_vec();
        for i in 1..r {
            for (j, &x) in va.row(i).iter().enumerate() {
                if x > best[j] {
                    best[j] = x;
                    arg[j] = i;
                }
            }
        }
        let out = Tensor::new(vec![1, c], best)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MaxOverRows(a, arg), rg))
    }

    /// Mean over the rows whose `valid` flag is set.
    pub fn masked_mean_rows(&mut self, a: Var, valid: Arc<Vec<bool>>) -> Result<Var> {
        let va = self.value(a);
        if valid.len() != va.rows() {
            return Err(Error::Dimension(format!(
                "row mask of length {} for {:?}",
                valid.len(),
                va.shape()
            )));
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::Contract("mean pooling over a fully masked input".into()));
        }
        let c = va.cols();
        let mut out = vec![0.0; c];
        for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
            for (o, &x) in out.iter_mut().zip(va.row(i)) {
                *o += x;
            }
        }
        let inv = 1.0 / count as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let out = Tensor::new(vec![1, c], out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MaskedMeanRows(a, valid), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_cols of an empty list".into()))?;
        let m = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(dim_err("concat_cols", self.shape(*first), self.shape(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![m, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_rows of an empty list".into()))?;
        let n = self.value(*first).cols();
        for &p in parts {
            if self.value(p).cols() != n {
                return Err(dim_err("concat_rows", self.shape(*first), self.shape(p)));
            }
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let out = Tensor::new(vec![rows, n], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let c = va.cols();
        if start + len > c || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_cols [{start}, {}) out of range for {:?}",
                start + len,
                va.shape()
            )));
        }
        let mut data = Vec::with_capacity(va.rows() * len);
        for i in 0..va.rows() {
            data.extend_from_slice(&va.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![va.rows(), len], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Picks rows by index; `None` yields a zero row.
    pub fn gather_rows(&mut self, a: Var, idx: &[Option<usize>]) -> Result<Var> {
        let va = self.value(a);
        let c = va.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            match i {
                Some(i) if i < va.rows() => data.extend_from_slice(va.row(i)),
                Some(i) => {
                    return Err(Error::Structural(format!(
                        "gather row {i} out of range for {:?}",
                        va.shape()
                    )))
                }
                None => data.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Per-row layer normalization with learnable `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.cols();
        if self.value(gain).shape() != [1, n] || self.value(bias).shape() != [1, n] {
            return Err(dim_err("layer_norm", vx.shape(), self.shape(gain)));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(vx.numel());
        let mut inv_std = Vec::with_capacity(vx.rows());
        let mut out = Vec::with_capacity(vx.numel());
        for i in 0..vx.rows() {
            let row = vx.row(i);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..n {
                let h = (row[j] - mu) * inv;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let out = Tensor::new(vec![vx.rows(), n], out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Clears gradients left by a previous backward pass.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Back-propagates from a scalar `loss`. Gradients accumulate additively
    /// across fan-out; read them with [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.zero_grads();
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[id].grad.take() else {
                continue;
            };
            self.propagate(id, &g);
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => node.grad = Some(delta.to_vec()),
        }
    }

    fn accumulate_with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let n = node.value.numel();
        let g = node.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        // Ops are taken out temporarily so the node vector can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                if self.rg(a) {
                    let bv = self.value(b).data().to_vec();
                    self.accumulate_with(a, |ga| matmul_nt_into(g, &bv, ga, m, n, k));
                }
                if self.rg(b) {
                    let av = self.value(a).data().to_vec();
                    self.accumulate_with(b, |gb| matmul_tn_into(&av, g, gb, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                // output is c×r
                self.accumulate_with(*a, |ga| {
                    for i in 0..c {
                        for j in 0..r {
                            ga[j * c + i] += g[i * r + j];
                        }
                    }
                });
            }
            Op::SpMM(s, d) => {
                let n = self.value(*d).cols();
                self.accumulate_with(*d, |gd| s.accumulate(g, gd, n, true));
            }
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                match kind {
                    Elementwise::Add => {
                        self.accumulate(a, g);
                        self.accumulate(b, g);
                    }
                    Elementwise::Sub => {
                        self.accumulate(a, g);
                        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                        self.accumulate(b, &neg);
                    }
                    Elementwise::Mul => {
                        if self.rg(a) {
                            let d: Vec<f64> =
                                g.iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
                            self.accumulate(a, &d);
                        }
                        if self.rg(b) {
                            let d: Vec<f64> =
                                g.iter().zip(self.value(a).data()).map(|(x, y)| x * y).collect();
                            self.accumulate(b, &d);
                        }
                    }
                }
            }
            Op::Unary(kind, a) => {
                let out = self.nodes[id].value.data();
                let d: Vec<f64> = match kind {
                    Activation::Relu => g
                        .iter()
                        .zip(out)
                        .map(|(x, &y)| if y > 0.0 { *x } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => {
                        g.iter().zip(out).map(|(x, &y)| x * y * (1.0 - y)).collect()
                    }
                };
                self.accumulate(*a, &d);
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(*a, g);
                let n = self.value(*bias).cols();
                self.accumulate_with(*bias, |gb| {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                });
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|x| x * c).collect();
                self.accumulate(*a, &d);
            }
            Op::MulConst(a, c) => {
                let d: Vec<f64> = g.iter().zip(c.data()).map(|(x, y)| x * y).collect();
                self.accumulate(*a, &d);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let n = y.cols();
                let mut d = vec![0.0; y.numel()];
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        d[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(*a, &d);
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate_with(*a, |ga| ga.iter_mut().for_each(|x| *x += g0));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                let g0 = g[0] / n;
                self.accumulate_with(*a, |ga| ga.iter_mut().for_each(|x| *x += g0));
            }
            Op::MaxOverRows(a, arg) => {
                let c = self.value(*a).cols();
                self.accumulate_with(*a, |ga| {
                    for (j, &i) in arg.iter().enumerate() {
                        ga[i * c + j] += g[j];
                    }
                });
            }
            Op::MaskedMeanRows(a, valid) => {
                let c = self.value(*a).cols();
                let inv = 1.0 / valid.iter().filter(|&&v| v).count() as f64;
                self.accumulate_with(*a, |ga| {
                    for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
                        for j in 0..c {
                            ga[i * c + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[id].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate_with(p, |gp| {
                        for (i, row) in gp.chunks_mut(w).enumerate() {
                            let src = &g[i * total + offset..i * total + offset + w];
                            row.iter_mut().zip(src).for_each(|(o, x)| *o += x);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.accumulate(p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                let c = self.value(*a).cols();
                let w = self.nodes[id].value.cols();
                self.accumulate_with(*a, |ga| {
                    for (i, src) in g.chunks(w).enumerate() {
                        let dst = &mut ga[i * c + start..i * c + start + w];
                        dst.iter_mut().zip(src).for_each(|(o, x)| *o += x);
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let c = self.value(*a).cols();
                self.accumulate_with(*a, |ga| {
                    for (r, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            let dst = &mut ga[i * c..(i + 1) * c];
                            dst.iter_mut()
                                .zip(&g[r * c..(r + 1) * c])
                                .for_each(|(o, x)| *o += x);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = self.value(*x).cols();
                let rows = inv_std.len();
                if self.rg(*x) {
                    let gv = self.value(*gain).data().to_vec();
                    let mut dx = vec![0.0; rows * n];
                    for i in 0..rows {
                        let gr = &g[i * n..(i + 1) * n];
                        let hr = &xhat[i * n..(i + 1) * n];
                        let dh: Vec<f64> = gr.iter().zip(&gv).map(|(a, b)| a * b).collect();
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let k = inv_std[i] / n as f64;
                        for j in 0..n {
                            dx[i * n + j] = k * (n as f64 * dh[j] - s1 - hr[j] * s2);
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                self.accumulate_with(*gain, |gg| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate_with(*bias, |gb| {
                    for gr in g.chunks(n) {
                        gb.iter_mut().zip(gr).for_each(|(o, x)| *o += x);
                    }
                });
            }
        }
        self.nodes[id].op = op;
    }
}

fn softmax_forward(t: &Tensor, valid: Option<&[bool]>) -> Tensor {
    let n = t.cols();
    let keep = |j: usize| valid.is_none_or(|v| v[j]);
    let mut out = vec![0.0; t.numel()];
    for i in 0..t.rows() {
        let row = t.row(i);
        let max = (0..n)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in (0..n).filter(|&j| keep(j)) {
            let e = (row[j] - max).exp();
            out[i * n + j] = e;
            z += e;
        }
        for j in 0..n {
            out[i * n + j] /= z;
        }
    }
    Tensor::new(vec![t.rows(), n], out).expect("softmax shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let m = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let out = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(out), tape.value(m));
    }

    #[test]
    fn row_times_column() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
        let b = tape.constant(Tensor::from_rows(&[&[3.0], &[4.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Dimension(_)));
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn spmm_examples() {
        let mut tape = Tape::new();
        let empty = Arc::new(SparseMatrix::new(2, 2, vec![]).unwrap());
        let d = tape.constant(Tensor::from_rows(&[&[1.0], &[2.0]]));
        let z = tape.spmm(&empty, d).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0, 0.0]);
        let s = Arc::new(SparseMatrix::new(2, 2, vec![(0, 1, 1.0)]).unwrap());
        let out = tape.spmm(&s, d).unwrap();
        assert_eq!(tape.value(out).data(), &[2.0, 0.0]);
        let bad = tape.constant(Tensor::zeros(&[3, 1]));
        assert!(matches!(tape.spmm(&s, bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(&[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let a = tape.constant(Tensor::row_vector(&[1.0, 2.0]));
        let b = tape.constant(Tensor::row_vector(&[3.0, 4.0]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
        let z = tape.constant(Tensor::scalar(0.0));
        let sg = tape.sigmoid(z);
        assert_eq!(tape.value(sg).item(), 0.5);
        assert!(matches!(tape.add(a, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[0.0, 0.0], &[1000.0, 1000.0]]));
        let s = tape.softmax_rows(x);
        assert_eq!(tape.value(s).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0]]));
        let s = tape
            .masked_softmax_rows(x, Arc::new(vec![true, false, true]))
            .unwrap();
        let v = tape.value(s).data();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert!(tape
            .masked_softmax_rows(x, Arc::new(vec![false; 3]))
            .is_err());
    }

    #[test]
    fn reduce_examples() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[&[1.0, 5.0], &[3.0, 2.0]]));
        let m = tape.max_over_rows(x).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
        let v = tape.constant(Tensor::row_vector(&[2.0, 4.0]));
        let mean = tape.mean(v).unwrap();
        assert_eq!(tape.value(mean).item(), 3.0);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[1.0; 4]);
        let empty = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(matches!(tape.mean(empty), Err(Error::Domain(_))));
        assert!(matches!(tape.max_over_rows(empty), Err(Error::Domain(_))));
    }

    #[test]
    fn max_ties_route_to_first_row() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[&[2.0], &[2.0]]));
        let m = tape.max_over_rows(x).unwrap();
        let s = tape.sum(m).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[1.0, 0.0]);
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[1.0]]));
        let b = tape.constant(Tensor::from_rows(&[&[2.0]]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0]);
        let single = tape.concat_cols(&[a]).unwrap();
        assert_eq!(tape.value(single), tape.value(a));
        let tall = tape.constant(Tensor::zeros(&[2, 1]));
        assert!(matches!(tape.concat_cols(&[a, tall]), Err(Error::Dimension(_))));
    }

    #[test]
    fn concat_slices_back_to_parts() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(Tensor::from_rows(&[&[5.0], &[6.0]]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        let sa = tape.slice_cols(c, 0, 2).unwrap();
        let sb = tape.slice_cols(c, 2, 1).unwrap();
        assert_eq!(tape.value(sa), tape.value(a));
        assert_eq!(tape.value(sb), tape.value(b));
    }

    #[test]
    fn backward_square() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).item(), 6.0);
    }

    #[test]
    fn backward_fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(&[1.0, -2.0, 3.0]));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_params_have_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::row_vector(&[1.0, 1.0]));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gather_rows_with_cold_start() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let g = tape.gather_rows(x, &[Some(1), None, Some(1)]).unwrap();
        assert_eq!(tape.value(g).data(), &[3.0, 4.0, 0.0, 0.0, 3.0, 4.0]);
        let s = tape.sum(g).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 0.0, 2.0, 2.0]);
        assert!(tape.gather_rows(x, &[Some(2)]).is_err());
    }
}
