use std::sync::Arc;

use super::tensor::{matmul_acc, matmul_nt, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Bin, Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    Cos(Var),
    Sin(Var),
    ClampMin(Var, f64),
    ReluShifted(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Arc<[usize]>),
    FoldBlocks(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape over dense 2-D tensors.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; `backward` walks it once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::Shape {
            op,
            lhs: a,
            rhs: b,
        }),
    }
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let r = if shape[0] == 1 { 0 } else { r };
    let c = if shape[1] == 1 { 0 } else { c };
    r * shape[1] + c
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
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (inputs, fixed matrices,
    /// truncated recurrent state).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn binary(&mut self, kind: Bin, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Bin::Add => "add",
            Bin::Sub => "sub",
            Bin::Mul => "mul",
            Bin::Div => "div",
        };
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(name, sa, sb)?;
        let f = |x: f64, y: f64| match kind {
            Bin::Add => x + y,
            Bin::Sub => x - y,
            Bin::Mul => x * y,
            Bin::Div => x / y,
        };
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data: Vec<f64> = if sa == sb {
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut d = Vec::with_capacity(out[0] * out[1]);
            for r in 0..out[0] {
                for c in 0..out[1] {
                    d.push(f(av.data()[bidx(sa, r, c)], bv.data()[bidx(sb, r, c)]));
                }
            }
            d
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(out[0], out[1], data).expect("shape"),
            Op::Binary(kind, a, b),
            rg,
        ))
    }

    /// Element-wise sum; either side may broadcast a size-1 dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Bin::Div, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut out = Tensor::zeros(sa[0], sb[1]);
        matmul_acc(&self.nodes[a.0].value, &self.nodes[b.0].value, out.data_mut());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    /// Square root; the derivative at exactly 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    /// `max(c, x)`; subgradient 0 on the boundary.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::ClampMin(a, c), |x| x.max(c))
    }

    /// `max(0, x + b)` with `b` broadcast against `x`.
    pub fn relu_shifted(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        let out = broadcast_shape("relu_shifted", sx, sb)?;
        if out != sx {
            return Err(Error::Shape {
                op: "relu_shifted",
                lhs: sx,
                rhs: sb,
            });
        }
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let t = Tensor::from_fn(sx[0], sx[1], |r, c| {
            (xv.get(r, c) + bv.data()[bidx(sb, r, c)]).max(0.0)
        });
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, Op::ReluShifted(x, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.transpose();
        let rg = self.rg(a);
        self.push(t, Op::Transpose(a), rg)
    }

    /// Concatenates along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
        let rows = self.shape(*first)[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(*first),
                    rhs: s,
                });
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(rows, cols, data).expect("shape"),
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s[1] {
            return Err(Error::Shape {
                op: "slice",
                lhs: s,
                rhs: [start, end],
            });
        }
        let v = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(s[0] * (end - start));
        for r in 0..s[0] {
            data.extend_from_slice(&v.row_slice(r)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(s[0], end - start, data).expect("shape"),
            Op::Slice(a, start),
            rg,
        ))
    }

    /// Column gather `out[:, j] = a[:, index[j]]`; the backward pass
    /// scatter-adds, so `index` need not be a bijection.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let s = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= s[1]) {
            return Err(Error::Shape {
                op: "gather",
                lhs: s,
                rhs: [1, bad],
            });
        }
        let v = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(s[0] * index.len());
        for r in 0..s[0] {
            let row = v.row_slice(r);
            data.extend(index.iter().map(|&i| row[i]));
        }
        let rg = self.rg(a);
        let cols = index.len();
        Ok(self.push(
            Tensor::new(s[0], cols, data).expect("shape"),
            Op::Gather(a, index),
            rg,
        ))
    }

    /// Sums the `k` column blocks of `[rows, k * width]` into `[rows, width]`.
    pub fn fold_blocks(&mut self, a: Var, width: usize) -> Result<Var> {
        let s = self.shape(a);
        if width == 0 || s[1] % width != 0 {
            return Err(Error::Shape {
                op: "fold_blocks",
                lhs: s,
                rhs: [1, width],
            });
        }
        let v = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(s[0], width);
        for r in 0..s[0] {
            for (c, x) in v.row_slice(r).iter().enumerate() {
                out.data_mut()[r * width + c % width] += x;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::FoldBlocks(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over rows (axis 0): `[r, c] -> [1, c]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(1, v.cols());
        for r in 0..v.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(v.row_slice(r)) {
                *o += x;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SumRows(a), rg)
    }

    /// Sum over columns (axis 1): `[r, c] -> [r, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let data = (0..v.rows()).map(|r| v.row_slice(r).iter().sum()).collect();
        let t = Tensor::new(v.rows(), 1, data).expect("shape");
        let rg = self.rg(a);
        self.push(t, Op::SumCols(a), rg)
    }

    /// Summed `-ln softmax(logits[r])[targets[r]]` over rows with `mask[r]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let s = self.shape(logits);
        if targets.len() != s[0] || mask.len() != s[0] {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: s,
                rhs: [targets.len(), mask.len()],
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: s,
                rhs: [1, t],
            });
        }
        let v = &self.nodes[logits.0].value;
        let mut probs = Tensor::zeros(s[0], s[1]);
        let mut loss = 0.0;
        for r in 0..s[0] {
            let row = v.row_slice(r);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let z: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
            let lz = z.ln() + mx;
            for (c, &x) in row.iter().enumerate() {
                probs.set(r, c, (x - lz).exp());
            }
            if mask[r] {
                loss += lz - row[targets[r]];
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn softmax_probs(&self, ce: Var) -> Option<&Tensor> {
        match &self.nodes[ce.0].op {
            Op::SoftmaxCe { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn acc(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&mut self, v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let shape = self.nodes[v.0].value.shape();
        let slot = self.grads[v.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
        f(slot);
    }

    /// Populates gradients of the scalar `root` with respect to every node
    /// that depends on a differentiable leaf. Earlier gradients are cleared.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let s = self.shape(root);
        if s != [1, 1] {
            return Err(Error::Shape {
                op: "backward (root must be scalar)",
                lhs: s,
                rhs: [1, 1],
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(root) {
            return Ok(());
        }
        self.grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor) {
        // Temporarily move the op out so `self` can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => self.backprop_binary(*kind, *a, *b, g),
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    // dA = G · Bᵀ
                    let da = matmul_nt(&g, &self.nodes[b.0].value);
                    self.acc(a, da);
                }
                if self.rg(b) {
                    // dB += Aᵀ · G
                    let shape = self.shape(b);
                    let Tape { nodes, grads } = self;
                    let db = grads[b.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
                    matmul_tn_acc(&nodes[a.0].value, &g, db);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(*a, g.map(|x| x * c));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let d = zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv));
                self.acc(*a, d);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let d = zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv));
                self.acc(*a, d);
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[i].value;
                let d = zip_map(g, y, |gv, yv| if yv > 0.0 { gv * 0.5 / yv } else { 0.0 });
                self.acc(*a, d);
            }
            Op::Cos(a) => {
                let x = &self.nodes[a.0].value;
                let d = zip_map(g, x, |gv, xv| -gv * xv.sin());
                self.acc(*a, d);
            }
            Op::Sin(a) => {
                let x = &self.nodes[a.0].value;
                let d = zip_map(g, x, |gv, xv| gv * xv.cos());
                self.acc(*a, d);
            }
            Op::ClampMin(a, c) => {
                let c = *c;
                let x = &self.nodes[a.0].value;
                let d = zip_map(g, x, |gv, xv| if xv > c { gv } else { 0.0 });
                self.acc(*a, d);
            }
            Op::ReluShifted(x, b) => {
                let (x, b) = (*x, *b);
                let y = &self.nodes[i].value;
                let d = zip_map(g, y, |gv, yv| if yv > 0.0 { gv } else { 0.0 });
                let sb = self.shape(b);
                if self.rg(b) {
                    let mut db = Tensor::zeros(sb[0], sb[1]);
                    let [rows, cols] = d.shape();
                    for r in 0..rows {
                        for c in 0..cols {
                            db.data_mut()[bidx(sb, r, c)] += d.get(r, c);
                        }
                    }
                    self.acc(b, db);
                }
                self.acc(x, d);
            }
            Op::Transpose(a) => self.acc(*a, g.transpose()),
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.rg(p) {
                        let rows = g.rows();
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[start..start + w]);
                        }
                        self.acc(p, Tensor::new(rows, w, data).expect("shape"));
                    }
                    start += w;
                }
            }
            Op::Slice(a, start) => {
                let start = *start;
                let w = g.cols();
                self.acc_with(*a, |da| {
                    let cols = da.cols();
                    for r in 0..g.rows() {
                        let dst = &mut da.data_mut()[r * cols + start..r * cols + start + w];
                        for (d, s) in dst.iter_mut().zip(g.row_slice(r)) {
                            *d += s;
                        }
                    }
                });
            }
            Op::Gather(a, index) => {
                self.acc_with(*a, |da| {
                    let cols = da.cols();
                    for r in 0..g.rows() {
                        let grow = g.row_slice(r);
                        let drow = &mut da.data_mut()[r * cols..(r + 1) * cols];
                        for (j, &src) in index.iter().enumerate() {
                            drow[src] += grow[j];
                        }
                    }
                });
            }
            Op::FoldBlocks(a) => {
                let width = g.cols();
                self.acc_with(*a, |da| {
                    let cols = da.cols();
                    for r in 0..g.rows() {
                        let grow = g.row_slice(r);
                        for c in 0..cols {
                            da.data_mut()[r * cols + c] += grow[c % width];
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let s = self.shape(*a);
                self.acc(*a, Tensor::filled(s[0], s[1], g.item()));
            }
            Op::SumRows(a) => {
                let s = self.shape(*a);
                self.acc(*a, Tensor::from_fn(s[0], s[1], |_, c| g.get(0, c)));
            }
            Op::SumCols(a) => {
                let s = self.shape(*a);
                self.acc(*a, Tensor::from_fn(s[0], s[1], |r, _| g.get(r, 0)));
            }
            Op::SoftmaxCe {
                logits,
                targets,
                mask,
                probs,
            } => {
                let gv = g.item();
                let [rows, cols] = probs.shape();
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    if !mask[r] {
                        continue;
                    }
                    for c in 0..cols {
                        let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                        d.set(r, c, gv * (probs.get(r, c) - onehot));
                    }
                }
                self.acc(*logits, d);
            }
        }
        self.nodes[i].op = op;
    }

    fn backprop_binary(&mut self, kind: Bin, a: Var, b: Var, g: &Tensor) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let [rows, cols] = g.shape();
        let (ra, rb) = (self.rg(a), self.rg(b));
        if sa == sb {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            let da = ra.then(|| match kind {
                Bin::Add | Bin::Sub => g.clone(),
                Bin::Mul => zip_map(g, bv, |gv, y| gv * y),
                Bin::Div => zip_map(g, bv, |gv, y| gv / y),
            });
            let db = rb.then(|| match kind {
                Bin::Add => g.clone(),
                Bin::Sub => g.map(|gv| -gv),
                Bin::Mul => zip_map(g, av, |gv, x| gv * x),
                Bin::Div => {
                    let q = zip_map(av, bv, |x, y| x / (y * y));
                    zip_map(g, &q, |gv, q| -gv * q)
                }
            });
            if let Some(da) = da {
                self.acc(a, da);
            }
            if let Some(db) = db {
                self.acc(b, db);
            }
            return;
        }
        let mut da = ra.then(|| Tensor::zeros(sa[0], sa[1]));
        let mut db = rb.then(|| Tensor::zeros(sb[0], sb[1]));
        {
            let av = self.nodes[a.0].value.data();
            let bv = self.nodes[b.0].value.data();
            for r in 0..rows {
                for c in 0..cols {
                    let gv = g.data()[r * cols + c];
                    let (ia, ib) = (bidx(sa, r, c), bidx(sb, r, c));
                    let (x, y) = (av[ia], bv[ib]);
                    let (ga, gb) = match kind {
                        Bin::Add => (gv, gv),
                        Bin::Sub => (gv, -gv),
                        Bin::Mul => (gv * y, gv * x),
                        Bin::Div => (gv / y, -gv * x / (y * y)),
                    };
                    if let Some(da) = da.as_mut() {
                        da.data_mut()[ia] += ga;
                    }
                    if let Some(db) = db.as_mut() {
                        db.data_mut()[ib] += gb;
                    }
                }
            }
        }
        if let Some(da) = da {
            self.acc(a, da);
        }
        if let Some(db) = db {
            self.acc(b, db);
        }
    }
}

fn zip_map(g: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.rows(), g.cols(), data).expect("same shape")
}
