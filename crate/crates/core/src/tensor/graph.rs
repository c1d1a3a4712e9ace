use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// One output row of a piecewise-linear inversion: either an atom
/// (`interval == None`, coefficient 0) or a point inside interval `j`
/// (between sorted positions `j - 1` and `j`) at fraction `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanRow {
    pub block: usize,
    pub interval: Option<usize>,
    pub gamma: f64,
}

/// Precomputed inversion of a batch of continuous ECDFs.
///
/// `order[b][s]` is the column (within block `b`) holding sorted position
/// `s`. The coefficients depend differentiably on the normalized weights; the
/// ordering and interval selection are constants of the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationPlan {
    pub width: usize,
    pub order: Vec<Vec<usize>>,
    pub rows: Vec<PlanRow>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSumExp(Var),
    Reduce {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        scale: f64,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Reshape(Var),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Interpolation {
        weights: Var,
        plan: Rc<InterpolationPlan>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of tensor operations. Node order is a topological
/// order: inputs are always inserted before their consumers.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

fn last_axis(t: &Tensor) -> (usize, usize) {
    let len = *t.shape().last().unwrap();
    let outer = if len == 0 { 0 } else { t.len() / len };
    (outer, len)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf (parameter, input or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    /// `[r, k] x [k, c] -> [r, c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let s = ad[i * k + p];
                if s != 0.0 {
                    for (o, bv) in orow.iter_mut().zip(&bd[p * c..(p + 1) * c]) {
                        *o += s * bv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// `[r, k] x [c, k]^T -> [r, c]`, i.e. every row of `a` dotted with every
    /// row of `b`. Weight matrices stored as `[out, in]` are applied this way.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(mismatch("matmul_t", ta, tb));
        }
        let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..c {
                out[i * c + j] = dot(arow, &bd[j * k..(j + 1) * k]);
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.push(Op::MatMulT(a, b), value))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Adds `b` (length = row length of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let w = ta.row_len();
        if tb.len() != w {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(w.max(1)) {
            for (x, y) in row.iter_mut().zip(tb.data()) {
                *x += y;
            }
        }
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::AddRow(a, b), v))
    }

    /// Multiplies row `i` of `a` by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.len() != ta.rows() {
            return Err(mismatch("scale_rows", ta, ts));
        }
        let w = ta.row_len();
        let mut data = ta.data().to_vec();
        if w > 0 {
            for (row, k) in data.chunks_mut(w).zip(ts.data()) {
                row.iter_mut().for_each(|x| *x *= k);
            }
        }
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::ScaleRows(a, s), v))
    }

    /// `scale * a + shift` elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| scale * x + shift).collect();
        let v = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(Op::Affine(a, scale), v)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x * x);
        self.push(Op::Square(a), v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.map(a, |x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (outer, len) = last_axis(t);
        if len == 0 {
            return Err(Error::EmptyAxis { op: "softmax" });
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(len).take(outer) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let v = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(Op::Softmax(a), v))
    }

    /// Log-sum-exp over the last axis; the axis is removed (rank-1 inputs give
    /// shape `[1]`).
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (outer, len) = last_axis(t);
        if len == 0 {
            return Err(Error::EmptyAxis { op: "log_sum_exp" });
        }
        let data: Vec<f64> = t.data().chunks(len).take(outer).map(lse).collect();
        let mut shape = t.shape()[..t.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::LogSumExp(a), v))
    }

    fn reduce(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let t = self.value(a);
        let op = if mean { "mean_axis" } else { "sum_axis" };
        if axis >= t.rank() {
            return Err(Error::invalid(
                op,
                format!("axis {axis} out of range for {:?}", t.shape()),
            ));
        }
        let len = t.shape()[axis];
        if len == 0 {
            return Err(Error::EmptyAxis { op });
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let inner: usize = t.shape()[axis + 1..].iter().product();
        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let base = (o * len + l) * inner;
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|d| *d *= scale);
        }
        let mut shape: Vec<usize> = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            Op::Reduce {
                x: a,
                outer,
                len,
                inner,
                scale,
            },
            v,
        ))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    /// Mean of every element, as a scalar.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[n])?;
        self.mean_axis(flat, 0)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[n])?;
        self.sum_axis(flat, 0)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(p) => self.value(*p),
            None => return Err(Error::invalid("concat", "no inputs")),
        };
        if axis >= first.rank() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for {:?}", first.shape()),
            ));
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        let mut chunks = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            let compatible = t.rank() == first.rank()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", first, t));
            }
            shape[axis] += t.shape()[axis];
            chunks.push(if outer == 0 { 0 } else { t.len() / outer });
        }
        let total: usize = chunks.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(*p).data()[o * w..(o + 1) * w]);
            }
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                chunks,
            },
            v,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Row gather along the leading axis. Gradients flow to the gathered
    /// values; the index list itself is a constant.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let w = t.row_len();
        let rows = t.rows();
        let mut out = Vec::with_capacity(index.len() * w);
        for &i in index {
            if i >= rows {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("row {i} out of range for {:?}", t.shape()),
                ));
            }
            out.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            Op::GatherRows {
                x: a,
                index: index.to_vec(),
            },
            v,
        ))
    }

    /// Interpolation coefficients of a batch of continuous-ECDF inversions.
    /// `weights` is `[blocks, width]` of normalized weights in original
    /// column order; the result has one coefficient per plan row.
    pub fn interpolation(&mut self, weights: Var, plan: Rc<InterpolationPlan>) -> Result<Var> {
        let t = self.value(weights);
        let expected = [plan.order.len(), plan.width];
        if t.rank() != 2 || t.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "interpolation",
                lhs: t.shape().to_vec(),
                rhs: expected.to_vec(),
            });
        }
        if plan.rows.iter().any(|r| {
            r.block >= expected[0] || r.interval.is_some_and(|j| j == 0 || j >= plan.width)
        }) {
            return Err(Error::invalid("interpolation", "plan row out of range"));
        }
        let data = plan
            .rows
            .iter()
            .map(|r| if r.interval.is_some() { r.gamma } else { 0.0 })
            .collect();
        let v = Tensor::vector(data);
        Ok(self.push(Op::Interpolation { weights, plan }, v))
    }

    /// Reverse-mode sweep from a scalar `seed`.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        let seed_value = self.value(seed);
        if seed_value.len() != 1 {
            return Err(Error::NonScalarSeed(seed_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(vec![1.0]);
        for id in (0..=seed.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for p in 0..k {
                            ga[i * k + p] +=
                                dot(&g[i * c..(i + 1) * c], &tb.data()[p * c..(p + 1) * c]);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..r {
                        for p in 0..k {
                            let s = ta.data()[i * k + p];
                            axpy(s, &g[i * c..(i + 1) * c], &mut gb[p * c..(p + 1) * c]);
                        }
                    }
                });
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, k, c) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        let gi = &mut ga[i * k..(i + 1) * k];
                        for j in 0..c {
                            axpy(g[i * c + j], &tb.data()[j * k..(j + 1) * k], gi);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..r {
                        let ai = &ta.data()[i * k..(i + 1) * k];
                        for j in 0..c {
                            axpy(g[i * c + j], ai, &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| axpy(1.0, g, ga));
                acc(*b, &mut |gb| axpy(1.0, g, gb));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| axpy(1.0, g, ga));
                acc(*b, &mut |gb| axpy(-1.0, g, gb));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *d += gi * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, gi), x) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *d += gi * x;
                    }
                });
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |ga| axpy(1.0, g, ga));
                let w = self.value(*b).len();
                acc(*b, &mut |gb| {
                    if w > 0 {
                        for row in g.chunks(w) {
                            axpy(1.0, row, gb);
                        }
                    }
                });
            }
            Op::ScaleRows(a, s) => {
                let (ta, ts) = (self.value(*a), self.value(*s));
                let w = ta.row_len();
                if w == 0 {
                    return;
                }
                acc(*a, &mut |ga| {
                    for ((dst, grow), k) in ga.chunks_mut(w).zip(g.chunks(w)).zip(ts.data()) {
                        axpy(*k, grow, dst);
                    }
                });
                acc(*s, &mut |gs| {
                    for ((d, grow), arow) in gs.iter_mut().zip(g.chunks(w)).zip(ta.data().chunks(w))
                    {
                        *d += dot(grow, arow);
                    }
                });
            }
            Op::Affine(a, scale) => acc(*a, &mut |ga| axpy(*scale, g, ga)),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((d, gi), y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gi * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((d, gi), y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gi * (1.0 - y * y);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |ga| {
                for ((d, gi), y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gi * y;
                }
            }),
            Op::Square(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((d, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        *d += 2.0 * gi * xi;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((d, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        if *xi >= *lo && *xi <= *hi {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let len = *node.value.shape().last().unwrap();
                acc(*a, &mut |ga| {
                    for ((d, grow), y) in ga.chunks_mut(len).zip(g.chunks(len)).zip(out.chunks(len))
                    {
                        let inner = dot(grow, y);
                        for ((di, gi), yi) in d.iter_mut().zip(grow).zip(y) {
                            *di += yi * (gi - inner);
                        }
                    }
                });
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let len = *x.shape().last().unwrap();
                acc(*a, &mut |ga| {
                    for ((d, xrow), (gi, l)) in ga
                        .chunks_mut(len)
                        .zip(x.data().chunks(len))
                        .zip(g.iter().zip(out))
                    {
                        for (di, xi) in d.iter_mut().zip(xrow) {
                            *di += gi * (xi - l).exp();
                        }
                    }
                });
            }
            Op::Reduce {
                x,
                outer,
                len,
                inner,
                scale,
            } => acc(*x, &mut |gx| {
                for o in 0..*outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..*len {
                        let base = (o * len + l) * inner;
                        axpy(*scale, src, &mut gx[base..base + inner]);
                    }
                }
            }),
            Op::Concat {
                parts,
                outer,
                chunks,
            } => {
                let total: usize = chunks.iter().sum();
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(chunks) {
                    acc(*p, &mut |gp| {
                        for o in 0..*outer {
                            axpy(
                                1.0,
                                &g[o * total + offset..o * total + offset + w],
                                &mut gp[o * w..(o + 1) * w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::Reshape(a) => acc(*a, &mut |ga| axpy(1.0, g, ga)),
            Op::GatherRows { x, index } => {
                let w = self.value(*x).row_len();
                acc(*x, &mut |gx| {
                    for (r, &i) in index.iter().enumerate() {
                        axpy(1.0, &g[r * w..(r + 1) * w], &mut gx[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::Interpolation { weights, plan } => {
                let pi = self.value(*weights).data();
                let width = plan.width;
                // Per block: `prefix[j]` accumulates contributions applying to
                // every sorted position strictly below `j - 1`.
                let mut sorted_grad = vec![0.0; plan.order.len() * width];
                let mut prefix = vec![0.0; plan.order.len() * (width + 1)];
                for (row, gi) in plan.rows.iter().zip(g) {
                    let Some(j) = row.interval else { continue };
                    let order = &plan.order[row.block];
                    let base = row.block * width;
                    let lo = pi[base + order[j - 1]];
                    let hi = pi[base + order[j]];
                    let lambda = 0.5 * (lo + hi);
                    if lambda <= 0.0 {
                        continue;
                    }
                    let gamma = row.gamma;
                    prefix[row.block * (width + 1) + j - 1] += -gi / lambda;
                    sorted_grad[base + j - 1] += -gi * (1.0 + gamma) / (2.0 * lambda);
                    sorted_grad[base + j] += -gi * gamma / (2.0 * lambda);
                }
                acc(*weights, &mut |gw| {
                    for (b, order) in plan.order.iter().enumerate() {
                        let base = b * width;
                        let mut running = 0.0;
                        for s in (0..width).rev() {
                            running += prefix[b * (width + 1) + s + 1];
                            gw[base + order[s]] += sorted_grad[base + s] + running;
                        }
                    }
                });
            }
        }
    }
}

/// Gradients of one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; nodes the seed does not depend on get
    /// zeros.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Borrowed gradient, `None` when the node was not reached.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Numerically stable `ln(sum(exp(xs)))`.
pub(crate) fn lse(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
