//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every forward op appends a node holding its value and enough saved state
//! to run its vector-Jacobian product. `backward` walks the tape in reverse
//! and only visits nodes that depend on a differentiable leaf.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean `rows x cols` attention mask; `false` entries are excluded by an
/// additive negative-infinity logit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask { rows, cols, allowed: vec![true; rows * cols] }
    }

    /// Query `i` may attend to keys `0..=i`.
    pub fn causal(len: usize) -> Self {
        let mut m = Self::full(len, len);
        for i in 0..len {
            for j in (i + 1)..len {
                m.allowed[i * len + j] = false;
            }
        }
        m
    }

    /// Every query may attend to the first `valid_keys` keys only.
    pub fn key_padding(rows: usize, cols: usize, valid_keys: usize) -> Self {
        let mut m = Self::full(rows, cols);
        for i in 0..rows {
            for j in valid_keys.min(cols)..cols {
                m.allowed[i * cols + j] = false;
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        AttentionMask { rows, cols, allowed }
    }

    pub fn and(&self, other: &AttentionMask) -> Result<AttentionMask> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape("mask", "mask extents disagree"));
        }
        let allowed = self.allowed.iter().zip(&other.allowed).map(|(&a, &b)| a && b).collect();
        Ok(AttentionMask { rows: self.rows, cols: self.cols, allowed })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    AddCol { a: Var, col: Var },
    Scale { a: Var, s: T },
    MulConst { a: Var, factor: Tensor<T> },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    SumAll(Var),
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    ConcatRows(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rc(t: &Tensor<impl Real>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node from index `len` on, for reuse of a shared prefix.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.params.retain(|_, v| v.0 < len);
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::AddRow { a, row: b } | Op::AddCol { a, col: b } => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::Scale { a, .. }
            | Op::MulConst { a, .. }
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::SumAll(a)
            | Op::SliceCols { a, .. }
            | Op::SliceRows { a, .. } => self.requires_grad(*a),
            Op::LayerNorm { x, gamma, beta, .. } => {
                self.requires_grad(*x) || self.requires_grad(*gamma) || self.requires_grad(*beta)
            }
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.requires_grad(*v)),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Input whose gradient is reported by [`Gradients::get`].
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let v = self.leaf(store.value(id).clone(), true)?;
        self.params.insert(id, v);
        Ok(v)
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, true)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = rc(self.value(a));
        let (br, bc) = rc(self.value(b));
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: [{m}x{k}] x [{k2}x{n}]"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(ta, tb, m, k, n, T::one(), self.value(a).data(), self.value(b).data(), T::zero(), &mut out);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul { a, b, ta, tb })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |p, q| p + q);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |p, q| p - q);
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |p, q| p * q);
        self.push("mul", v, Op::Mul(a, b))
    }

    /// Adds a `[1 x c]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = rc(self.value(a));
        if self.value(row).len() != c {
            return Err(Error::shape("add_row", format!("row of {} for {c} columns", self.value(row).len())));
        }
        let mut v = self.value(a).clone();
        let bias = self.value(row).data();
        for i in 0..r {
            for (x, &b) in v.row_mut(i).iter_mut().zip(bias) {
                *x += b;
            }
        }
        self.push("add_row", v, Op::AddRow { a, row })
    }

    /// Adds `col[i]` to every entry of row `i` of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, _) = rc(self.value(a));
        if self.value(col).len() != r {
            return Err(Error::shape("add_col", format!("column of {} for {r} rows", self.value(col).len())));
        }
        let mut v = self.value(a).clone();
        for i in 0..r {
            let s = self.value(col).data()[i];
            v.row_mut(i).iter_mut().for_each(|x| *x += s);
        }
        self.push("add_col", v, Op::AddCol { a, col })
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push("scale", v, Op::Scale { a, s })
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, factor: Tensor<T>) -> Result<Var> {
        if self.value(a).shape() != factor.shape() {
            return Err(Error::shape("mul_const", format!("{:?} vs {:?}", self.value(a).shape(), factor.shape())));
        }
        let data = self.value(a).data().iter().zip(factor.data()).map(|(&x, &f)| x * f).collect();
        let v = Tensor::new(factor.shape().to_vec(), data)?;
        self.push("mul_const", v, Op::MulConst { a, factor })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    /// Row-wise softmax, optionally masked.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = rc(x);
        if let Some(m) = mask {
            if (m.rows(), m.cols()) != (r, c) {
                return Err(Error::shape("softmax", format!("mask {}x{} for logits {r}x{c}", m.rows(), m.cols())));
            }
        }
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let allowed = |j: usize| mask.is_none_or(|m| m.is_allowed(i, j));
            softmax_row(x.row(i), out.row_mut(i), allowed);
        }
        self.push("softmax", out, Op::Softmax(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = rc(x);
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let row = x.row(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for (o, &v) in out.row_mut(i).iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.push("log_softmax", out, Op::LogSoftmax(a))
    }

    /// Per-row layer normalisation with affine `gamma`, `beta` of length `cols`.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = rc(self.value(x));
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("layer_norm", "affine parameters must match feature width"));
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(c).expect("usize");
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = Tensor::zeros(&[r, c]);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        for i in 0..r {
            let row = self.value(x).row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + eps).sqrt();
            rstd[i] = s;
            let o = out.row_mut(i);
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                o[j] = h * g[j] + b[j];
            }
        }
        self.push("layer_norm", out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = rc(self.value(a));
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {c}")));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        self.push("slice_cols", Tensor::matrix(r, len, data)?, Op::SliceCols { a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map(|&p| self.value(p).rows()).ok_or_else(|| Error::shape("concat_cols", "nothing to concatenate"))?;
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let c: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push("concat_cols", Tensor::matrix(r, c, data)?, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, _) = rc(self.value(a));
        if start + len > r {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {r}")));
        }
        let v = self.value(a).slice_rows(start, len);
        self.push("slice_rows", v, Op::SliceRows { a, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map(|&p| self.value(p).cols()).ok_or_else(|| Error::shape("concat_rows", "nothing to concatenate"))?;
        if parts.iter().any(|&p| self.value(p).cols() != c) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        let mut r = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            r += self.value(p).rows();
        }
        self.push("concat_rows", Tensor::matrix(r, c, data)?, Op::ConcatRows(parts.to_vec()))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", "loss must hold exactly one value"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.vjp(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn vjp(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ta, tb) = (*ta, *tb);
                let (m, n) = rc(g);
                let av = self.value(*a);
                let bv = self.value(*b);
                let k = if ta { av.rows() } else { av.cols() };
                if needs(a) {
                    let shape = av.shape().to_vec();
                    let s = slot(grads, a.0, &shape);
                    if !ta {
                        T::gemm(false, !tb, m, n, k, T::one(), g.data(), bv.data(), T::one(), s.data_mut());
                    } else {
                        T::gemm(tb, true, k, n, m, T::one(), bv.data(), g.data(), T::one(), s.data_mut());
                    }
                }
                if needs(b) {
                    let shape = bv.shape().to_vec();
                    let s = slot(grads, b.0, &shape);
                    if !tb {
                        T::gemm(!ta, false, k, m, n, T::one(), av.data(), g.data(), T::one(), s.data_mut());
                    } else {
                        T::gemm(true, ta, n, m, k, T::one(), g.data(), av.data(), T::one(), s.data_mut());
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        slot(grads, v.0, g.shape()).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    slot(grads, a.0, g.shape()).add_assign(g);
                }
                if needs(b) {
                    let s = slot(grads, b.0, g.shape());
                    for (x, &d) in s.data_mut().iter_mut().zip(g.data()) {
                        *x -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(a) {
                    let s = slot(grads, a.0, g.shape());
                    for ((x, &d), &o) in s.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *x += d * o;
                    }
                }
                if needs(b) {
                    let s = slot(grads, b.0, g.shape());
                    for ((x, &d), &o) in s.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *x += d * o;
                    }
                }
            }
            Op::AddRow { a, row } => {
                if needs(a) {
                    slot(grads, a.0, g.shape()).add_assign(g);
                }
                if needs(row) {
                    let shape = self.value(*row).shape().to_vec();
                    let s = slot(grads, row.0, &shape);
                    for r in 0..g.rows() {
                        for (x, &d) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::AddCol { a, col } => {
                if needs(a) {
                    slot(grads, a.0, g.shape()).add_assign(g);
                }
                if needs(col) {
                    let shape = self.value(*col).shape().to_vec();
                    let s = slot(grads, col.0, &shape);
                    for r in 0..g.rows() {
                        s.data_mut()[r] += g.row(r).iter().copied().sum::<T>();
                    }
                }
            }
            Op::Scale { a, s: k } => {
                if needs(a) {
                    let s = slot(grads, a.0, g.shape());
                    for (x, &d) in s.data_mut().iter_mut().zip(g.data()) {
                        *x += d * *k;
                    }
                }
            }
            Op::MulConst { a, factor } => {
                if needs(a) {
                    let s = slot(grads, a.0, g.shape());
                    for ((x, &d), &f) in s.data_mut().iter_mut().zip(g.data()).zip(factor.data()) {
                        *x += d * f;
                    }
                }
            }
            Op::Relu(a) => {
                if needs(a) {
                    let input = self.value(*a);
                    let s = slot(grads, a.0, g.shape());
                    for ((x, &d), &v) in s.data_mut().iter_mut().zip(g.data()).zip(input.data()) {
                        if v > T::zero() {
                            *x += d;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if needs(a) {
                    let y = &node.value;
                    let s = slot(grads, a.0, g.shape());
                    for ((x, &d), &v) in s.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += d * v * (T::one() - v);
                    }
                }
            }
            Op::Softmax(a) => {
                if needs(a) {
                    let y = &node.value;
                    let s = slot(grads, a.0, g.shape());
                    for r in 0..g.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((x, &p), &q) in s.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *x += p * (q - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if needs(a) {
                    let y = &node.value;
                    let s = slot(grads, a.0, g.shape());
                    for r in 0..g.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let total: T = gr.iter().copied().sum();
                        for ((x, &ly), &q) in s.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *x += q - ly.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (r, c) = rc(g);
                let gv = self.value(*gamma).data().to_vec();
                if needs(gamma) {
                    let shape = self.value(*gamma).shape().to_vec();
                    let s = slot(grads, gamma.0, &shape);
                    for i in 0..r {
                        for j in 0..c {
                            s.data_mut()[j] += g.row(i)[j] * xhat[i * c + j];
                        }
                    }
                }
                if needs(beta) {
                    let shape = self.value(*beta).shape().to_vec();
                    let s = slot(grads, beta.0, &shape);
                    for i in 0..r {
                        for (x, &d) in s.data_mut().iter_mut().zip(g.row(i)) {
                            *x += d;
                        }
                    }
                }
                if needs(x) {
                    let n = T::from_usize(c).expect("usize");
                    let s = slot(grads, x.0, g.shape());
                    let mut dxhat = vec![T::zero(); c];
                    for i in 0..r {
                        let gr = g.row(i);
                        let h = &xhat[i * c..(i + 1) * c];
                        for j in 0..c {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / n;
                        let mean_dh = dxhat.iter().zip(h).map(|(&p, &q)| p * q).sum::<T>() / n;
                        for (j, out) in s.row_mut(i).iter_mut().enumerate() {
                            *out += rstd[i] * (dxhat[j] - mean_d - h[j] * mean_dh);
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if needs(a) {
                    let d = g.data()[0];
                    let shape = self.value(*a).shape().to_vec();
                    let s = slot(grads, a.0, &shape);
                    s.data_mut().iter_mut().for_each(|x| *x += d);
                }
            }
            Op::SliceCols { a, start } => {
                if needs(a) {
                    let shape = self.value(*a).shape().to_vec();
                    let s = slot(grads, a.0, &shape);
                    let w = g.cols();
                    for r in 0..g.rows() {
                        for (x, &d) in s.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if needs(p) {
                        let shape = self.value(*p).shape().to_vec();
                        let s = slot(grads, p.0, &shape);
                        for r in 0..g.rows() {
                            for (x, &d) in s.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *x += d;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows { a, start } => {
                if needs(a) {
                    let shape = self.value(*a).shape().to_vec();
                    let c = g.cols();
                    let s = slot(grads, a.0, &shape);
                    for (x, &d) in s.data_mut()[start * c..].iter_mut().zip(g.data()) {
                        *x += d;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for p in parts {
                    let h = self.value(*p).rows();
                    if needs(p) {
                        let shape = self.value(*p).shape().to_vec();
                        let s = slot(grads, p.0, &shape);
                        for (x, &d) in s.data_mut().iter_mut().zip(&g.data()[offset * c..(offset + h) * c]) {
                            *x += d;
                        }
                    }
                    offset += h;
                }
            }
        }
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], idx: usize, shape: &[usize]) -> &'a mut Tensor<T> {
    grads[idx].get_or_insert_with(|| Tensor::zeros(shape))
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax over the allowed entries of one row. Disallowed
/// entries receive exactly zero weight; a fully masked row is all zeros.
pub fn softmax_row<T: Real>(x: &[T], out: &mut [T], allowed: impl Fn(usize) -> bool) {
    let mut mx = T::neg_infinity();
    for (j, &v) in x.iter().enumerate() {
        if allowed(j) && v > mx {
            mx = v;
        }
    }
    if mx == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let mut total = T::zero();
    for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        *o = if allowed(j) { (v - mx).exp() } else { T::zero() };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|&v| self.get(v))
    }

    /// Adds `scale * dL/dp` into every bound parameter's gradient buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>, scale: T) {
        let mut ids: Vec<_> = self.params.keys().copied().collect();
        ids.sort();
        for id in ids {
            if let Some(g) = self.param(id) {
                let p = store.get_mut(id);
                for (acc, &d) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += d * scale;
                }
            }
        }
    }
}
