//! Reverse-mode differentiation over batched 2-D tensors.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! walks the records in reverse and accumulates gradients for every
//! parameter of the [`ParamSet`] the tape was opened on. Constant inputs are
//! never differentiated.

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul_nn_acc, matmul_nt, matmul_tn_acc, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Gradient of a scalar loss with respect to every parameter, in
/// [`ParamSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Gradients { grads: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.grads
    }

    pub fn global_norm(&self) -> T {
        let sq = self.grads.iter().flat_map(|g| g.data()).fold(T::zero(), |acc, &x| acc + x * x);
        sq.sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x = *x * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }
}

/// Handle to a value on a tape: either a recorded node or a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Node(usize),
    Param(usize),
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Gather { table: Var, ids: Vec<usize> },
    MatMulT { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Select { mask: Vec<bool>, a: Var, b: Var },
    Sum(Var),
    Scale(Var, T),
    SoftmaxXent { logits: Var, gold: Vec<usize>, mask: Vec<bool>, weights: Vec<T>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-row class targets for [`Tape::softmax_xent`].
#[derive(Debug, Clone)]
pub struct XentTargets<T> {
    pub gold: Vec<usize>,
    /// Row-major `[rows × classes]` validity mask.
    pub mask: Vec<bool>,
    /// Loss weight of each row (the weight of its gold class).
    pub weights: Vec<T>,
}

pub struct Tape<'p, T> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape { params, nodes: Vec::new(), consumed: false }
    }

    pub fn param(&self, id: ParamId) -> Var {
        Var::Param(id.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match v {
            Var::Node(i) => &self.nodes[i].value,
            Var::Param(p) => &self.params.tensors()[p],
        }
    }

    fn requires_grad(&self, v: Var) -> bool {
        match v {
            Var::Node(i) => self.nodes[i].requires_grad,
            Var::Param(_) => true,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node { value, op, requires_grad });
        Var::Node(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::Shape(format!("{op}: {a:?} is {da:?} but {b:?} is {db:?}")));
        }
        Ok(da)
    }

    /// Records a constant.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Input, requires_grad: false });
        Var::Node(self.nodes.len() - 1)
    }

    /// Rows `ids` of `table`, one output row per id.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let (rows, cols) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("gather: row {bad} out of range for {table:?} with {rows} rows")));
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in &ids {
            data.extend_from_slice(src.row(i));
        }
        let value = Tensor::matrix(ids.len(), cols, data)?;
        Ok(self.push(value, Op::Gather { table, ids }, &[table]))
    }

    /// `x [B×I] · wᵀ` for `w [O×I]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (b, i) = self.dims(x);
        let (o, wi) = self.dims(w);
        if i != wi {
            return Err(Error::Shape(format!("matmul: {x:?} has {i} columns but {w:?} is {o}x{wi}")));
        }
        let data = matmul_nt(self.value(x).data(), self.value(w).data(), b, i, o);
        let value = Tensor::matrix(b, o, data)?;
        Ok(self.push(value, Op::MatMulT { x, w }, &[x, w]))
    }

    /// Adds the vector `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if self.value(bias).len() != cols {
            return Err(Error::Shape(format!("add_bias: {x:?} has {cols} columns, bias {bias:?} has {}", self.value(bias).len())));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data();
        for r in 0..rows {
            for (v, &bb) in value.row_mut(r).iter_mut().zip(b) {
                *v = *v + bb;
            }
        }
        Ok(self.push(value, Op::AddBias { x, b: bias }, &[x, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::Mul(a, b), &[a, b]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::tanh);
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if start + len > cols {
            return Err(Error::Shape(format!("slice_cols: {start}..{} out of {cols} columns of {x:?}", start + len)));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(rows, len, data)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.dims(p).0).ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).0 != rows) {
            return Err(Error::Shape(format!("concat_cols: {bad:?} does not have {rows} rows")));
        }
        let cols: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.dims(p).1).ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).1 != cols) {
            return Err(Error::Shape(format!("concat_rows: {bad:?} does not have {cols} columns")));
        }
        let rows: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Row `r` of the result comes from `a` where `mask[r]`, else from `b`.
    pub fn select(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.same_shape(a, b, "select")?;
        if mask.len() != rows {
            return Err(Error::Shape(format!("select: mask has {} entries for {rows} rows", mask.len())));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &m) in mask.iter().enumerate() {
            data.extend_from_slice(self.value(if m { a } else { b }).row(r));
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(value, Op::Select { mask, a, b }, &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    /// Mean over rows of `-weight · log softmax(logits)[gold]`, where the
    /// softmax only runs over the classes valid in `mask` (masked classes get
    /// probability exactly zero).
    pub fn softmax_xent(&mut self, logits: Var, targets: XentTargets<T>) -> Result<Var> {
        let (rows, k) = self.dims(logits);
        let XentTargets { gold, mask, weights } = targets;
        if gold.len() != rows || weights.len() != rows || mask.len() != rows * k {
            return Err(Error::Shape(format!("softmax_xent: targets do not cover {rows}x{k} logits")));
        }
        if rows == 0 {
            return Err(Error::Shape("softmax_xent: empty batch".into()));
        }
        let l = self.value(logits);
        let mut probs = vec![T::zero(); rows * k];
        let mut total = T::zero();
        for r in 0..rows {
            let m = &mask[r * k..(r + 1) * k];
            if gold[r] >= k || !m[gold[r]] {
                return Err(Error::Data(format!("softmax_xent: gold class {} of row {r} is masked out", gold[r])));
            }
            let p = &mut probs[r * k..(r + 1) * k];
            let row_log_prob = masked_log_softmax(l.row(r), m, p);
            total = total - weights[r] * row_log_prob[gold[r]];
        }
        let loss = total / T::from_f64(rows as f64);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, gold, mask, weights, probs }, &[logits]))
    }

    /// Runs the reverse pass from the scalar `loss`. A tape can be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!("backward: {loss:?} is not a scalar")));
        }
        self.consumed = true;
        let mut acc = GradAcc {
            nodes: &self.nodes,
            params: self.params,
            node: (0..self.nodes.len()).map(|_| None).collect(),
            param: (0..self.params.len()).map(|_| None).collect(),
        };
        if let Some(g) = acc.slot(loss) {
            g.data_mut()[0] = T::one();
        }
        let Var::Node(last) = loss else {
            // d(param)/d(param) is handled by the seed above
            return Ok(acc.finish());
        };
        for i in (0..=last).rev() {
            let Some(g) = acc.node[i].take() else { continue };
            acc.propagate(i, &g);
        }
        Ok(acc.finish())
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Writes masked softmax probabilities into `probs` and returns the log
/// probabilities (masked entries are `-inf`).
pub(crate) fn masked_log_softmax<T: Scalar>(logits: &[T], mask: &[bool], probs: &mut [T]) -> Vec<T> {
    let max = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(&l, _)| l).fold(T::neg_infinity(), T::max);
    let sum = logits.iter().zip(mask).filter(|(_, &m)| m).fold(T::zero(), |s, (&l, _)| s + (l - max).exp());
    let log_sum = sum.ln();
    let mut out = vec![T::neg_infinity(); logits.len()];
    for j in 0..logits.len() {
        if mask[j] {
            out[j] = logits[j] - max - log_sum;
            probs[j] = out[j].exp();
        } else {
            probs[j] = T::zero();
        }
    }
    out
}

struct GradAcc<'a, T> {
    nodes: &'a [Node<T>],
    params: &'a ParamSet<T>,
    node: Vec<Option<Tensor<T>>>,
    param: Vec<Option<Tensor<T>>>,
}

impl<'a, T: Scalar> GradAcc<'a, T> {
    fn value(&self, v: Var) -> &'a Tensor<T> {
        match v {
            Var::Node(i) => &self.nodes[i].value,
            Var::Param(p) => &self.params.tensors()[p],
        }
    }

    fn slot(&mut self, v: Var) -> Option<&mut Tensor<T>> {
        let shape = self.value(v).shape();
        match v {
            Var::Node(i) if !self.nodes[i].requires_grad => None,
            Var::Node(i) => Some(self.node[i].get_or_insert_with(|| Tensor::zeros(shape))),
            Var::Param(p) => Some(self.param[p].get_or_insert_with(|| Tensor::zeros(shape))),
        }
    }

    fn finish(self) -> Gradients<T> {
        let params = self.params;
        let grads = self
            .param
            .into_iter()
            .zip(params.tensors())
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Gradients { grads }
    }

    fn accumulate(&mut self, v: Var, g: &Tensor<T>) {
        if let Some(slot) = self.slot(v) {
            slot.add_assign(g);
        }
    }

    fn accumulate_with(&mut self, v: Var, g: &Tensor<T>, f: impl Fn(usize, T) -> T) {
        if let Some(slot) = self.slot(v) {
            for (j, (s, &gg)) in slot.data_mut().iter_mut().zip(g.data()).enumerate() {
                *s = *s + f(j, gg);
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) {
        let nodes = self.nodes;
        let node = &nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Input => {}
            Op::Gather { table, ids } => {
                if let Some(slot) = self.slot(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, &gg) in slot.row_mut(id).iter_mut().zip(g.row(r)) {
                            *s = *s + gg;
                        }
                    }
                }
            }
            Op::MatMulT { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (b, i_dim, o) = (xv.rows(), xv.cols(), wv.rows());
                if let Some(gx) = self.slot(*x) {
                    matmul_nn_acc(gx.data_mut(), g.data(), wv.data(), b, o, i_dim);
                }
                if let Some(gw) = self.slot(*w) {
                    matmul_tn_acc(gw.data_mut(), g.data(), xv.data(), o, b, i_dim);
                }
            }
            Op::AddBias { x, b } => {
                self.accumulate(*x, g);
                if let Some(gb) = self.slot(*b) {
                    let cols = g.cols();
                    for r in 0..g.rows() {
                        for (s, &gg) in gb.data_mut()[..cols].iter_mut().zip(g.row(r)) {
                            *s = *s + gg;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(*a, g, |j, gg| gg * bv[j]);
                self.accumulate_with(*b, g, |j, gg| gg * av[j]);
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                self.accumulate_with(*x, g, |j, gg| gg * y[j] * (T::one() - y[j]));
            }
            Op::Tanh(x) => {
                let y = out.data();
                self.accumulate_with(*x, g, |j, gg| gg * (T::one() - y[j] * y[j]));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate_with(*x, g, |j, gg| if xv[j] > T::zero() { gg } else { T::zero() });
            }
            Op::SliceCols { x, start } => {
                let len = g.cols();
                if let Some(gx) = self.slot(*x) {
                    for r in 0..g.rows() {
                        for (s, &gg) in gx.row_mut(r)[*start..*start + len].iter_mut().zip(g.row(r)) {
                            *s = *s + gg;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if let Some(gp) = self.slot(p) {
                        for r in 0..g.rows() {
                            for (s, &gg) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + width]) {
                                *s = *s + gg;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.slot(p) {
                        for (s, &gg) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *s = *s + gg;
                        }
                    }
                    offset += n;
                }
            }
            Op::Select { mask, a, b } => {
                for (target, want) in [(*a, true), (*b, false)] {
                    if let Some(gt) = self.slot(target) {
                        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m == want) {
                            for (s, &gg) in gt.row_mut(r).iter_mut().zip(g.row(r)) {
                                *s = *s + gg;
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let g0 = g.data()[0];
                if let Some(gx) = self.slot(*x) {
                    for s in gx.data_mut() {
                        *s = *s + g0;
                    }
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate_with(*x, g, |_, gg| gg * s);
            }
            Op::SoftmaxXent { logits, gold, mask, weights, probs } => {
                let rows = gold.len();
                let k = probs.len() / rows;
                let scale = g.data()[0] / T::from_f64(rows as f64);
                if let Some(gl) = self.slot(*logits) {
                    for (j, s) in gl.data_mut().iter_mut().enumerate() {
                        let (r, c) = (j / k, j % k);
                        if mask[j] {
                            let target = if c == gold[r] { T::one() } else { T::zero() };
                            *s = *s + scale * weights[r] * (probs[j] - target);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(values: &[(&str, Tensor<f64>)]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        for (n, t) in values {
            p.add(*n, t.clone());
        }
        p
    }

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let p = params(&[("w", Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap())]);
        let mut tape = Tape::new(&p);
        let s = tape.sum(Var::Param(0));
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(0)).data(), &[1.0; 6]);
    }

    #[test]
    fn zero_scaled_loss_has_zero_gradient() {
        let p = params(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut tape = Tape::new(&p);
        let t = tape.tanh(Var::Param(0));
        let s = tape.sum(t);
        let z = tape.scale(s, 0.0);
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(ParamId(0)).data(), &[0.0, 0.0]);
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let p = params(&[("a", Tensor::vector(vec![1.0])), ("b", Tensor::vector(vec![2.0, 3.0]))]);
        let mut tape = Tape::new(&p);
        let s = tape.sum(Var::Param(0));
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(1)).data(), &[0.0, 0.0]);
    }

    #[test]
    fn reused_parameter_accumulates() {
        let p = params(&[("w", Tensor::vector(vec![3.0]))]);
        let mut tape = Tape::new(&p);
        let sq = tape.mul(Var::Param(0), Var::Param(0)).unwrap();
        let y = tape.add(sq, Var::Param(0)).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(0)).data(), &[7.0]);
    }

    #[test]
    fn second_backward_fails() {
        let p = params(&[("w", Tensor::vector(vec![1.0]))]);
        let mut tape = Tape::new(&p);
        let s = tape.sum(Var::Param(0));
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::TapeConsumed)));
    }

    #[test]
    fn shape_errors_name_operands() {
        let p = params(&[("w", Tensor::matrix(2, 3, vec![0.0; 6]).unwrap())]);
        let mut tape = Tape::new(&p);
        let x = tape.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let err = tape.matmul_t(x, Var::Param(0)).unwrap_err();
        assert!(err.to_string().contains("Param(0)"), "{err}");
        assert!(tape.gather(Var::Param(0), vec![2]).is_err());
        assert!(tape.slice_cols(x, 1, 2).is_err());
    }

    fn xent(logits: Vec<f64>, gold: usize, mask: [bool; 4]) -> (f64, Vec<f64>) {
        let p = params(&[("l", Tensor::matrix(1, 4, logits).unwrap())]);
        let mut tape = Tape::new(&p);
        let loss = tape
            .softmax_xent(Var::Param(0), XentTargets { gold: vec![gold], mask: mask.to_vec(), weights: vec![1.0] })
            .unwrap();
        let l = tape.value(loss).data()[0];
        let g = tape.backward(loss).unwrap();
        (l, g.get(ParamId(0)).data().to_vec())
    }

    #[test]
    fn uniform_logits_give_log_of_valid_count() {
        let (l, _) = xent(vec![0.3; 4], 2, [true; 4]);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let (l, g) = xent(vec![0.3; 4], 3, [true, false, false, true]);
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[3] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn masked_gold_is_rejected() {
        let p = params(&[("l", Tensor::matrix(1, 4, vec![0.0; 4]).unwrap())]);
        let mut tape = Tape::new(&p);
        let r = tape.softmax_xent(
            Var::Param(0),
            XentTargets { gold: vec![1], mask: vec![true, false, false, true], weights: vec![1.0] },
        );
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn softmax_is_stable_for_extreme_logits() {
        let mut probs = [0f32; 4];
        masked_log_softmax(&[1e4f32, -1e4, 5e3, 1e4], &[true; 4], &mut probs);
        assert!(probs.iter().all(|p| p.is_finite()));
        assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        masked_log_softmax(&[-1e4f32, -1e4, 1e4, -1e4], &[true, false, false, true], &mut probs);
        assert_eq!(probs[1], 0.0);
        assert_eq!(probs[2], 0.0);
        assert!((probs[0] + probs[3] - 1.0).abs() < 1e-6);
    }
}
