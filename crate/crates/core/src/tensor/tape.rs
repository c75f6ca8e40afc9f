//! Reverse-mode automatic differentiation over [`DenseMatrix`] values.
//!
//! A [`Tape`] records every forward operation together with its cached
//! output. Records are appended in evaluation order, so the record list is
//! already topologically sorted and [`Tape::backward`] is a single reverse
//! sweep. Parameters live in a [`ParamStore`] outside the tape; the tape
//! only borrows their current values.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DenseMatrix, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a trainable matrix in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DenseMatrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DenseMatrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(DenseMatrix::len).sum()
    }
}

/// One gradient per parameter of the store the tape was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<DenseMatrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .values
                .iter()
                .map(|v| DenseMatrix::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &DenseMatrix)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(DenseMatrix::squared_norm)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in &mut self.grads {
                for x in g.data_mut() {
                    *x *= scale;
                }
            }
        }
        norm
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulRows(Var, Var),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Log(Var),
    Mean(Var),
    Sum(Var),
    RowSum(Var),
    RowMax(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    L2NormRows(Var),
    StraightThrough(Var),
    BceWithLogits(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulRows(..) => "mul_rows",
            Op::Gather(..) => "gather_rows",
            Op::SegmentSum(..) => "segment_sum",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LogSoftmaxRows(_) => "log_softmax_rows",
            Op::Log(_) => "log",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::RowSum(_) => "row_sum",
            Op::RowMax(..) => "row_max",
            Op::ConcatRows(_) => "concat_rows",
            Op::L2NormRows(_) => "l2_norm_rows",
            Op::StraightThrough(_) => "straight_through",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: DenseMatrix,
}

/// Operation record for one forward pass.
#[derive(Debug)]
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

fn broadcast(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<Broadcast, TensorError> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if a.shape() == (1, 1) {
        Ok(Broadcast::LeftScalar)
    } else if b.shape() == (1, 1) {
        Ok(Broadcast::RightScalar)
    } else {
        Err(TensorError::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        })
    }
}

fn zip_broadcast(a: &DenseMatrix, b: &DenseMatrix, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    match mode {
        Broadcast::Same => {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            DenseMatrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
        }
        Broadcast::LeftScalar => {
            let s = a.data()[0];
            b.map(|y| f(s, y))
        }
        Broadcast::RightScalar => {
            let s = b.data()[0];
            a.map(|x| f(x, s))
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: DenseMatrix) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: DenseMatrix) -> Result<Var, TensorError> {
        self.push(Op::Constant, value)
    }

    /// Records the current value of a parameter. Repeated calls return the
    /// same handle.
    pub fn param(&mut self, id: ParamId) -> Result<Var, TensorError> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let value = self.params.get(id).clone();
        let v = self.push(Op::Param(id), value)?;
        self.param_vars.insert(id, v);
        Ok(v)
    }

    /// Copies a value onto the tape with no gradient path back to `x`.
    pub fn detach(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).clone();
        self.push(Op::Constant, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let mode = broadcast("add", va, vb)?;
        let value = zip_broadcast(va, vb, mode, |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let mode = broadcast("sub", va, vb)?;
        let value = zip_broadcast(va, vb, mode, |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let mode = broadcast("mul", va, vb)?;
        let value = zip_broadcast(va, vb, mode, |x, y| x * y);
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), value)
    }

    /// Multiplies row `i` of `x` (n×d) by entry `i` of the column `g` (n×1).
    pub fn mul_rows(&mut self, x: Var, g: Var) -> Result<Var, TensorError> {
        let (vx, vg) = (self.value(x), self.value(g));
        if vg.cols() != 1 || vg.rows() != vx.rows() {
            return Err(TensorError::Shape {
                op: "mul_rows",
                left: vx.shape(),
                right: vg.shape(),
            });
        }
        let mut value = vx.clone();
        for i in 0..value.rows() {
            let s = vg.data()[i];
            for v in value.row_mut(i) {
                *v *= s;
            }
        }
        self.push(Op::MulRows(x, g), value)
    }

    /// Output row `k` is row `index[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let vx = self.value(x);
        let mut out = DenseMatrix::zeros(index.len(), vx.cols());
        for (k, &i) in index.iter().enumerate() {
            if i >= vx.rows() {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    len: vx.rows(),
                });
            }
            out.row_mut(k).copy_from_slice(vx.row(i));
        }
        self.push(Op::Gather(x, index), out)
    }

    /// Sums the rows of `x` into `segments` output rows; row `k` goes to
    /// output row `segment[k]`. Accumulation follows input row order.
    pub fn segment_sum(&mut self, x: Var, segment: Arc<[usize]>, segments: usize) -> Result<Var, TensorError> {
        let vx = self.value(x);
        if segment.len() != vx.rows() {
            return Err(TensorError::Shape {
                op: "segment_sum",
                left: vx.shape(),
                right: (segment.len(), 1),
            });
        }
        let mut out = DenseMatrix::zeros(segments, vx.cols());
        for (k, &s) in segment.iter().enumerate() {
            if s >= segments {
                return Err(TensorError::Index {
                    op: "segment_sum",
                    index: s,
                    len: segments,
                });
            }
            let src = vx.row(k);
            for (o, &x) in out.row_mut(s).iter_mut().zip(src) {
                *o += x;
            }
        }
        self.push(Op::SegmentSum(x, segment), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        let mut value = DenseMatrix::zeros(va.rows(), va.cols());
        for i in 0..va.rows() {
            softmax_row(va.row(i), value.row_mut(i));
        }
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        let mut value = DenseMatrix::zeros(va.rows(), va.cols());
        for i in 0..va.rows() {
            let row = va.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in value.row_mut(i).iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        self.push(Op::LogSoftmaxRows(a), value)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(f64::ln);
        self.push(Op::Log(a), value)
    }

    /// Mean of all entries, as a 1×1 value.
    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(TensorError::Empty { op: "mean" });
        }
        let value = DenseMatrix::scalar(va.sum() / va.len() as f64);
        self.push(Op::Mean(a), value)
    }

    /// Sum of all entries, as a 1×1 value.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = DenseMatrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Per-row sum (n×d → n×1).
    pub fn row_sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        let data = (0..va.rows()).map(|i| va.row(i).iter().sum()).collect();
        let value = DenseMatrix::from_vec(va.rows(), 1, data)?;
        self.push(Op::RowSum(a), value)
    }

    /// Per-row maximum (n×d → n×1); the gradient goes to the first maximal
    /// entry.
    pub fn row_max(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        if va.cols() == 0 {
            return Err(TensorError::Empty { op: "row_max" });
        }
        let arg = va.argmax_rows();
        let data = arg.iter().enumerate().map(|(i, &j)| va.get(i, j)).collect();
        let value = DenseMatrix::from_vec(va.rows(), 1, data)?;
        self.push(Op::RowMax(a, arg), value)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Empty { op: "concat_rows" });
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let vp = self.value(p);
            if vp.cols() != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    left: self.value(first).shape(),
                    right: vp.shape(),
                });
            }
            rows += vp.rows();
            data.extend_from_slice(vp.data());
        }
        let value = DenseMatrix::from_vec(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), value)
    }

    /// Euclidean norm of each row (n×d → n×1). The gradient at a zero row is
    /// taken as zero.
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        let data = (0..va.rows())
            .map(|i| va.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let value = DenseMatrix::from_vec(va.rows(), 1, data)?;
        self.push(Op::L2NormRows(a), value)
    }

    /// Forward value is `hard`; the backward pass routes the incoming
    /// gradient to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var, hard: DenseMatrix) -> Result<Var, TensorError> {
        if self.value(soft).shape() != hard.shape() {
            return Err(TensorError::Shape {
                op: "straight_through",
                left: self.value(soft).shape(),
                right: hard.shape(),
            });
        }
        self.push(Op::StraightThrough(soft), hard)
    }

    /// Mean binary cross-entropy of sigmoid(logits) against `labels`, in the
    /// overflow-free form `max(f,0) - f*y + ln(1 + exp(-|f|))`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var, TensorError> {
        let vf = self.value(logits);
        if vf.cols() != 1 || vf.rows() != labels.len() {
            return Err(TensorError::Shape {
                op: "bce_with_logits",
                left: vf.shape(),
                right: (labels.len(), 1),
            });
        }
        if labels.is_empty() {
            return Err(TensorError::Empty { op: "bce_with_logits" });
        }
        let total: f64 = vf
            .data()
            .iter()
            .zip(labels)
            .map(|(&f, &y)| (f.max(0.0) - f * y) + (-f.abs()).exp().ln_1p())
            .sum();
        let value = DenseMatrix::scalar(total / labels.len() as f64);
        self.push(Op::BceWithLogits(logits, labels.to_vec()), value)
    }

    /// Back-propagates from a 1×1 `loss`. Returns one gradient per parameter
    /// in the store; parameters not reached get zeros. A tape can be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::NotScalar { shape });
        }
        self.consumed = true;

        let mut grads: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.grads[id.0].axpy(1.0, &g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    let (ga, gb) = self.broadcast_grads(*a, *b, &g, 1.0, 1.0);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    let (ga, gb) = self.broadcast_grads(*a, *b, &g, 1.0, -1.0);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mode = broadcast("mul", va, vb)?;
                    let (ga, gb) = match mode {
                        Broadcast::Same => (
                            zip_broadcast(&g, vb, Broadcast::Same, |x, y| x * y),
                            zip_broadcast(&g, va, Broadcast::Same, |x, y| x * y),
                        ),
                        Broadcast::LeftScalar => {
                            let s = va.data()[0];
                            let dot: f64 = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
                            (DenseMatrix::scalar(dot), g.map(|x| x * s))
                        }
                        Broadcast::RightScalar => {
                            let s = vb.data()[0];
                            let dot: f64 = g.data().iter().zip(va.data()).map(|(x, y)| x * y).sum();
                            (g.map(|x| x * s), DenseMatrix::scalar(dot))
                        }
                    };
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| x * c)),
                Op::MulRows(x, gate) => {
                    let (vx, vg) = (self.value(*x), self.value(*gate));
                    let mut gx = g.clone();
                    let mut gg = DenseMatrix::zeros(vg.rows(), 1);
                    for i in 0..gx.rows() {
                        let s = vg.data()[i];
                        let mut dot = 0.0;
                        for (gi, &xi) in gx.row_mut(i).iter_mut().zip(vx.row(i)) {
                            dot += *gi * xi;
                            *gi *= s;
                        }
                        gg.data_mut()[i] = dot;
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gate, gg);
                }
                Op::Gather(x, index) => {
                    let vx = self.value(*x);
                    let mut gx = DenseMatrix::zeros(vx.rows(), vx.cols());
                    for (k, &i) in index.iter().enumerate() {
                        for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentSum(x, segment) => {
                    let vx = self.value(*x);
                    let mut gx = DenseMatrix::zeros(vx.rows(), vx.cols());
                    for (k, &s) in segment.iter().enumerate() {
                        gx.row_mut(k).copy_from_slice(g.row(s));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(a) => {
                    let gx = zip_broadcast(&g, &node.value, Broadcast::Same, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *a, gx);
                }
                Op::Tanh(a) => {
                    let gx = zip_broadcast(&g, &node.value, Broadcast::Same, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, *a, gx);
                }
                Op::Relu(a) => {
                    let gx = zip_broadcast(&g, self.value(*a), Broadcast::Same, |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = DenseMatrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for ((o, &gi), &yi) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                            *o = yi * (gi - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = DenseMatrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let total: f64 = g.row(i).iter().sum();
                        for ((o, &gi), &yi) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                            *o = gi - yi.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Log(a) => {
                    let gx = zip_broadcast(&g, self.value(*a), Broadcast::Same, |g, x| g / x);
                    accumulate(&mut grads, *a, gx);
                }
                Op::Mean(a) => {
                    let va = self.value(*a);
                    let s = g.data()[0] / va.len() as f64;
                    accumulate(&mut grads, *a, DenseMatrix::filled(va.rows(), va.cols(), s));
                }
                Op::Sum(a) => {
                    let va = self.value(*a);
                    accumulate(&mut grads, *a, DenseMatrix::filled(va.rows(), va.cols(), g.data()[0]));
                }
                Op::RowSum(a) => {
                    let va = self.value(*a);
                    let gx = DenseMatrix::from_fn(va.rows(), va.cols(), |i, _| g.data()[i]);
                    accumulate(&mut grads, *a, gx);
                }
                Op::RowMax(a, arg) => {
                    let va = self.value(*a);
                    let mut gx = DenseMatrix::zeros(va.rows(), va.cols());
                    for (i, &j) in arg.iter().enumerate() {
                        gx.set(i, j, g.data()[i]);
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                        accumulate(&mut grads, p, DenseMatrix::from_vec(r, c, slice)?);
                        offset += r;
                    }
                }
                Op::L2NormRows(a) => {
                    let va = self.value(*a);
                    let norms = &node.value;
                    let gx = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| {
                        let n = norms.data()[i];
                        if n > 0.0 {
                            g.data()[i] * va.get(i, j) / n
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, gx);
                }
                Op::StraightThrough(soft) => accumulate(&mut grads, *soft, g),
                Op::BceWithLogits(f, labels) => {
                    let vf = self.value(*f);
                    let scale = g.data()[0] / labels.len() as f64;
                    let data = vf
                        .data()
                        .iter()
                        .zip(labels)
                        .map(|(&x, &y)| scale * (sigmoid(x) - y))
                        .collect();
                    accumulate(&mut grads, *f, DenseMatrix::from_vec(vf.rows(), 1, data)?);
                }
            }
        }
        for g in &out.grads {
            if !g.is_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        Ok(out)
    }

    fn broadcast_grads(&self, a: Var, b: Var, g: &DenseMatrix, sa: f64, sb: f64) -> (DenseMatrix, DenseMatrix) {
        let (va, vb) = (self.value(a), self.value(b));
        let reduce = |s: f64| DenseMatrix::scalar(s * g.sum());
        if va.shape() == vb.shape() {
            (g.map(|x| sa * x), g.map(|x| sb * x))
        } else if va.shape() == (1, 1) {
            (reduce(sa), g.map(|x| sb * x))
        } else {
            (g.map(|x| sa * x), reduce(sb))
        }
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}
