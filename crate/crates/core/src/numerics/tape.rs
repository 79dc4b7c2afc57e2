//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Forward constructors append nodes; `backward` walks the tape in
//! reverse, accumulating gradients. Parameters read through
//! [`Tape::param`] are cached, so every use of a weight within one tape
//! shares a node and weight sharing (e.g. an LSTM across time steps)
//! accumulates gradients naturally.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::params::{ParamId, ParamSet};
use super::rng::Rng;
use super::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    AddScalarNode(NodeId, NodeId),
    AddConst(NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    VecMat(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxAxis(NodeId, usize),
    LogSoftmaxAxis(NodeId, usize),
    Glu(NodeId),
    ConcatVec(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    NarrowLast(NodeId, usize, usize),
    MeanAxes(NodeId, Vec<usize>),
    SumAll(NodeId),
    Transpose2(NodeId),
    View(NodeId),
    Embedding(NodeId, Vec<usize>),
    GatherLast(NodeId, Vec<usize>),
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    AvgPool2d { x: NodeId, kh: usize, kw: usize },
    ChannelNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<(ParamId, bool), NodeId>,
}

/// Per-node gradients produced by a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Adds every tracked parameter's gradient into the set (accumulates
    /// across calls until `ParamSet::zero_grad`).
    pub fn accumulate_into(&self, tape: &Tape, pset: &mut ParamSet) {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = &self.grads[i] {
                    pset.accumulate_grad(pid, g);
                }
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

/// (outer, axis length, inner stride) decomposition for lane iteration.
fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), param_cache: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, prec: Precision) -> Result<NodeId> {
        let value = if prec == Precision::Single {
            value.with_precision(Precision::Single)
        } else {
            value
        };
        value.check_finite(op_name)?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        Ok(id)
    }

    fn prec2(&self, a: NodeId, b: NodeId) -> Precision {
        self.value(a).precision().combine(self.value(b).precision())
    }

    // ---------------- leaves ----------------

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value: t, op: Op::Leaf });
        id
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Reads a parameter. `track = true` registers it for gradients;
    /// `track = false` treats it as a frozen constant. Repeated reads of
    /// the same parameter share one node.
    pub fn read_param(&mut self, pset: &ParamSet, id: ParamId, track: bool) -> NodeId {
        if let Some(&n) = self.param_cache.get(&(id, track)) {
            return n;
        }
        let value = pset.get(id).value.clone();
        let op = if track { Op::Param(id) } else { Op::Leaf };
        let n = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        self.param_cache.insert((id, track), n);
        n
    }

    // ---------------- elementwise ----------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data);
        self.push("add", out, Op::Add(a, b), self.prec2(a, b))
    }

    /// `[R x C] + [C]` broadcast over rows.
    pub fn add_bias(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.rank() != 2 || tv.rank() != 1 || tm.shape()[1] != tv.shape()[0] {
            return Err(Error::shape("add_bias", format!("{:?} vs {:?}", tm.shape(), tv.shape())));
        }
        let (r, c) = (tm.shape()[0], tm.shape()[1]);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(tm.data()[i * c + j] + tv.data()[j]);
            }
        }
        let out = Tensor::from_vec(vec![r, c], data);
        self.push("add_bias", out, Op::AddBias(m, v), self.prec2(m, v))
    }

    /// Adds a one-element node to every entry of `x`.
    pub fn add_scalar_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("add_scalar_node", "scalar operand must have one element"));
        }
        let sv = self.value(s).data()[0];
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v + sv).collect();
        let out = Tensor::from_vec(tx.shape().to_vec(), data);
        self.push("add_scalar_node", out, Op::AddScalarNode(x, s), self.prec2(x, s))
    }

    pub fn add_const(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v + k).collect();
        let out = Tensor::from_vec(tx.shape().to_vec(), data);
        let prec = tx.precision();
        self.push("add_const", out, Op::AddConst(x), prec)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("sub", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data);
        self.push("sub", out, Op::Sub(a, b), self.prec2(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data);
        self.push("mul", out, Op::Mul(a, b), self.prec2(a, b))
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let out = Tensor::from_vec(tx.shape().to_vec(), tx.data().iter().map(|v| -v).collect());
        let prec = tx.precision();
        self.push("neg", out, Op::Neg(x), prec)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        let tx = self.value(x);
        let out = Tensor::from_vec(tx.shape().to_vec(), tx.data().iter().map(|v| v * k).collect());
        let prec = tx.precision();
        self.push("scale", out, Op::Scale(x, k), prec)
    }

    // ---------------- linear algebra ----------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data()[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data()[p * n..(p + 1) * n];
                let crow = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    crow[j] += av * brow[j];
                }
            }
        }
        let out = Tensor::from_vec(vec![m, n], data);
        self.push("matmul", out, Op::MatMul(a, b), self.prec2(a, b))
    }

    /// `a @ b^T` for `a: [m x k]`, `b: [n x k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(Error::shape("matmul_nt", format!("{:?} x {:?}^T", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let arow = &ta.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &tb.data()[j * k..(j + 1) * k];
                let mut s = 0.0;
                for p in 0..k {
                    s += arow[p] * brow[p];
                }
                data[i * n + j] = s;
            }
        }
        let out = Tensor::from_vec(vec![m, n], data);
        self.push("matmul_nt", out, Op::MatMulNT(a, b), self.prec2(a, b))
    }

    /// `[R x C] . [C] -> [R]`.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.rank() != 2 || tv.rank() != 1 || tm.shape()[1] != tv.shape()[0] {
            return Err(Error::shape("matvec", format!("{:?} . {:?}", tm.shape(), tv.shape())));
        }
        let (r, c) = (tm.shape()[0], tm.shape()[1]);
        let mut data = vec![0.0; r];
        for i in 0..r {
            let row = &tm.data()[i * c..(i + 1) * c];
            let mut s = 0.0;
            for j in 0..c {
                s += row[j] * tv.data()[j];
            }
            data[i] = s;
        }
        let out = Tensor::vector(data);
        self.push("matvec", out, Op::MatVec(m, v), self.prec2(m, v))
    }

    /// `[R] . [R x C] -> [C]` (e.g. attention-weighted row sum).
    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> Result<NodeId> {
        let (tv, tm) = (self.value(v), self.value(m));
        if tm.rank() != 2 || tv.rank() != 1 || tm.shape()[0] != tv.shape()[0] {
            return Err(Error::shape("vecmat", format!("{:?} . {:?}", tv.shape(), tm.shape())));
        }
        let (r, c) = (tm.shape()[0], tm.shape()[1]);
        let mut data = vec![0.0; c];
        for i in 0..r {
            let w = tv.data()[i];
            if w == 0.0 {
                continue;
            }
            let row = &tm.data()[i * c..(i + 1) * c];
            for j in 0..c {
                data[j] += w * row[j];
            }
        }
        let out = Tensor::vector(data);
        self.push("vecmat", out, Op::VecMat(v, m), self.prec2(v, m))
    }

    // ---------------- nonlinearities ----------------

    fn unary(
        &mut self,
        op_name: &'static str,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| f(*v)).collect();
        let out = Tensor::from_vec(tx.shape().to_vec(), data);
        let prec = tx.precision();
        self.push(op_name, out, op, prec)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("ln", x, f64::ln, Op::Ln(x))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.unary("clamp", x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    // ---------------- softmax family ----------------

    /// Numerically stabilized softmax along `axis` (max subtraction);
    /// slices along the axis sum to 1.
    pub fn softmax_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::invalid("softmax_axis", format!("axis {axis} for rank {}", tx.rank())));
        }
        tx.check_finite("softmax_axis")?;
        let (outer, len, inner) = axis_geometry(tx.shape(), axis);
        let mut data = vec![0.0; tx.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for k in 0..len {
                    mx = mx.max(tx.data()[at(k)]);
                }
                let mut sum = 0.0;
                for k in 0..len {
                    let e = (tx.data()[at(k)] - mx).exp();
                    data[at(k)] = e;
                    sum += e;
                }
                for k in 0..len {
                    data[at(k)] /= sum;
                }
            }
        }
        let prec = tx.precision();
        let out = Tensor::from_vec(tx.shape().to_vec(), data);
        self.push("softmax_axis", out, Op::SoftmaxAxis(x, axis), prec)
    }

    /// `x - logsumexp(x)` along `axis`, stabilized.
    pub fn log_softmax_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::invalid("log_softmax_axis", format!("axis {axis} for rank {}", tx.rank())));
        }
        let (outer, len, inner) = axis_geometry(tx.shape(), axis);
        let mut data = vec![0.0; tx.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for k in 0..len {
                    mx = mx.max(tx.data()[at(k)]);
                }
                let mut sum = 0.0;
                for k in 0..len {
                    sum += (tx.data()[at(k)] - mx).exp();
                }
                let lse = mx + sum.ln();
                for k in 0..len {
                    data[at(k)] = tx.data()[at(k)] - lse;
                }
            }
        }
        let prec = tx.precision();
        let out = Tensor::from_vec(tx.shape().to_vec(), data);
        self.push("log_softmax_axis", out, Op::LogSoftmaxAxis(x, axis), prec)
    }

    /// Gated linear unit over the last dimension: `[A, B] -> A * sigmoid(B)`.
    /// Output is half the size of the input along that dimension.
    pub fn glu(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let last = *tx.shape().last().ok_or_else(|| Error::shape("glu", "rank 0 input"))?;
        if last % 2 != 0 {
            return Err(Error::shape("glu", format!("odd last dimension {last}")));
        }
        let d = last / 2;
        let rows = tx.numel() / last;
        let mut out_shape = tx.shape().to_vec();
        *out_shape.last_mut().unwrap() = d;
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &tx.data()[r * last..(r + 1) * last];
            for j in 0..d {
                data[r * d + j] = row[j] * sigmoid(row[d + j]);
            }
        }
        let prec = tx.precision();
        let out = Tensor::from_vec(out_shape, data);
        self.push("glu", out, Op::Glu(x), prec)
    }

    // ---------------- shape ops ----------------

    /// Concatenates rank-1 vectors.
    pub fn concat_vec(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_vec", "no inputs"));
        }
        let mut data = Vec::new();
        let mut prec = Precision::Double;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(Error::shape("concat_vec", format!("rank {} input", t.rank())));
            }
            prec = prec.combine(t.precision());
            data.extend_from_slice(t.data());
        }
        let out = Tensor::vector(data);
        self.push("concat_vec", out, Op::ConcatVec(parts.to_vec()), prec)
    }

    /// Stacks equal-length rank-1 vectors into a `[k x V]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::invalid("stack_rows", "no inputs"));
        }
        let v = self.value(rows[0]).numel();
        let mut data = Vec::with_capacity(rows.len() * v);
        let mut prec = Precision::Double;
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.numel() != v {
                return Err(Error::shape("stack_rows", "rows must be rank-1 of equal length"));
            }
            prec = prec.combine(t.precision());
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(vec![rows.len(), v], data);
        self.push("stack_rows", out, Op::StackRows(rows.to_vec()), prec)
    }

    /// Slice `[start, start+len)` of the last dimension.
    pub fn narrow_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let tx = self.value(x);
        let last = *tx.shape().last().ok_or_else(|| Error::shape("narrow_last", "rank 0"))?;
        if start + len > last {
            return Err(Error::shape(
                "narrow_last",
                format!("slice {start}..{} of dim {last}", start + len),
            ));
        }
        let rows = tx.numel() / last;
        let mut out_shape = tx.shape().to_vec();
        *out_shape.last_mut().unwrap() = len;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&tx.data()[r * last + start..r * last + start + len]);
        }
        let prec = tx.precision();
        let out = Tensor::from_vec(out_shape, data);
        self.push("narrow_last", out, Op::NarrowLast(x, start, len), prec)
    }

    /// Arithmetic mean over `axes`; the reduced axes are dropped from the
    /// shape (global average pooling is `mean_axes` over all spatial axes).
    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let tx = self.value(x);
        let rank = tx.rank();
        let mut reduce = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::invalid("mean_axes", format!("axis {a} for rank {rank}")));
            }
            reduce[a] = true;
        }
        let count: usize = tx
            .shape()
            .iter()
            .enumerate()
            .filter(|(d, _)| reduce[*d])
            .map(|(_, &s)| s)
            .product();
        if count == 0 {
            return Err(Error::invalid("mean_axes", "empty reduction axis"));
        }
        let out_shape: Vec<usize> = tx
            .shape()
            .iter()
            .enumerate()
            .filter(|(d, _)| !reduce[*d])
            .map(|(_, &s)| s)
            .collect();
        let out_numel: usize = out_shape.iter().product::<usize>().max(1);
        let mut data = vec![0.0; out_numel];
        let shape = tx.shape().to_vec();
        for (flat, v) in tx.data().iter().enumerate() {
            data[Self::reduced_index(&shape, &reduce, flat)] += v / count as f64;
        }
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        let prec = tx.precision();
        let out = Tensor::from_vec(out_shape, data);
        self.push("mean_axes", out, Op::MeanAxes(x, axes.to_vec()), prec)
    }

    /// Flat index into the reduced shape for an input flat index.
    fn reduced_index(shape: &[usize], reduce: &[bool], flat: usize) -> usize {
        let mut rem = flat;
        let mut out = 0;
        for d in 0..shape.len() {
            let stride: usize = shape[d + 1..].iter().product();
            let coord = rem / stride;
            rem %= stride;
            if !reduce[d] {
                out = out * shape[d] + coord;
            }
        }
        out
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let s: f64 = tx.data().iter().sum();
        let prec = tx.precision();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), prec)
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel();
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn transpose2(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::shape("transpose2", format!("rank {}", tx.rank())));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = tx.data()[i * c + j];
            }
        }
        let prec = tx.precision();
        let out = Tensor::from_vec(vec![c, r], data);
        self.push("transpose2", out, Op::Transpose2(x), prec)
    }

    pub fn view(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let tx = self.value(x);
        if shape.iter().product::<usize>() != tx.numel() {
            return Err(Error::shape("view", format!("{:?} -> {:?}", tx.shape(), shape)));
        }
        let out = tx.reshaped(shape);
        let prec = tx.precision();
        self.push("view", out, Op::View(x), prec)
    }

    // ---------------- lookup ops ----------------

    /// Row lookup: `table: [V x E]`, ids -> `[n x E]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(Error::shape("embedding", format!("table rank {}", tt.rank())));
        }
        let (v, e) = (tt.shape()[0], tt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::invalid("embedding", format!("token id {id} out of range {v}")));
            }
            data.extend_from_slice(&tt.data()[id * e..(id + 1) * e]);
        }
        let prec = tt.precision();
        let out = Tensor::from_vec(vec![ids.len(), e], data);
        self.push("embedding", out, Op::Embedding(table, ids.to_vec()), prec)
    }

    /// `x: [T x V]`, idx: `[T]` -> `[T]` picking `x[t, idx[t]]`.
    pub fn gather_last(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let tx = self.value(x);
        if tx.rank() != 2 || tx.shape()[0] != idx.len() {
            return Err(Error::shape("gather_last", format!("{:?} with {} indices", tx.shape(), idx.len())));
        }
        let v = tx.shape()[1];
        let mut data = Vec::with_capacity(idx.len());
        for (t, &j) in idx.iter().enumerate() {
            if j >= v {
                return Err(Error::invalid("gather_last", format!("index {j} out of range {v}")));
            }
            data.push(tx.data()[t * v + j]);
        }
        let prec = tx.precision();
        let out = Tensor::vector(data);
        self.push("gather_last", out, Op::GatherLast(x, idx.to_vec()), prec)
    }

    // ---------------- conv / pooling / norm ----------------

    /// Direct 2-D convolution, stride 1, odd kernel, same padding.
    /// `x: [Cin x H x W]`, `w: [Cout x Cin x KH x KW]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.rank() != 3 || tw.rank() != 4 {
            return Err(Error::shape("conv2d", format!("x {:?}, w {:?}", tx.shape(), tw.shape())));
        }
        let (cin, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (cout, cin2, kh, kw) = (tw.shape()[0], tw.shape()[1], tw.shape()[2], tw.shape()[3]);
        if cin != cin2 || tb.shape() != [cout] || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("x {:?}, w {:?}, b {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let (ph, pw) = (kh / 2, kw / 2);
        let mut data = vec![0.0; cout * h * wd];
        for o in 0..cout {
            let bias = tb.data()[o];
            let out_plane = &mut data[o * h * wd..(o + 1) * h * wd];
            for v in out_plane.iter_mut() {
                *v = bias;
            }
            for i in 0..cin {
                let in_plane = &tx.data()[i * h * wd..(i + 1) * h * wd];
                for dy in 0..kh {
                    for dx in 0..kw {
                        let wv = tw.data()[((o * cin + i) * kh + dy) * kw + dx];
                        if wv == 0.0 {
                            continue;
                        }
                        let oy0 = ph.saturating_sub(dy);
                        let oy1 = (h + ph).saturating_sub(dy).min(h);
                        for oy in oy0..oy1 {
                            let iy = oy + dy - ph;
                            let ox0 = pw.saturating_sub(dx);
                            let ox1 = (wd + pw).saturating_sub(dx).min(wd);
                            let orow = oy * wd;
                            let irow = iy * wd;
                            for ox in ox0..ox1 {
                                out_plane[orow + ox] += wv * in_plane[irow + ox + dx - pw];
                            }
                        }
                    }
                }
            }
        }
        let prec = tx.precision().combine(tw.precision()).combine(tb.precision());
        let out = Tensor::from_vec(vec![cout, h, wd], data);
        self.push("conv2d", out, Op::Conv2d { x, w, b }, prec)
    }

    /// Non-overlapping average pooling. Full windows only; a trailing
    /// remainder that cannot fill a window is dropped, except that an axis
    /// shorter than the window is pooled as a single partial window.
    pub fn avg_pool2d(&mut self, x: NodeId, kh: usize, kw: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if tx.rank() != 3 || kh == 0 || kw == 0 {
            return Err(Error::shape("avg_pool2d", format!("x {:?}, k ({kh},{kw})", tx.shape())));
        }
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (oh, wh) = if h < kh { (1, h) } else { (h / kh, kh) };
        let (ow, ww) = if w < kw { (1, w) } else { (w / kw, kw) };
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let plane = &tx.data()[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for dy in 0..wh {
                        for dx in 0..ww {
                            s += plane[(oy * wh + dy) * w + ox * ww + dx];
                        }
                    }
                    data[(ch * oh + oy) * ow + ox] = s / (wh * ww) as f64;
                }
            }
        }
        let prec = tx.precision();
        let out = Tensor::from_vec(vec![c, oh, ow], data);
        self.push("avg_pool2d", out, Op::AvgPool2d { x, kh, kw }, prec)
    }

    /// Per-channel normalization over the spatial extent of each sample
    /// (deterministic in both train and eval), with learned scale/shift.
    pub fn channel_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.rank() != 3 || tg.shape() != [tx.shape()[0]] || tb.shape() != [tx.shape()[0]] {
            return Err(Error::shape(
                "channel_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
            ));
        }
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let n = (h * w) as f64;
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            let plane = &tx.data()[ch * h * w..(ch + 1) * h * w];
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            let (g, b) = (tg.data()[ch], tb.data()[ch]);
            for (i, v) in plane.iter().enumerate() {
                data[ch * h * w + i] = g * (v - mean) * inv + b;
            }
        }
        let prec = tx.precision().combine(tg.precision()).combine(tb.precision());
        let out = Tensor::from_vec(vec![c, h, w], data);
        self.push("channel_norm", out, Op::ChannelNorm { x, gamma, beta, eps }, prec)
    }

    // ---------------- composites ----------------

    /// `x @ w^T + b` for `x: [R x in]`, `w: [out x in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul_nt(x, w)?;
        self.add_bias(y, b)
    }

    /// `w . x + b` for a single vector `x: [in]`.
    pub fn linear_vec(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matvec(w, x)?;
        self.add(y, b)
    }

    /// Standard LSTM cell (gate order i, f, g, o).
    /// `w_ih: [4H x C]`, `w_hh: [4H x H]`, `b: [4H]`.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        b: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hdim = self.value(h_prev).numel();
        if self.value(c_prev).numel() != hdim || self.value(b).numel() != 4 * hdim {
            return Err(Error::shape("lstm_cell", "state/bias dims disagree"));
        }
        let zi = self.matvec(w_ih, x)?;
        let zh = self.matvec(w_hh, h_prev)?;
        let z = self.add(zi, zh)?;
        let z = self.add(z, b)?;
        let i_pre = self.narrow_last(z, 0, hdim)?;
        let f_pre = self.narrow_last(z, hdim, hdim)?;
        let g_pre = self.narrow_last(z, 2 * hdim, hdim)?;
        let o_pre = self.narrow_last(z, 3 * hdim, hdim)?;
        let i = self.sigmoid(i_pre)?;
        let f = self.sigmoid(f_pre)?;
        let g = self.tanh(g_pre)?;
        let o = self.sigmoid(o_pre)?;
        let fc = self.mul(f, c_prev)?;
        let ig = self.mul(i, g)?;
        let c = self.add(fc, ig)?;
        let tc = self.tanh(c)?;
        let h = self.mul(o, tc)?;
        Ok((h, c))
    }

    /// Mean over the listed axes (alias matching the pooling role).
    pub fn global_avg_pool(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.mean_axes(x, axes)
    }

    // ---------------- backward ----------------

    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Backward pass with a custom seed gradient on the scalar loss.
    pub fn backward_scaled(&self, loss: NodeId, seed: f64) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(self.value(loss).shape().to_vec(), vec![seed]));

        for idx in (0..self.nodes.len()).rev() {
            let gout = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn add_into(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], delta: impl Fn(&mut [f64])) {
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape.to_vec()));
        }
        delta(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, idx: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let g = gout.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                let sa = self.value(*a).shape().to_vec();
                Self::add_into(grads, *a, &sa, |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                let sb = self.value(*b).shape().to_vec();
                Self::add_into(grads, *b, &sb, |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::AddBias(m, v) => {
                let sm = self.value(*m).shape().to_vec();
                let (r, c) = (sm[0], sm[1]);
                Self::add_into(grads, *m, &sm, |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                let sv = self.value(*v).shape().to_vec();
                Self::add_into(grads, *v, &sv, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::AddScalarNode(x, s) => {
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for (a, b) in d.iter_mut().zip(g) {
                        *a += b;
                    }
                });
                let total: f64 = g.iter().sum();
                Self::add_into(grads, *s, &[1], |d| d[0] += total);
            }
            Op::AddConst(x) => {
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for (a, b) in d.iter_mut().zip(g) {
                        *a += b;
                    }
                });
            }
            Op::Sub(a, b) => {
                let sa = self.value(*a).shape().to_vec();
                Self::add_into(grads, *a, &sa, |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                let sb = self.value(*b).shape().to_vec();
                Self::add_into(grads, *b, &sb, |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                let sa = self.value(*a).shape().to_vec();
                Self::add_into(grads, *a, &sa, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                let sb = self.value(*b).shape().to_vec();
                Self::add_into(grads, *b, &sb, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Neg(x) => {
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for (a, b) in d.iter_mut().zip(g) {
                        *a -= b;
                    }
                });
            }
            Op::Scale(x, k) => {
                let k = *k;
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for (a, b) in d.iter_mut().zip(g) {
                        *a += k * b;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (va, vb) = (ta.data().to_vec(), tb.data().to_vec());
                let sa = ta.shape().to_vec();
                // dA = dC . B^T
                Self::add_into(grads, *a, &sa, |d| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * vb[p * n + j];
                            }
                            d[i * k + p] += s;
                        }
                    }
                });
                let sb = tb.shape().to_vec();
                // dB = A^T . dC
                Self::add_into(grads, *b, &sb, |d| {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += va[i * k + p] * g[i * n + j];
                            }
                            d[p * n + j] += s;
                        }
                    }
                });
            }
            Op::MatMulNT(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                let (va, vb) = (ta.data().to_vec(), tb.data().to_vec());
                let sa = ta.shape().to_vec();
                // C = A . B^T => dA = dC . B
                Self::add_into(grads, *a, &sa, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            let gg = g[i * n + j];
                            if gg == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                d[i * k + p] += gg * vb[j * k + p];
                            }
                        }
                    }
                });
                let sb = tb.shape().to_vec();
                // dB = dC^T . A
                Self::add_into(grads, *b, &sb, |d| {
                    for j in 0..n {
                        for i in 0..m {
                            let gg = g[i * n + j];
                            if gg == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                d[j * k + p] += gg * va[i * k + p];
                            }
                        }
                    }
                });
            }
            Op::MatVec(m, v) => {
                let tm = self.value(*m);
                let tv = self.value(*v);
                let (r, c) = (tm.shape()[0], tm.shape()[1]);
                let (vm, vv) = (tm.data().to_vec(), tv.data().to_vec());
                let sm = tm.shape().to_vec();
                Self::add_into(grads, *m, &sm, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[i] * vv[j];
                        }
                    }
                });
                let sv = tv.shape().to_vec();
                Self::add_into(grads, *v, &sv, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[j] += vm[i * c + j] * g[i];
                        }
                    }
                });
            }
            Op::VecMat(v, m) => {
                let tv = self.value(*v);
                let tm = self.value(*m);
                let (r, c) = (tm.shape()[0], tm.shape()[1]);
                let (vv, vm) = (tv.data().to_vec(), tm.data().to_vec());
                let sv = tv.shape().to_vec();
                Self::add_into(grads, *v, &sv, |d| {
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += vm[i * c + j] * g[j];
                        }
                        d[i] += s;
                    }
                });
                let sm = tm.shape().to_vec();
                Self::add_into(grads, *m, &sm, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += vv[i] * g[j];
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data().to_vec();
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for i in 0..d.len() {
                        if vx[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data().to_vec();
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data().to_vec();
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Exp(x) => {
                let y = node.value.data().to_vec();
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i];
                    }
                });
            }
            Op::Ln(x) => {
                let vx = self.value(*x).data().to_vec();
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / vx[i];
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let vx = self.value(*x).data().to_vec();
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for i in 0..d.len() {
                        if vx[i] > lo && vx[i] < hi {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::SoftmaxAxis(x, axis) => {
                let y = node.value.clone();
                let (outer, len, inner) = axis_geometry(y.shape(), *axis);
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let mut dot = 0.0;
                            for k in 0..len {
                                dot += g[at(k)] * y.data()[at(k)];
                            }
                            for k in 0..len {
                                d[at(k)] += y.data()[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmaxAxis(x, axis) => {
                let y = node.value.clone();
                let (outer, len, inner) = axis_geometry(y.shape(), *axis);
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let mut gsum = 0.0;
                            for k in 0..len {
                                gsum += g[at(k)];
                            }
                            for k in 0..len {
                                let sm = y.data()[at(k)].exp();
                                d[at(k)] += g[at(k)] - sm * gsum;
                            }
                        }
                    }
                });
            }
            Op::Glu(x) => {
                let tx = self.value(*x);
                let last = *tx.shape().last().unwrap();
                let dcols = last / 2;
                let rows = tx.numel() / last;
                let vx = tx.data().to_vec();
                let sx = tx.shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for r in 0..rows {
                        for j in 0..dcols {
                            let a = vx[r * last + j];
                            let s = sigmoid(vx[r * last + dcols + j]);
                            let gg = g[r * dcols + j];
                            d[r * last + j] += gg * s;
                            d[r * last + dcols + j] += gg * a * s * (1.0 - s);
                        }
                    }
                });
            }
            Op::ConcatVec(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let sp = self.value(p).shape().to_vec();
                    let seg = g[offset..offset + n].to_vec();
                    Self::add_into(grads, p, &sp, |d| {
                        for i in 0..n {
                            d[i] += seg[i];
                        }
                    });
                    offset += n;
                }
            }
            Op::StackRows(rows) => {
                let v = self.value(rows[0]).numel();
                for (r, &row) in rows.iter().enumerate() {
                    let sr = self.value(row).shape().to_vec();
                    let seg = g[r * v..(r + 1) * v].to_vec();
                    Self::add_into(grads, row, &sr, |d| {
                        for i in 0..v {
                            d[i] += seg[i];
                        }
                    });
                }
            }
            Op::NarrowLast(x, start, len) => {
                let tx = self.value(*x);
                let last = *tx.shape().last().unwrap();
                let rows = tx.numel() / last;
                let (start, len) = (*start, *len);
                let sx = tx.shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for r in 0..rows {
                        for j in 0..len {
                            d[r * last + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            Op::MeanAxes(x, axes) => {
                let tx = self.value(*x);
                let shape = tx.shape().to_vec();
                let mut reduce = vec![false; shape.len()];
                for &a in axes {
                    reduce[a] = true;
                }
                let count: usize = shape
                    .iter()
                    .enumerate()
                    .filter(|(d, _)| reduce[*d])
                    .map(|(_, &s)| s)
                    .product();
                let inv = 1.0 / count as f64;
                Self::add_into(grads, *x, &shape, |d| {
                    for flat in 0..d.len() {
                        d[flat] += g[Self::reduced_index(&shape, &reduce, flat)] * inv;
                    }
                });
            }
            Op::SumAll(x) => {
                let sx = self.value(*x).shape().to_vec();
                let gv = g[0];
                Self::add_into(grads, *x, &sx, |d| {
                    for v in d.iter_mut() {
                        *v += gv;
                    }
                });
            }
            Op::Transpose2(x) => {
                let tx = self.value(*x);
                let (r, c) = (tx.shape()[0], tx.shape()[1]);
                let sx = tx.shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::View(x) => {
                let sx = self.value(*x).shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for (a, b) in d.iter_mut().zip(g) {
                        *a += b;
                    }
                });
            }
            Op::Embedding(table, ids) => {
                let e = self.value(*table).shape()[1];
                let st = self.value(*table).shape().to_vec();
                let ids = ids.clone();
                Self::add_into(grads, *table, &st, |d| {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..e {
                            d[id * e + j] += g[row * e + j];
                        }
                    }
                });
            }
            Op::GatherLast(x, idx) => {
                let v = self.value(*x).shape()[1];
                let sx = self.value(*x).shape().to_vec();
                let idx = idx.clone();
                Self::add_into(grads, *x, &sx, |d| {
                    for (t, &j) in idx.iter().enumerate() {
                        d[t * v + j] += g[t];
                    }
                });
            }
            Op::Conv2d { x, w, b } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let (cin, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (cout, kh, kw) = (tw.shape()[0], tw.shape()[2], tw.shape()[3]);
                let (ph, pw) = (kh / 2, kw / 2);
                let vx = tx.data().to_vec();
                let vw = tw.data().to_vec();
                let sx = tx.shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for o in 0..cout {
                        let gplane = &g[o * h * wd..(o + 1) * h * wd];
                        for i in 0..cin {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let wv = vw[((o * cin + i) * kh + dy) * kw + dx];
                                    if wv == 0.0 {
                                        continue;
                                    }
                                    let oy0 = ph.saturating_sub(dy);
                                    let oy1 = (h + ph).saturating_sub(dy).min(h);
                                    for oy in oy0..oy1 {
                                        let iy = oy + dy - ph;
                                        let ox0 = pw.saturating_sub(dx);
                                        let ox1 = (wd + pw).saturating_sub(dx).min(wd);
                                        for ox in ox0..ox1 {
                                            d[(i * h + iy) * wd + ox + dx - pw] += wv * gplane[oy * wd + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                let sw = tw.shape().to_vec();
                Self::add_into(grads, *w, &sw, |d| {
                    for o in 0..cout {
                        let gplane = &g[o * h * wd..(o + 1) * h * wd];
                        for i in 0..cin {
                            let iplane = &vx[i * h * wd..(i + 1) * h * wd];
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let mut s = 0.0;
                                    let oy0 = ph.saturating_sub(dy);
                                    let oy1 = (h + ph).saturating_sub(dy).min(h);
                                    for oy in oy0..oy1 {
                                        let iy = oy + dy - ph;
                                        let ox0 = pw.saturating_sub(dx);
                                        let ox1 = (wd + pw).saturating_sub(dx).min(wd);
                                        for ox in ox0..ox1 {
                                            s += gplane[oy * wd + ox] * iplane[iy * wd + ox + dx - pw];
                                        }
                                    }
                                    d[((o * cin + i) * kh + dy) * kw + dx] += s;
                                }
                            }
                        }
                    }
                });
                let sb = self.value(*b).shape().to_vec();
                Self::add_into(grads, *b, &sb, |d| {
                    for o in 0..cout {
                        d[o] += g[o * h * wd..(o + 1) * h * wd].iter().sum::<f64>();
                    }
                });
            }
            Op::AvgPool2d { x, kh, kw } => {
                let tx = self.value(*x);
                let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (oh, wh) = if h < *kh { (1, h) } else { (h / kh, *kh) };
                let (ow, ww) = if w < *kw { (1, w) } else { (w / kw, *kw) };
                let inv = 1.0 / (wh * ww) as f64;
                let sx = tx.shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(ch * oh + oy) * ow + ox] * inv;
                                for dy in 0..wh {
                                    for dx in 0..ww {
                                        d[(ch * h + oy * wh + dy) * w + ox * ww + dx] += gv;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::ChannelNorm { x, gamma, beta, eps } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let n = (h * w) as f64;
                let vx = tx.data().to_vec();
                let vg = tg.data().to_vec();
                let eps = *eps;
                // recompute per-channel stats
                let mut stats = Vec::with_capacity(c);
                for ch in 0..c {
                    let plane = &vx[ch * h * w..(ch + 1) * h * w];
                    let mean = plane.iter().sum::<f64>() / n;
                    let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    stats.push((mean, 1.0 / (var + eps).sqrt()));
                }
                let sx = tx.shape().to_vec();
                Self::add_into(grads, *x, &sx, |d| {
                    for ch in 0..c {
                        let (mean, inv) = stats[ch];
                        let plane = &vx[ch * h * w..(ch + 1) * h * w];
                        let gpl = &g[ch * h * w..(ch + 1) * h * w];
                        let gma = vg[ch];
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for i in 0..plane.len() {
                            let xh = (plane[i] - mean) * inv;
                            let gi = gpl[i] * gma;
                            mean_g += gi;
                            mean_gx += gi * xh;
                        }
                        mean_g /= n;
                        mean_gx /= n;
                        for i in 0..plane.len() {
                            let xh = (plane[i] - mean) * inv;
                            let gi = gpl[i] * gma;
                            d[ch * h * w + i] += inv * (gi - mean_g - xh * mean_gx);
                        }
                    }
                });
                let sg = tg.shape().to_vec();
                Self::add_into(grads, *gamma, &sg, |d| {
                    for ch in 0..c {
                        let (mean, inv) = stats[ch];
                        let plane = &vx[ch * h * w..(ch + 1) * h * w];
                        let gpl = &g[ch * h * w..(ch + 1) * h * w];
                        let mut s = 0.0;
                        for i in 0..plane.len() {
                            s += gpl[i] * (plane[i] - mean) * inv;
                        }
                        d[ch] += s;
                    }
                });
                let sb = self.value(*beta).shape().to_vec();
                Self::add_into(grads, *beta, &sb, |d| {
                    for ch in 0..c {
                        d[ch] += g[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>();
                    }
                });
            }
        }
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else
/// `1/(1-rate)`. Applying the mask is a plain elementwise multiply, so a
/// captured mask freezes the dropout pattern for gradient checking.
pub fn sample_dropout_mask(rng: &mut Rng, shape: &[usize], rate: f64) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate}");
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
    Tensor::from_vec(shape.to_vec(), data)
}
