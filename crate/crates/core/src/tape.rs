//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every operation appends one node holding its forward value, the op kind
//! and its input handles. Because inputs must already exist when a node is
//! recorded, append order is a topological order and [`Tape::backward`] is a
//! single reverse sweep.
//!
//! ```
//! use structvae_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Exp,
    Log,
    Relu,
    Sigmoid,
    Softplus,
    LogSoftmax,
    AddBias,
    SumRows,
    Sum,
    Scale,
    ConcatCols,
    SliceCols,
    Reshape,
}

impl OpKind {
    /// Every op with a backward rule.
    pub const DIFFERENTIABLE: [OpKind; 17] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Softplus,
        OpKind::LogSoftmax,
        OpKind::AddBias,
        OpKind::SumRows,
        OpKind::Sum,
        OpKind::Scale,
        OpKind::ConcatCols,
        OpKind::SliceCols,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::AddBias => "add_bias",
            OpKind::SumRows => "sum_rows",
            OpKind::Sum => "sum",
            OpKind::Scale => "scale",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceCols => "slice_cols",
            OpKind::Reshape => "reshape",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    LogSoftmax(Var),
    AddBias(Var, Var),
    SumRows(Var),
    Sum(Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    SliceCols { input: Var, start: usize },
    Reshape(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softplus(_) => OpKind::Softplus,
            Op::LogSoftmax(_) => OpKind::LogSoftmax,
            Op::AddBias(..) => OpKind::AddBias,
            Op::SumRows(_) => OpKind::SumRows,
            Op::Sum(_) => OpKind::Sum,
            Op::Scale(..) => OpKind::Scale,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::Reshape(_) => OpKind::Reshape,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients of a scalar loss with respect to the tracked leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a tracked leaf, `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tracked input; [`Tape::backward`] reports a gradient for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Multiplies every input gradient produced by `kind`'s backward rule by
    /// 1.5. Only meant for negative-control runs of the gradient checks.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.shape(a).clone(),
            rhs: self.shape(b).clone(),
        }
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.shape(v).matrix().ok_or_else(|| Error::Dimension {
            op,
            lhs: self.shape(v).clone(),
            rhs: Shape::new([0, 0]),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .map_err(|_| self.dim_err("matmul", a, b))?;
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Output shape for an elementwise binary op: equal shapes, or one side a
    /// single element broadcast over the other.
    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || sb.numel() == 1 {
            Ok(sa.clone())
        } else if sa.numel() == 1 {
            Ok(sb.clone())
        } else {
            Err(self.dim_err(op, a, b))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, shape: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n = shape.numel();
        let data = (0..n)
            .map(|i| {
                let x = if da.len() == 1 { da[0] } else { da[i] };
                let y = if db.len() == 1 { db[0] } else { db[i] };
                f(x, y)
            })
            .collect();
        Tensor::from_parts(shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("add", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x + y);
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("sub", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x - y);
        Ok(self.push_op(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("mul", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x * y);
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(libm::exp);
        if let Some(i) = out.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(
                "exp",
                format!("overflow at element {i} (input {})", self.value(a).data()[i]),
            ));
        }
        Ok(self.push_op(out, Op::Exp(a), &[a]))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(i) = self.value(a).data().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::domain(
                "log",
                format!("non-positive entry {} at element {i}", self.value(a).data()[i]),
            ));
        }
        let out = self.value(a).map(libm::log);
        Ok(self.push_op(out, Op::Log(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_op(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push_op(out, Op::Softplus(a), &[a])
    }

    /// Row-wise log-softmax of an `n×K` matrix, stabilised by subtracting the
    /// row maximum.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.matrix("log_softmax", a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = &x[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
            for j in 0..k {
                out[i * k + j] = row[j] - lse;
            }
        }
        let out = Tensor::from_parts(Shape::new([n, k]), out);
        Ok(self.push_op(out, Op::LogSoftmax(a), &[a]))
    }

    /// `a[n×m] + bias[m]`, the bias repeated on every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.matrix("add_bias", a)?;
        if self.shape(bias).dims() != [m] {
            return Err(self.dim_err("add_bias", a, bias));
        }
        let (x, b) = (self.value(a).data(), self.value(bias).data());
        let mut out = x.to_vec();
        for row in out.chunks_exact_mut(m) {
            row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
        }
        let out = Tensor::from_parts(Shape::new([n, m]), out);
        Ok(self.push_op(out, Op::AddBias(a, bias), &[a, bias]))
    }

    /// Sums each row of an `n×m` matrix into a length-`n` vector.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix("sum_rows", a)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .chunks_exact(m)
            .map(|r| r.iter().sum())
            .collect();
        let out = Tensor::from_parts(Shape::new([n]), out);
        Ok(self.push_op(out, Op::SumRows(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push_op(out, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = self.matrix("concat_cols", a)?;
        let (n2, q) = self.matrix("concat_cols", b)?;
        if n != n2 {
            return Err(self.dim_err("concat_cols", a, b));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&x[i * p..(i + 1) * p]);
            out.extend_from_slice(&y[i * q..(i + 1) * q]);
        }
        let out = Tensor::from_parts(Shape::new([n, p + q]), out);
        Ok(self.push_op(out, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (n, m) = self.matrix("slice_cols", a)?;
        if width == 0 || start + width > m {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: self.shape(a).clone(),
                rhs: Shape::new([start, width]),
            });
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            out.extend_from_slice(&x[i * m + start..i * m + start + width]);
        }
        let out = Tensor::from_parts(Shape::new([n, width]), out);
        Ok(self.push_op(out, Op::SliceCols { input: a, start }, &[a]))
    }

    /// Column `j` of a matrix as a length-`n` vector.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let c = self.slice_cols(a, j, 1)?;
        let n = self.shape(c).dims()[0];
        self.reshape(c, [n])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Shape>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push_op(out, Op::Reshape(a), &[a]))
    }

    /// Gradients of the single-element `loss` with respect to every tracked
    /// leaf. Untouched leaves get zero tensors. The tape is left intact, so
    /// replaying it yields identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let fault = if self.fault == Some(node.op.kind()) { 1.5 } else { 1.0 };
            self.backward_node(node, &g, fault, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(g) => Tensor::from_parts(node.value.shape().clone(), g),
                    None => Tensor::zeros(node.value.shape().clone()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], fault: f64, grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, mut contribution: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            if fault != 1.0 {
                contribution.iter_mut().for_each(|x| *x *= fault);
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contribution),
            }
        };
        let out = node.value.data();

        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(a).matrix().unwrap();
                let n = self.shape(b).dims()[1];
                if self.requires_grad(a) {
                    // dA = G·Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::row_major(g, n),
                        MatRef::transposed(self.value(b).data(), n),
                        &mut ga,
                        0.0,
                    );
                    send(a, ga);
                }
                if self.requires_grad(b) {
                    // dB = Aᵀ·G
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::transposed(self.value(a).data(), k),
                        MatRef::row_major(g, n),
                        &mut gb,
                        0.0,
                    );
                    send(b, gb);
                }
            }
            Op::Add(a, b) => {
                send(a, self.reduce_broadcast(a, g.to_vec()));
                send(b, self.reduce_broadcast(b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                send(a, self.reduce_broadcast(a, g.to_vec()));
                send(b, self.reduce_broadcast(b, g.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(a).data(), self.value(b).data());
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                if self.requires_grad(a) {
                    let ga = g.iter().enumerate().map(|(i, &gi)| gi * pick(db, i)).collect();
                    send(a, self.reduce_broadcast(a, ga));
                }
                if self.requires_grad(b) {
                    let gb = g.iter().enumerate().map(|(i, &gi)| gi * pick(da, i)).collect();
                    send(b, self.reduce_broadcast(b, gb));
                }
            }
            Op::Exp(a) => send(a, g.iter().zip(out).map(|(gi, y)| gi * y).collect()),
            Op::Log(a) => {
                let x = self.value(a).data();
                send(a, g.iter().zip(x).map(|(gi, xi)| gi / xi).collect());
            }
            Op::Relu(a) => {
                let x = self.value(a).data();
                send(
                    a,
                    g.iter()
                        .zip(x)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect(),
                );
            }
            Op::Sigmoid(a) => send(a, g.iter().zip(out).map(|(gi, s)| gi * s * (1.0 - s)).collect()),
            Op::Softplus(a) => {
                let x = self.value(a).data();
                send(a, g.iter().zip(x).map(|(gi, &xi)| gi * sigmoid(xi)).collect());
            }
            Op::LogSoftmax(a) => {
                let k = self.shape(a).dims()[1];
                let mut ga = vec![0.0; g.len()];
                for ((grow, orow), garow) in g
                    .chunks_exact(k)
                    .zip(out.chunks_exact(k))
                    .zip(ga.chunks_exact_mut(k))
                {
                    let total: f64 = grow.iter().sum();
                    for j in 0..k {
                        garow[j] = grow[j] - libm::exp(orow[j]) * total;
                    }
                }
                send(a, ga);
            }
            Op::AddBias(a, bias) => {
                let m = self.shape(bias).numel();
                if self.requires_grad(bias) {
                    let mut gb = vec![0.0; m];
                    for row in g.chunks_exact(m) {
                        gb.iter_mut().zip(row).for_each(|(b, r)| *b += r);
                    }
                    send(bias, gb);
                }
                send(a, g.to_vec());
            }
            Op::SumRows(a) => {
                let m = self.shape(a).dims()[1];
                send(a, g.iter().flat_map(|&gi| core::iter::repeat_n(gi, m)).collect());
            }
            Op::Sum(a) => send(a, vec![g[0]; self.value(a).numel()]),
            Op::Scale(a, c) => send(a, g.iter().map(|gi| c * gi).collect()),
            Op::ConcatCols(a, b) => {
                let p = self.shape(a).dims()[1];
                let q = self.shape(b).dims()[1];
                let mut ga = Vec::with_capacity(g.len() / (p + q) * p);
                let mut gb = Vec::with_capacity(g.len() / (p + q) * q);
                for row in g.chunks_exact(p + q) {
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                send(a, ga);
                send(b, gb);
            }
            Op::SliceCols { input, start } => {
                let m = self.shape(input).dims()[1];
                let width = node.value.dims()[1];
                let mut ga = vec![0.0; self.value(input).numel()];
                for (grow, arow) in g.chunks_exact(width).zip(ga.chunks_exact_mut(m)) {
                    arow[start..start + width].copy_from_slice(grow);
                }
                send(input, ga);
            }
            Op::Reshape(a) => send(a, g.to_vec()),
        }
    }

    /// Folds a gradient of the broadcast output shape back onto `v`.
    fn reduce_broadcast(&self, v: Var, g: Vec<f64>) -> Vec<f64> {
        if self.value(v).numel() == 1 && g.len() != 1 {
            vec![g.iter().sum()]
        } else {
            g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_forward() {
        let mut t = Tape::new();
        let x = t.constant(vec_t(&[-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.value(s).item(), 0.5);
    }

    #[test]
    fn log_softmax_symmetric_and_stable() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[&[0.0, 0.0], &[1000.0, 0.0]]).unwrap());
        let l = t.log_softmax(a).unwrap();
        let v = t.value(l).data();
        assert!((v[0] - libm::log(0.5)).abs() < 1e-15);
        assert!((v[1] - libm::log(0.5)).abs() < 1e-15);
        assert!(v[2].abs() < 1e-12);
        assert!((v[3] + 1000.0).abs() < 1e-9);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.constant(vec_t(&[1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn exp_overflow_is_a_domain_error() {
        let mut t = Tape::new();
        let x = t.constant(vec_t(&[1000.0]));
        assert!(t.exp(x).is_err());
    }

    #[test]
    fn mismatched_elementwise_shapes_fail() {
        let mut t = Tape::new();
        let a = t.constant(vec_t(&[1.0, 2.0]));
        let b = t.constant(vec_t(&[1.0, 2.0, 3.0]));
        assert!(matches!(t.add(a, b), Err(Error::Dimension { op: "add", .. })));
        let c = t.constant(Tensor::zeros([2, 1]));
        assert!(t.mul(a, c).is_err());
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut t = Tape::new();
        let s = t.leaf(Tensor::scalar(2.0));
        let x = t.leaf(vec_t(&[1.0, 2.0, 3.0]));
        let y = t.mul(s, x).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(s).unwrap().item(), 6.0);
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn identity_loss_has_unit_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let g = t.backward(x).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec_t(&[1.0, 2.0, 3.0]));
        let sq = t.mul(x, x).unwrap();
        let l = t.sum(sq);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn untouched_leaf_gets_zeros_and_constants_none() {
        let mut t = Tape::new();
        let x = t.leaf(vec_t(&[1.0, 2.0]));
        let unused = t.leaf(Tensor::zeros([2, 3]));
        let c = t.constant(vec_t(&[5.0, 5.0]));
        let y = t.mul(x, c).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Tensor::zeros([2, 3]));
        assert!(g.get(c).is_none());
        assert!(g.get(y).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vec_t(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap());
        let left = t.slice_cols(a, 0, 1).unwrap();
        let right = t.slice_cols(a, 1, 2).unwrap();
        let back = t.concat_cols(left, right).unwrap();
        assert_eq!(t.value(back), t.value(a));
        assert!(t.slice_cols(a, 2, 2).is_err());
        let col = t.column(a, 2).unwrap();
        assert_eq!(t.value(col).data(), &[3.0, 6.0]);
    }

    #[test]
    fn op_names_are_unique() {
        let mut names: Vec<_> = OpKind::DIFFERENTIABLE.iter().map(|k| k.name()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), OpKind::DIFFERENTIABLE.len());
    }
}
