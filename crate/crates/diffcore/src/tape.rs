//! Computation record for reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass in
//! execution order. Because a node can only reference nodes created before
//! it, the record is topologically sorted by construction and the backward
//! pass is a single reverse sweep. Gradients for nodes used more than once
//! accumulate additively.
//!
//! ```
//! use diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap().with_requires_grad(true));
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().values(), &[2.0, 4.0, 6.0]);
//! ```

use crate::error::{DiffError, Result};
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary elementwise op is broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// Same shape.
    None,
    /// `(1, c)` against `(r, c)`.
    Row,
    /// `(r, 1)` against `(r, c)`.
    Col,
    /// Single value.
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    LogSoftmax(Var),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// The ordered record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` requires one.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or an error if the variable is not tracked.
    pub fn wrt(&self, var: Var) -> Result<&Tensor> {
        self.get(var).ok_or(DiffError::UnknownVar(var.0))
    }

    /// Gradients for several variables, in order.
    pub fn collect(&self, vars: &[Var]) -> Result<Vec<Tensor>> {
        vars.iter().map(|&v| self.wrt(v).cloned()).collect()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::None);
    }
    if b.is_scalar() {
        return Ok(Broadcast::Scalar);
    }
    if let (Ok((r, c)), Ok((br, bc))) = (a.dims2(op), b.dims2(op)) {
        if br == 1 && bc == c {
            return Ok(Broadcast::Row);
        }
        if bc == 1 && br == r {
            return Ok(Broadcast::Col);
        }
    }
    Err(mismatch(op, a, b))
}

/// Index into the right operand for flat position `i` of the left operand.
#[inline]
fn rhs_index(kind: Broadcast, i: usize, cols: usize) -> usize {
    match kind {
        Broadcast::None => i,
        Broadcast::Row => i % cols,
        Broadcast::Col => i / cols,
        Broadcast::Scalar => 0,
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Registers an input; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.push(Op::Leaf, tensor, needs)
    }

    /// Registers a trainable parameter (always differentiated).
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.push(Op::Leaf, tensor.clone().with_requires_grad(true), true)
    }

    /// Registers a constant (never differentiated).
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(Op::Leaf, tensor.with_requires_grad(false), false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(av.values(), bv.values(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, needs))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, mul: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = broadcast_kind(op, av, bv)?;
        let cols = av.cols();
        let rhs = bv.values();
        let values: Vec<f64> = av
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = rhs[rhs_index(kind, i, cols)];
                if mul {
                    x * y
                } else {
                    x + y
                }
            })
            .collect();
        let value = Tensor::new(av.shape().to_vec(), values)?;
        let needs = self.needs(a) || self.needs(b);
        let node = if mul { Op::Mul(a, b, kind) } else { Op::Add(a, b, kind) };
        Ok(self.push(node, value, needs))
    }

    /// Elementwise sum; `b` may broadcast as a row, column, or scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, false)
    }

    /// Elementwise product; `b` may broadcast as a row, column, or scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, true)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(op, value, needs)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// Addition of a constant.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Sum of all elements, as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let needs = self.needs(a);
        self.push(Op::Sum(a), Tensor::scalar(s), needs)
    }

    /// Mean of all elements, as a `1×1` tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.len() as f64;
        let needs = self.needs(a);
        self.push(Op::Mean(a), Tensor::scalar(m), needs)
    }

    /// Sum of a matrix along `axis` (0 collapses rows, 1 collapses columns).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        let (r, c) = v.dims2("sum_axis")?;
        let value = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, x) in out.iter_mut().zip(v.row(i)) {
                        *o += x;
                    }
                }
                Tensor::matrix(1, c, out)?
            }
            1 => Tensor::matrix(r, 1, (0..r).map(|i| v.row(i).iter().sum()).collect())?,
            _ => {
                return Err(DiffError::ShapeMismatch {
                    op: "sum_axis",
                    left: v.shape().to_vec(),
                    right: vec![axis],
                })
            }
        };
        let needs = self.needs(a);
        Ok(self.push(Op::SumAxis(a, axis), value, needs))
    }

    /// Row-wise `log softmax`, computed with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (r, c) = v.dims2("log_softmax")?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = v.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        let value = Tensor::matrix(r, c, out)?;
        let needs = self.needs(a);
        Ok(self.push(Op::LogSoftmax(a), value, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape(a), value, needs))
    }

    /// Runs the backward pass from a scalar `loss`.
    ///
    /// A record can be differentiated once; a second call is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(DiffError::BackwardAlreadyRun);
        }
        if loss.0 >= self.nodes.len() {
            return Err(DiffError::UnknownVar(loss.0));
        }
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(DiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, node.needs_grad) {
                (Some(g), true) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape")),
                (None, true) => Some(Tensor::zeros(node.value.shape().to_vec())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.values();
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.needs(a) {
                    let ga = slot(grads, a, m * k);
                    matmul_nt_acc(g, bv.values(), ga, m, k, n);
                }
                if self.needs(b) {
                    let gb = slot(grads, b, k * n);
                    matmul_tn_acc(av.values(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b, kind) => {
                let cols = self.value(a).cols();
                if self.needs(a) {
                    let ga = slot(grads, a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if self.needs(b) {
                    let len = self.value(b).len();
                    let gb = slot(grads, b, len);
                    for (i, gi) in g.iter().enumerate() {
                        gb[rhs_index(kind, i, cols)] += gi;
                    }
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (self.value(a), self.value(b));
                let cols = av.cols();
                if self.needs(a) {
                    let bvals = bv.values();
                    let ga = slot(grads, a, g.len());
                    for (i, (x, gi)) in ga.iter_mut().zip(g).enumerate() {
                        *x += gi * bvals[rhs_index(kind, i, cols)];
                    }
                }
                if self.needs(b) {
                    let avals = av.values();
                    let gb = slot(grads, b, bv.len());
                    for (i, gi) in g.iter().enumerate() {
                        gb[rhs_index(kind, i, cols)] += gi * avals[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }
            Op::Shift(a) | Op::Reshape(a) => {
                let ga = slot(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            Op::Tanh(a) => {
                let ga = slot(grads, a, g.len());
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(out) {
                    *x += gi * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let ga = slot(grads, a, g.len());
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(out) {
                    if *y > 0.0 {
                        *x += gi;
                    }
                }
            }
            Op::Exp(a) => {
                let ga = slot(grads, a, g.len());
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(out) {
                    *x += gi * y;
                }
            }
            Op::Log(a) => {
                let input = self.value(a).values();
                let ga = slot(grads, a, g.len());
                for ((x, gi), u) in ga.iter_mut().zip(g).zip(input) {
                    *x += gi / u;
                }
            }
            Op::Square(a) => {
                let input = self.value(a).values();
                let ga = slot(grads, a, g.len());
                for ((x, gi), u) in ga.iter_mut().zip(g).zip(input) {
                    *x += 2.0 * gi * u;
                }
            }
            Op::Clamp(a, lo, hi) => {
                let input = self.value(a).values();
                let ga = slot(grads, a, g.len());
                for ((x, gi), u) in ga.iter_mut().zip(g).zip(input) {
                    if *u >= lo && *u <= hi {
                        *x += gi;
                    }
                }
            }
            Op::Sum(a) => {
                let len = self.value(a).len();
                let ga = slot(grads, a, len);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean(a) => {
                let len = self.value(a).len();
                let share = g[0] / len as f64;
                let ga = slot(grads, a, len);
                ga.iter_mut().for_each(|x| *x += share);
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = (self.value(a).rows(), self.value(a).cols());
                let ga = slot(grads, a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += if axis == 0 { g[j] } else { g[i] };
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let ga = slot(grads, a, r * c);
                for i in 0..r {
                    let gs: f64 = g[i * c..(i + 1) * c].iter().sum();
                    for j in 0..c {
                        let k = i * c + j;
                        ga[k] += g[k] - out[k].exp() * gs;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}
