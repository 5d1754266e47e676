//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in evaluation order. Because a node can
//! only reference nodes created before it, the recording order is already a
//! topological order and [`Tape::backward`] walks it once in reverse.
//!
//! Conventions at non-smooth points:
//! - `sign` has zero gradient everywhere.
//! - `abs` uses `sign(x)` as its subgradient, which is 0 at `x = 0`.
//! - `min_const`/`max_const` pass the gradient through wherever the tensor
//!   branch was selected, including exact ties with the constant.
//!
//! Binary elementwise ops accept operands of equal shape, or an operand that
//! is a `1 × 1` scalar or a `1 × cols` row, which is broadcast across the other.

use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Abs,
    Sign,
    Negate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClampOp {
    /// `min(x, c)`: caps values from above.
    MinConst,
    /// `max(x, c)`: floors values from below.
    MaxConst,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Clamp(ClampOp, Var, f64),
    RowProduct(Var),
    Mse(Var, Var),
    Sum(Var),
    Scale(Var, f64),
    Transpose(Var),
    SelectRow(Var, usize),
    ConcatCols(Vec<Var>),
    TileCols(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-1`, `0` or `+1`; unlike `f64::signum`, zero maps to zero.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// How an operand maps onto the output of a broadcasting op.
#[derive(Clone, Copy)]
enum Bcast {
    Full,
    Scalar,
    Row,
}

impl Bcast {
    fn of(shape: (usize, usize), out: (usize, usize)) -> Option<Self> {
        if shape == out {
            Some(Bcast::Full)
        } else if shape == (1, 1) {
            Some(Bcast::Scalar)
        } else if shape.0 == 1 && shape.1 == out.1 {
            Some(Bcast::Row)
        } else {
            None
        }
    }

    /// Row `r` of an operand prepared by [`expand_row`].
    #[inline]
    fn row(self, data: &[f64], r: usize, cols: usize) -> &[f64] {
        match self {
            Bcast::Full => &data[r * cols..(r + 1) * cols],
            Bcast::Scalar | Bcast::Row => data,
        }
    }
}

/// Scalars are spread to a full row so every operand can be read row by row.
fn expand_row(data: &[f64], b: Bcast, cols: usize) -> std::borrow::Cow<'_, [f64]> {
    match b {
        Bcast::Scalar => std::borrow::Cow::Owned(vec![data[0]; cols]),
        _ => std::borrow::Cow::Borrowed(data),
    }
}

/// Sums per-row output gradients back onto an operand of `shape`.
fn reduce_to(
    shape: (usize, usize),
    b: Bcast,
    rows: usize,
    cols: usize,
    mut row_grad: impl FnMut(usize) -> Vec<f64>,
) -> Tensor {
    match b {
        Bcast::Full => {
            let mut d = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                d.extend(row_grad(r));
            }
            Tensor::from_parts(rows, cols, d)
        }
        Bcast::Row | Bcast::Scalar => {
            let mut acc = vec![0.0; cols];
            for r in 0..rows {
                for (a, v) in acc.iter_mut().zip(row_grad(r)) {
                    *a += v;
                }
            }
            if matches!(b, Bcast::Scalar) {
                Tensor::from_parts(1, 1, vec![acc.iter().sum()])
            } else {
                Tensor::from_parts(shape.0, shape.1, acc)
            }
        }
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<((usize, usize), Bcast, Bcast)> {
    let out = (a.0.max(b.0), a.1.max(b.1));
    Some((out, Bcast::of(a, out)?, Bcast::of(b, out)?))
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss or was recorded as a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Records operations for one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { nodes: Vec::with_capacity(n) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input such as a data batch.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return config(format!(
                "matmul dimension mismatch: {}x{} · {}x{}",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            ));
        }
        let out = av.matmul(bv);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let Some(((rows, cols), ba, bb)) = broadcast_shape(av.shape(), bv.shape()) else {
            return config(format!(
                "incompatible shapes for {op:?}: {:?} and {:?}",
                av.shape(),
                bv.shape()
            ));
        };
        let (ad, bd) = (expand_row(av.data(), ba, cols), expand_row(bv.data(), bb, cols));
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (x, y) = (ba.row(&ad, r, cols), bb.row(&bd, r, cols));
            match op {
                BinaryOp::Add => out.extend(x.iter().zip(y).map(|(p, q)| p + q)),
                BinaryOp::Sub => out.extend(x.iter().zip(y).map(|(p, q)| p - q)),
                BinaryOp::Mul => out.extend(x.iter().zip(y).map(|(p, q)| p * q)),
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(rows, cols, out), Op::Binary(op, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let av = self.value(a);
        if op == UnaryOp::Log {
            if let Some(bad) = av.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::NumericDomain(format!("log of non-positive value {bad}")));
            }
        }
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Log => f64::ln,
            UnaryOp::Abs => f64::abs,
            UnaryOp::Sign => sign,
            UnaryOp::Negate => |v| -v,
        };
        let out = av.map(f);
        let ng = self.needs(a) && op != UnaryOp::Sign;
        Ok(self.push(out, Op::Unary(op, a), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Abs, a).expect("abs is total")
    }

    pub fn sign(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sign, a).expect("sign is total")
    }

    pub fn negate(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Negate, a).expect("negate is total")
    }

    /// Entrywise `min(x, c)` or `max(x, c)`.
    pub fn clamp(&mut self, op: ClampOp, a: Var, c: f64) -> Var {
        let out = match op {
            ClampOp::MinConst => self.value(a).map(|v| if v <= c { v } else { c }),
            ClampOp::MaxConst => self.value(a).map(|v| if v >= c { v } else { c }),
        };
        let ng = self.needs(a);
        self.push(out, Op::Clamp(op, a, c), ng)
    }

    pub fn min_const(&mut self, a: Var, c: f64) -> Var {
        self.clamp(ClampOp::MinConst, a, c)
    }

    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        self.clamp(ClampOp::MaxConst, a, c)
    }

    /// Product across the columns of each row: `m × n → m × 1`.
    pub fn row_product(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out: Vec<f64> = (0..av.rows()).map(|r| av.row_slice(r).iter().product()).collect();
        let ng = self.needs(a);
        self.push(Tensor::from_parts(av.rows(), 1, out), Op::RowProduct(a), ng)
    }

    /// Mean squared error over all entries, as a `1 × 1` node.
    pub fn mse_loss(&mut self, pred: Var, real: Var) -> Result<Var> {
        let (p, r) = (self.value(pred), self.value(real));
        if p.shape() != r.shape() {
            return config(format!("mse shape mismatch: {:?} vs {:?}", p.shape(), r.shape()));
        }
        let n = p.len() as f64;
        let s: f64 = p.data().iter().zip(r.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let ng = self.needs(pred) || self.needs(real);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, real), ng))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Row `r` of `a` as a `1 × cols` node.
    pub fn select_row(&mut self, a: Var, r: usize) -> Result<Var> {
        let av = self.value(a);
        if r >= av.rows() {
            return config(format!("row {r} out of range for {} rows", av.rows()));
        }
        let out = Tensor::row(av.row_slice(r));
        let ng = self.needs(a);
        Ok(self.push(out, Op::SelectRow(a, r), ng))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return config("concat of zero tensors");
        };
        let rows = self.value(first).rows();
        if let Some(p) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return config(format!(
                "concat row mismatch: {} vs {}",
                self.value(*p).rows(),
                rows
            ));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::from_parts(rows, cols, out), Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Repeats an `m × 1` column `n` times: `m × 1 → m × n`.
    pub fn tile_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.cols() != 1 || n == 0 {
            return config(format!("tile_cols needs an m x 1 input, got {:?}", av.shape()));
        }
        let mut out = Vec::with_capacity(av.rows() * n);
        for &v in av.data() {
            out.extend(std::iter::repeat_n(v, n));
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_parts(av.rows(), n, out), Op::TileCols(a, n), ng))
    }

    /// Which branch every non-smooth op took, entry by entry.
    ///
    /// Two evaluations of the same computation with equal signatures lie in the
    /// same smooth piece, which is what finite-difference checks rely on.
    pub fn branch_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Clamp(op, a, c) => {
                    let input = &self.nodes[a.0].value;
                    sig.extend(input.data().iter().map(|&v| {
                        let tensor_branch = match op {
                            ClampOp::MinConst => v <= *c,
                            ClampOp::MaxConst => v >= *c,
                        };
                        tensor_branch as i8
                    }));
                }
                Op::Unary(UnaryOp::Abs | UnaryOp::Sign, a) => {
                    sig.extend(self.nodes[a.0].value.data().iter().map(|&v| sign(v) as i8));
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return config(format!("backward needs a scalar loss, got {:?}", lv.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Only leaves (and anything the caller may inspect) keep gradients;
        // intermediates are retained as well since they are cheap to keep.
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.matmul_t(bv));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, av.t_matmul(g));
                }
            }
            Op::Binary(op, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (rows, cols) = out.shape();
                let ba = Bcast::of(av.shape(), (rows, cols)).expect("checked in forward");
                let bb = Bcast::of(bv.shape(), (rows, cols)).expect("checked in forward");
                if self.needs(*a) {
                    let other = (*op == BinaryOp::Mul).then(|| expand_row(bv.data(), bb, cols));
                    let ga = reduce_to(av.shape(), ba, rows, cols, |r| {
                        let go = &g.data()[r * cols..(r + 1) * cols];
                        match &other {
                            Some(o) => go.iter().zip(bb.row(o, r, cols)).map(|(p, q)| p * q).collect(),
                            None => go.to_vec(),
                        }
                    });
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let other = (*op == BinaryOp::Mul).then(|| expand_row(av.data(), ba, cols));
                    let gb = reduce_to(bv.shape(), bb, rows, cols, |r| {
                        let go = &g.data()[r * cols..(r + 1) * cols];
                        match (&other, op) {
                            (Some(o), _) => go.iter().zip(ba.row(o, r, cols)).map(|(p, q)| p * q).collect(),
                            (None, BinaryOp::Sub) => go.iter().map(|v| -v).collect(),
                            (None, _) => go.to_vec(),
                        }
                    });
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Unary(op, a) => {
                let av = self.value(*a);
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .zip(out.data())
                    .map(|((&go, &x), &y)| match op {
                        UnaryOp::Tanh => go * (1.0 - y * y),
                        UnaryOp::Sigmoid => go * y * (1.0 - y),
                        UnaryOp::Exp => go * y,
                        UnaryOp::Log => go / x,
                        UnaryOp::Abs => go * sign(x),
                        UnaryOp::Sign => 0.0,
                        UnaryOp::Negate => -go,
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_parts(av.rows(), av.cols(), d));
            }
            Op::Clamp(op, a, c) => {
                let av = self.value(*a);
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&go, &x)| {
                        let pass = match op {
                            ClampOp::MinConst => x <= *c,
                            ClampOp::MaxConst => x >= *c,
                        };
                        if pass {
                            go
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_parts(av.rows(), av.cols(), d));
            }
            Op::RowProduct(a) => {
                let av = self.value(*a);
                let n = av.cols();
                let mut d = vec![0.0; av.len()];
                let mut prefix = vec![1.0; n + 1];
                for r in 0..av.rows() {
                    let row = av.row_slice(r);
                    for j in 0..n {
                        prefix[j + 1] = prefix[j] * row[j];
                    }
                    // Prefix/suffix products keep the rule exact when a factor is 0.
                    let mut suffix = 1.0;
                    for j in (0..n).rev() {
                        d[r * n + j] = g.data()[r] * prefix[j] * suffix;
                        suffix *= row[j];
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(av.rows(), n, d));
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let k = 2.0 * g.data()[0] / pv.len() as f64;
                let d: Vec<f64> = pv.data().iter().zip(tv.data()).map(|(a, b)| k * (a - b)).collect();
                let (rows, cols) = pv.shape();
                if self.needs(*t) {
                    let neg = d.iter().map(|v| -v).collect();
                    self.accumulate(grads, *t, Tensor::from_parts(rows, cols, neg));
                }
                self.accumulate(grads, *p, Tensor::from_parts(rows, cols, d));
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(rows, cols, g.data()[0]));
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.map(|v| v * c));
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose());
            }
            Op::SelectRow(a, r) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Tensor::zeros(rows, cols);
                d.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.data());
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + cols]);
                        }
                        self.accumulate(grads, p, Tensor::from_parts(rows, cols, d));
                    }
                    offset += cols;
                }
            }
            Op::TileCols(a, n) => {
                let d: Vec<f64> = g.data().chunks(*n).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, *a, Tensor::from_parts(d.len(), 1, d));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[&[1.0, 2.0]]));
        let b = tape.constant(t(&[&[1.0], &[-1.0]]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[-1.0]);

        let eye = tape.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let m = tape.constant(t(&[&[3.0, -4.0], &[5.5, 6.0]]));
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p), tape.value(m));

        let a = tape.constant(t(&[&[2.0, 3.0]]));
        let ones = tape.constant(t(&[&[1.0], &[1.0]]));
        let p = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.value(p).data(), &[5.0]);

        assert!(matches!(tape.matmul(a, a), Err(Error::Config(_))));
    }

    #[test]
    fn elementwise_examples_and_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(&[2.0, 3.0]));
        let b = tape.constant(Tensor::row(&[4.0, 5.0]));
        let m = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[8.0, 15.0]);

        let x = tape.constant(t(&[&[1.0, -2.0], &[3.5, 4.0]]));
        let zero = tape.scalar(0.0);
        let s = tape.add(x, zero).unwrap();
        assert_eq!(tape.value(s), tape.value(x));

        let ones = tape.constant(Tensor::row(&[1.0, 1.0]));
        let d = tape.sub(ones, ones).unwrap();
        assert_eq!(tape.value(d).data(), &[0.0, 0.0]);

        // single-row broadcast on the left operand
        let r = tape.mul(b, x).unwrap();
        assert_eq!(tape.value(r).data(), &[4.0, -10.0, 14.0, 20.0]);

        let col = tape.constant(Tensor::column(&[1.0, 2.0]));
        assert!(matches!(tape.add(x, col), Err(Error::Config(_))));
    }

    #[test]
    fn unary_examples() {
        let mut tape = Tape::new();
        let z = tape.scalar(0.0);
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), Some(0.5));

        let m20 = tape.scalar(-20.0);
        let s = tape.sigmoid(m20);
        // 1/(1 + e^20) = 2.0611536e-9
        assert_relative_eq!(tape.value(s).item().unwrap(), 2.061_153_6e-9, max_relative = 1e-7);

        let two = tape.scalar(2.0);
        let th = tape.tanh(two);
        let sg = tape.sigmoid(two);
        let p = tape.mul(th, sg).unwrap();
        // tanh(2) = 0.9640275800758169, sigma(2) = 0.8807970779778823
        assert_relative_eq!(tape.value(p).item().unwrap(), 0.849_112_7, epsilon = 1e-6);

        let v = tape.constant(Tensor::row(&[-3.0, 0.0, 2.5]));
        let sg = tape.sign(v);
        assert_eq!(tape.value(sg).data(), &[-1.0, 0.0, 1.0]);
        let ab = tape.abs(v);
        assert_eq!(tape.value(ab).data(), &[3.0, 0.0, 2.5]);
        let ng = tape.negate(v);
        assert_eq!(tape.value(ng).data(), &[3.0, -0.0, -2.5]);

        let bad = tape.constant(Tensor::row(&[1.0, 0.0]));
        assert!(matches!(tape.log(bad), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn clamp_examples_and_tie_rule() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(&[25.0, 5.0]));
        let m = tape.min_const(a, 20.0);
        assert_eq!(tape.value(m).data(), &[20.0, 5.0]);

        let tiny = tape.constant(Tensor::scalar(1e-12));
        let f = tape.max_const(tiny, 1e-7);
        assert_eq!(tape.value(f).data(), &[1e-7]);

        let w = tape.leaf(Tensor::scalar(20.0));
        let c = tape.min_const(w, 20.0);
        assert_eq!(tape.value(c).item(), Some(20.0));
        let loss = tape.sum(c);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().item(), Some(1.0));

        let loss = tape.sum(m);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn row_product_examples() {
        let mut tape = Tape::new();
        for (row, want) in [
            ([-1.0, 1.0, 1.0], -1.0),
            ([1.0, 1.0, 1.0], 1.0),
            ([-1.0, -1.0, 1.0], 1.0),
        ] {
            let a = tape.constant(Tensor::row(&row));
            let p = tape.row_product(a);
            assert_eq!(tape.value(p).data(), &[want]);
        }
    }

    #[test]
    fn row_product_gradient_with_zero_factor() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(&[0.0, 2.0, 3.0]));
        let p = tape.row_product(a);
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[6.0, 0.0, 0.0]);
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::row(&[1.0, 3.0]));
        let l = tape.mse_loss(p, p).unwrap();
        assert_eq!(tape.value(l).item(), Some(0.0));
        let two = tape.scalar(2.0);
        let zero = tape.scalar(0.0);
        let l = tape.mse_loss(two, zero).unwrap();
        assert_eq!(tape.value(l).item(), Some(4.0));
        let z = tape.constant(Tensor::row(&[0.0, 0.0]));
        let l = tape.mse_loss(p, z).unwrap();
        assert_eq!(tape.value(l).item(), Some(5.0));
        assert!(tape.mse_loss(p, two).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.mul(w, w).unwrap();
        let grads = tape.backward(sq).unwrap();
        assert_eq!(grads.get(w).unwrap().item(), Some(6.0));

        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(w);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().item(), Some(0.25));

        let v = tape.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(v), Err(Error::Config(_))));
    }

    #[test]
    fn sign_has_zero_gradient_and_abs_is_bounded() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[-2.0, 0.0, 0.5]));
        let s = tape.sign(x);
        let a = tape.abs(x);
        let both = tape.add(s, a).unwrap();
        let loss = tape.sum(both);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let e = tape.exp(x);
        let t = tape.tanh(x);
        let y = tape.add(e, t).unwrap();
        let grads = tape.backward(y).unwrap();
        let want = 1.5f64.exp() + (1.0 - 1.5f64.tanh().powi(2));
        assert_relative_eq!(grads.get(x).unwrap().item().unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(2.0));
        let w = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, w).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().item(), Some(2.0));
    }

    #[test]
    fn tile_concat_select_transpose_shapes() {
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::column(&[1.0, 2.0]));
        let tiled = tape.tile_cols(c, 3).unwrap();
        assert_eq!(tape.value(tiled).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let tr = tape.transpose(tiled);
        assert_eq!(tape.shape(tr), (3, 2));
        let r = tape.select_row(tr, 1).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 2.0]);
        let cat = tape.concat_cols(&[c, c]).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 1.0, 2.0, 2.0]);
        assert!(tape.select_row(tr, 3).is_err());
        let s = tape.sum(tiled);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(c).unwrap().data(), &[3.0, 3.0]);
    }
}
