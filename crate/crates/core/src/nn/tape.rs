//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every node on a [`Tape`] holds a 2-D array (a scalar is `1×1`). Operations
//! are recorded eagerly as they are applied through [`Var`] handles; calling
//! [`Var::backward`] on a `1×1` root walks the tape in reverse and returns the
//! adjoint of every node.
//!
//! Elementwise binary operations broadcast: an operand with a single row or a
//! single column is repeated to match the other operand, and the adjoint is
//! summed back down to the operand's shape.
//!
//! ```
//! use cevae_core::nn::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.scalar(2.0);
//! let y = tape.scalar(3.0);
//! let root = x * y;
//! let grads = root.backward().unwrap();
//! assert_eq!(grads.scalar(x), 3.0);
//! assert_eq!(grads.scalar(y), 2.0);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    Elu(usize),
    Sigmoid(usize),
    Softplus(usize),
    LogSigmoid(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    SumAll(usize),
    SumCols(usize),
    SumRows(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    BroadcastRows(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Elu(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::LogSigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Clamp(a, _, _)
            | Op::SumAll(a)
            | Op::SumCols(a)
            | Op::SumRows(a)
            | Op::SliceCols(a, _)
            | Op::BroadcastRows(a) => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    /// Some differentiable leaf feeds this node.
    grad: bool,
}

/// Recording of a computation. Create one per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let grad = match &op {
            Op::Leaf => true,
            op => op.inputs().iter().any(|&j| nodes[j].grad),
        };
        nodes.push(Node { value, op, grad });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Differentiable leaf holding `value`.
    pub fn var(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Leaf used as data. No adjoint is propagated into constants or into
    /// nodes computed only from constants.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        let var = self.push(value, Op::Leaf);
        self.nodes.borrow_mut()[var.idx].grad = false;
        var
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.var(Array2::from_elem((1, 1), value))
    }

    pub fn column(&self, values: &[f64]) -> Var<'_> {
        self.var(Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap())
    }

    pub fn row(&self, values: &[f64]) -> Var<'_> {
        self.var(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    /// Leaf for a stored parameter. Each parameter maps to one leaf per tape.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&idx) = self.params.borrow().get(&id) {
            return Var { tape: self, idx };
        }
        let var = self.var(store.value(id).clone());
        self.params.borrow_mut().insert(id, var.idx);
        var
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat_cols(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        let (value, idxs) = {
            let nodes = self.nodes.borrow();
            let rows = parts
                .first()
                .map(|p| nodes[p.idx].value.nrows())
                .ok_or_else(|| Error::invalid("concat of zero parts"))?;
            if parts.iter().any(|p| nodes[p.idx].value.nrows() != rows) {
                return Err(Error::invalid("concat_cols: row counts differ"));
            }
            let views: Vec<_> = parts.iter().map(|p| nodes[p.idx].value.view()).collect();
            let value = ndarray::concatenate(Axis(1), &views)
                .map_err(|e| Error::invalid(format!("concat_cols: {e}")))?;
            (value, parts.iter().map(|p| p.idx).collect())
        };
        Ok(self.push(value, Op::ConcatCols(idxs)))
    }

    /// Adjoints of every parameter leaf recorded on this tape, in store order.
    /// Parameters that never entered the computation receive zeros.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Matrix> {
        let params = self.params.borrow();
        store
            .ids()
            .map(|id| match params.get(&id).and_then(|&idx| grads.adjoints[idx].as_ref()) {
                Some(g) => g.clone(),
                None => Array2::zeros(store.value(id).raw_dim()),
            })
            .collect()
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    fn dim(x: usize, y: usize) -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    }
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Sums a broadcast adjoint back down to `shape`.
fn reduce_to(grad: Matrix, shape: (usize, usize)) -> Matrix {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn elu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.dim()
    }

    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self) -> f64 {
        self.with_value(|v| v[[0, 0]])
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.with_value(|v| v.mapv(&f));
        self.tape.push(value, op)
    }

    fn binary(self, rhs: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.idx].value, &nodes[rhs.idx].value);
            let shape = broadcast_shape(a.dim(), b.dim()).unwrap_or_else(|| {
                panic!("incompatible shapes {:?} and {:?}", a.dim(), b.dim())
            });
            let a = a.broadcast(shape).unwrap();
            let b = b.broadcast(shape).unwrap();
            ndarray::Zip::from(&a).and(&b).map_collect(|&x, &y| f(x, y))
        };
        self.tape.push(value, op)
    }

    /// Fallible shape check for broadcasting binary ops.
    pub fn check_broadcast(&self, other: &Var<'t>) -> Result<()> {
        broadcast_shape(self.shape(), other.shape())
            .map(|_| ())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "shape mismatch: {:?} vs {:?}",
                    self.shape(),
                    other.shape()
                ))
            })
    }

    pub fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Div(self.idx, rhs.idx), |a, b| a / b)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.idx].value, &nodes[rhs.idx].value);
            if a.ncols() != b.nrows() {
                return Err(Error::invalid(format!(
                    "matmul: {:?} x {:?}",
                    a.dim(),
                    b.dim()
                )));
            }
            a.dot(b)
        };
        Ok(self.tape.push(value, Op::MatMul(self.idx, rhs.idx)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.idx, c), |x| c * x)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.idx), |x| x + c)
    }

    pub fn elu(self) -> Var<'t> {
        self.unary(Op::Elu(self.idx), elu_scalar)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.idx), sigmoid_scalar)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.idx), softplus_scalar)
    }

    /// `ln σ(x)`, computed without forming `σ(x)`.
    pub fn log_sigmoid(self) -> Var<'t> {
        self.unary(Op::LogSigmoid(self.idx), |x| -softplus_scalar(-x))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.idx), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.idx), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.idx), f64::sqrt)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.idx), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; the adjoint is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.idx, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(self) -> Var<'t> {
        let value = self.with_value(|v| Array2::from_elem((1, 1), v.sum()));
        self.tape.push(value, Op::SumAll(self.idx))
    }

    /// Row-wise sum: `n×m → n×1`.
    pub fn sum_cols(self) -> Var<'t> {
        let value = self.with_value(|v| v.sum_axis(Axis(1)).insert_axis(Axis(1)));
        self.tape.push(value, Op::SumCols(self.idx))
    }

    /// Column-wise sum: `n×m → 1×m`.
    pub fn sum_rows(self) -> Var<'t> {
        let value = self.with_value(|v| v.sum_axis(Axis(0)).insert_axis(Axis(0)));
        self.tape.push(value, Op::SumRows(self.idx))
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum().scale(1.0 / (r * c) as f64)
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let value = self.with_value(|v| v.slice(s![.., start..end]).to_owned());
        self.tape.push(value, Op::SliceCols(self.idx, start))
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(self, n: usize) -> Result<Var<'t>> {
        let value = self.with_value(|v| {
            if v.nrows() != 1 {
                return Err(Error::invalid("broadcast_rows needs a single row"));
            }
            Ok(v.broadcast((n, v.ncols())).unwrap().to_owned())
        })?;
        Ok(self.tape.push(value, Op::BroadcastRows(self.idx)))
    }

    /// Reverse pass from this `1×1` node.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.idx].value;
        if root.dim() != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got {:?}",
                root.dim()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.idx + 1];
        adj[self.idx] = Some(Array2::ones((1, 1)));

        let needs: Vec<bool> = nodes[..=self.idx].iter().map(|n| n.grad).collect();
        let acc = |adj: &mut [Option<Matrix>], idx: usize, g: Matrix| {
            if !needs[idx] {
                return;
            }
            match &mut adj[idx] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        };

        for i in (0..=self.idx).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            let val = |j: usize| &nodes[j].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *a, reduce_to(g.clone(), val(*a).dim()));
                    acc(&mut adj, *b, reduce_to(g.clone(), val(*b).dim()));
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, reduce_to(g.clone(), val(*a).dim()));
                    acc(&mut adj, *b, reduce_to(-&g, val(*b).dim()));
                }
                Op::Mul(a, b) => {
                    let ga = &g * val(*b);
                    let gb = &g * val(*a);
                    acc(&mut adj, *a, reduce_to(ga, val(*a).dim()));
                    acc(&mut adj, *b, reduce_to(gb, val(*b).dim()));
                }
                Op::Div(a, b) => {
                    let ga = &g / val(*b);
                    let gb = -(&g * &node.value) / val(*b);
                    acc(&mut adj, *a, reduce_to(ga, val(*a).dim()));
                    acc(&mut adj, *b, reduce_to(gb, val(*b).dim()));
                }
                Op::MatMul(a, b) => {
                    if needs[*a] {
                        acc(&mut adj, *a, g.dot(&val(*b).t()));
                    }
                    if needs[*b] {
                        acc(&mut adj, *b, val(*a).t().dot(&g));
                    }
                }
                Op::Neg(a) => acc(&mut adj, *a, -g.clone()),
                Op::Scale(a, c) => acc(&mut adj, *a, g.clone() * *c),
                Op::Offset(a) => acc(&mut adj, *a, g.clone()),
                Op::Elu(a) => {
                    let d = ndarray::Zip::from(&g)
                        .and(val(*a))
                        .and(&node.value)
                        .map_collect(|&g, &x, &y| if x > 0.0 { g } else { g * (y + 1.0) });
                    acc(&mut adj, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = ndarray::Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&g, &y| g * y * (1.0 - y));
                    acc(&mut adj, *a, d);
                }
                Op::Softplus(a) => {
                    let d = ndarray::Zip::from(&g)
                        .and(val(*a))
                        .map_collect(|&g, &x| g * sigmoid_scalar(x));
                    acc(&mut adj, *a, d);
                }
                Op::LogSigmoid(a) => {
                    let d = ndarray::Zip::from(&g)
                        .and(val(*a))
                        .map_collect(|&g, &x| g * sigmoid_scalar(-x));
                    acc(&mut adj, *a, d);
                }
                Op::Exp(a) => acc(&mut adj, *a, &g * &node.value),
                Op::Ln(a) => acc(&mut adj, *a, &g / val(*a)),
                Op::Sqrt(a) => {
                    let d = ndarray::Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&g, &y| 0.5 * g / y);
                    acc(&mut adj, *a, d);
                }
                Op::Square(a) => acc(&mut adj, *a, &g * val(*a) * 2.0),
                Op::Clamp(a, lo, hi) => {
                    let d = ndarray::Zip::from(&g).and(val(*a)).map_collect(|&g, &x| {
                        if x >= *lo && x <= *hi {
                            g
                        } else {
                            0.0
                        }
                    });
                    acc(&mut adj, *a, d);
                }
                Op::SumAll(a) => {
                    let shape = val(*a).raw_dim();
                    acc(&mut adj, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::SumCols(a) => {
                    let shape = val(*a).dim();
                    acc(&mut adj, *a, g.broadcast(shape).unwrap().to_owned());
                }
                Op::SumRows(a) => {
                    let shape = val(*a).dim();
                    acc(&mut adj, *a, g.broadcast(shape).unwrap().to_owned());
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(val(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut adj, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = val(p).ncols();
                        acc(&mut adj, p, g.slice(s![.., offset..offset + width]).to_owned());
                        offset += width;
                    }
                }
                Op::BroadcastRows(a) => {
                    acc(&mut adj, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            adj[i] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add(self.idx, rhs.idx), |a, b| a + b)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub(self.idx, rhs.idx), |a, b| a - b)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul(self.idx, rhs.idx), |a, b| a * b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.idx), |x| -x)
    }
}

/// Adjoints produced by [`Var::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Matrix> {
        self.adjoints.get(var.idx).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, zeros if the root does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Matrix {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(var.shape()))
    }

    pub fn scalar(&self, var: Var<'_>) -> f64 {
        self.get(var).map_or(0.0, |g| g[[0, 0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.scalar(2.0);
        let y = tape.scalar(3.0);
        let g = (x * y).backward().unwrap();
        assert_eq!((g.scalar(x), g.scalar(y)), (3.0, 2.0));
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        let g = x.sigmoid().backward().unwrap();
        assert!((g.scalar(x) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.var(array![[1.0, 2.0]]);
        assert!(matches!(x.elu().backward(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backward_is_repeatable() {
        let tape = Tape::new();
        let x = tape.var(array![[0.3, -1.2], [2.0, 0.1]]);
        let root = (x.elu() * x).sum();
        let a = root.backward().unwrap().wrt(x);
        let b = root.backward().unwrap().wrt(x);
        assert_eq!(a, b);
    }

    #[test]
    fn broadcast_adjoint_is_reduced() {
        let tape = Tape::new();
        let x = tape.var(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let bias = tape.var(array![[0.5, -0.5]]);
        let col = tape.var(array![[1.0], [2.0], [3.0]]);
        let root = ((x + bias) * col).sum();
        let g = root.backward().unwrap();
        assert_eq!(g.wrt(bias), array![[6.0, 6.0]]);
        assert_eq!(g.wrt(col), array![[3.0], [7.0], [11.0]]);
    }

    #[test]
    fn unused_leaf_has_no_adjoint() {
        let tape = Tape::new();
        let x = tape.scalar(1.0);
        let y = tape.scalar(5.0);
        let g = x.exp().backward().unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.scalar(y), 0.0);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let tape = Tape::new();
        let a = tape.var(Array2::zeros((2, 3)));
        let b = tape.var(Array2::zeros((2, 3)));
        assert!(a.matmul(b).is_err());
    }

    #[test]
    fn stable_extremes() {
        let tape = Tape::new();
        let x = tape.var(array![[-800.0, 800.0]]);
        let ls = x.log_sigmoid().value();
        assert_eq!(ls[[0, 0]], -800.0);
        assert_eq!(ls[[0, 1]], 0.0);
        let sp = x.softplus().value();
        assert_eq!(sp[[0, 0]], 0.0);
        assert_eq!(sp[[0, 1]], 800.0);
        let sg = x.sigmoid().value();
        assert_eq!(sg[[0, 0]], 0.0);
        assert_eq!(sg[[0, 1]], 1.0);
    }
}
