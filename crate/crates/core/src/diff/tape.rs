//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Every node on a [`Tape`] holds a matrix value (column vectors are `n x 1`,
//! scalars `1 x 1`) and the operation that produced it. [`Tape::backward`]
//! walks the nodes in reverse creation order and accumulates exact
//! vector-Jacobian products.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::kernels;
use crate::error::{Error, Result};
use crate::lie::Block;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddCol(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    /// 1x1 times matrix.
    ScalarMul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    InvariantFeatures(Var, Arc<[Block]>),
    Gate(Var, Var, Arc<[Block]>),
}

#[derive(Debug)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
}

/// Records operations for reverse-mode differentiation.
///
/// Not thread-safe; build one tape per thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DMatrix<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> DMatrix<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DMatrix::zeros(r, c)
            }
        }
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

    fn push(&self, value: DMatrix<f64>, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// A leaf (parameter, input or constant).
    pub fn leaf(&self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> DMatrix<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// True when every entry of the value is finite.
    pub fn is_finite(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].value.iter().all(|x| x.is_finite())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    fn unary(&self, a: Var, f: impl FnOnce(&DMatrix<f64>) -> DMatrix<f64>, op: Op) -> Var {
        let value = f(&self.nodes.borrow()[a.0].value);
        self.push(value, op)
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl FnOnce(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>,
        op: Op,
    ) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)
        };
        self.push(value, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Adds the column vector `c` to every column of `x`.
    pub fn add_col(&self, x: Var, c: Var) -> Var {
        self.binary(x, c, kernels::add_col, Op::AddCol(x, c))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.component_mul(y), Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.component_div(y), Op::Div(a, b))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn scalar_mul(&self, s: Var, m: Var) -> Var {
        self.binary(s, m, |s, m| m * s[(0, 0)], Op::ScalarMul(s, m))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::MatMul(a, b))
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, |x| x.transpose(), Op::Transpose(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::exp), Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::ln), Op::Log(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::tanh), Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(kernels::sigmoid), Op::Sigmoid(a))
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(kernels::softplus), Op::Softplus(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(|v| v * v), Op::Square(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, |x| DMatrix::from_element(1, 1, x.sum()), Op::Sum(a))
    }

    pub fn softmax(&self, a: Var) -> Var {
        self.unary(a, kernels::softmax, Op::Softmax(a))
    }

    pub fn log_softmax(&self, a: Var) -> Var {
        self.unary(a, kernels::log_softmax, Op::LogSoftmax(a))
    }

    pub fn logsumexp(&self, a: Var) -> Var {
        self.unary(a, |x| DMatrix::from_element(1, 1, kernels::logsumexp(x)), Op::LogSumExp(a))
    }

    /// Vertical concatenation.
    pub fn concat(&self, parts: &[Var]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&DMatrix<f64>> = parts.iter().map(|p| &nodes[p.0].value).collect();
            kernels::concat(&refs)
        };
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Rows `start..start + len`.
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Var {
        self.unary(a, |x| x.rows(start, len).into_owned(), Op::Slice(a, start))
    }

    /// Row-major reinterpretation.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        self.unary(a, |x| kernels::reshape(x, rows, cols), Op::Reshape(a))
    }

    pub fn invariant_features(&self, a: Var, blocks: &Arc<[Block]>) -> Var {
        self.unary(
            a,
            |x| kernels::invariant_features(x, blocks),
            Op::InvariantFeatures(a, blocks.clone()),
        )
    }

    pub fn gate(&self, x: Var, gates: Var, blocks: &Arc<[Block]>) -> Var {
        self.binary(
            x,
            gates,
            |x, g| kernels::gate(x, g, blocks),
            Op::Gate(x, gates, blocks.clone()),
        )
    }

    /// Exact gradients of the scalar `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[out.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, -&dy);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, dy.component_mul(val(*b)));
                    acc(&mut grads, *b, dy.component_mul(val(*a)));
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    acc(&mut grads, *a, dy.component_div(y));
                    let db = DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| {
                        -dy[(r, c)] * x[(r, c)] / (y[(r, c)] * y[(r, c)])
                    });
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &dy * *c),
                Op::ScalarMul(s, m) => {
                    let sv = val(*s)[(0, 0)];
                    let ds = dy.dot(val(*m));
                    acc(&mut grads, *s, DMatrix::from_element(1, 1, ds));
                    acc(&mut grads, *m, &dy * sv);
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, &dy * val(*b).transpose());
                    acc(&mut grads, *b, val(*a).transpose() * &dy);
                }
                Op::Transpose(a) => acc(&mut grads, *a, dy.transpose()),
                Op::Exp(a) => acc(&mut grads, *a, dy.component_mul(&node.value)),
                Op::Log(a) => acc(&mut grads, *a, dy.component_div(val(*a))),
                Op::Tanh(a) => {
                    let d = node.value.map(|t| 1.0 - t * t);
                    acc(&mut grads, *a, dy.component_mul(&d));
                }
                Op::Sigmoid(a) => {
                    let d = node.value.map(|s| s * (1.0 - s));
                    acc(&mut grads, *a, dy.component_mul(&d));
                }
                Op::Softplus(a) => {
                    let d = val(*a).map(kernels::sigmoid);
                    acc(&mut grads, *a, dy.component_mul(&d));
                }
                Op::Square(a) => acc(&mut grads, *a, dy.component_mul(val(*a)) * 2.0),
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut grads, *a, DMatrix::from_element(r, c, dy[(0, 0)]));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut g = y.component_mul(&dy);
                    for (mut gc, yc) in g.column_iter_mut().zip(y.column_iter()) {
                        let inner = gc.sum();
                        gc -= yc * inner;
                    }
                    acc(&mut grads, *a, g);
                }
                Op::LogSoftmax(a) => {
                    let p = node.value.map(f64::exp);
                    let mut g = dy.clone();
                    for (mut gc, pc) in g.column_iter_mut().zip(p.column_iter()) {
                        let total = gc.sum();
                        gc -= pc * total;
                    }
                    acc(&mut grads, *a, g);
                }
                Op::AddCol(x, c) => {
                    let dc = DMatrix::from_column_slice(dy.nrows(), 1, dy.column_sum().as_slice());
                    acc(&mut grads, *x, dy.clone());
                    acc(&mut grads, *c, dc);
                }
                Op::LogSumExp(a) => {
                    let x = val(*a);
                    let p = x.map(|v| (v - node.value[(0, 0)]).exp());
                    acc(&mut grads, *a, p * dy[(0, 0)]);
                }
                Op::Concat(parts) => {
                    let mut r = 0;
                    for p in parts {
                        let rows = nodes[p.0].value.nrows();
                        acc(&mut grads, *p, dy.rows(r, rows).into_owned());
                        r += rows;
                    }
                }
                Op::Slice(a, start) => {
                    let (r, c) = val(*a).shape();
                    let mut g = DMatrix::zeros(r, c);
                    g.view_mut((*start, 0), dy.shape()).copy_from(&dy);
                    acc(&mut grads, *a, g);
                }
                Op::Reshape(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut grads, *a, kernels::reshape(&dy, r, c));
                }
                Op::InvariantFeatures(a, blocks) => {
                    let x = val(*a);
                    let pairs = kernels::gram_pairs(blocks);
                    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
                    for c in 0..x.ncols() {
                        let mut k = 0;
                        for b in blocks.iter().filter(|b| b.rank == 0) {
                            g[(b.offset, c)] += dy[(k, c)];
                            k += 1;
                        }
                        for &(i, j) in &pairs {
                            let (bi, bj) = (blocks[i], blocks[j]);
                            for e in 0..bi.len {
                                g[(bi.offset + e, c)] += dy[(k, c)] * x[(bj.offset + e, c)];
                                g[(bj.offset + e, c)] += dy[(k, c)] * x[(bi.offset + e, c)];
                            }
                            k += 1;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Gate(x, gates, blocks) => {
                    let (xv, gv) = (val(*x), val(*gates));
                    let mut dx = DMatrix::zeros(xv.nrows(), xv.ncols());
                    let mut dg = DMatrix::zeros(gv.nrows(), gv.ncols());
                    for c in 0..xv.ncols() {
                        let mut k = 0;
                        for b in blocks.iter() {
                            if b.rank == 0 {
                                let t = node.value[(b.offset, c)];
                                dx[(b.offset, c)] = dy[(b.offset, c)] * (1.0 - t * t);
                            } else {
                                let s = kernels::sigmoid(gv[(k, c)]);
                                let mut inner = 0.0;
                                for e in 0..b.len {
                                    dx[(b.offset + e, c)] = s * dy[(b.offset + e, c)];
                                    inner += dy[(b.offset + e, c)] * xv[(b.offset + e, c)];
                                }
                                dg[(k, c)] = s * (1.0 - s) * inner;
                                k += 1;
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gates, dg);
                }
            }
            grads[i] = Some(dy);
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn quadratic_gradient() {
        let t = Tape::new();
        let w = t.leaf(col(&[1.0, 2.0]));
        let f = t.sum(t.square(w));
        assert_eq!(t.scalar(f), 5.0);
        let g = t.backward(f).unwrap();
        assert_eq!(g.wrt(w), col(&[2.0, 4.0]));
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let t = Tape::new();
        let w = t.leaf(col(&[1.0, 2.0]));
        let c = t.leaf(DMatrix::from_element(1, 1, 3.0));
        let g = t.backward(c).unwrap();
        assert_eq!(g.wrt(w), DMatrix::zeros(2, 1));
    }

    #[test]
    fn non_scalar_output_rejected() {
        let t = Tape::new();
        let w = t.leaf(col(&[1.0, 2.0]));
        assert!(matches!(t.backward(w), Err(Error::Shape(_))));
    }

    #[test]
    fn reused_node_accumulates() {
        let t = Tape::new();
        let x = t.leaf(col(&[3.0]));
        let y = t.mul(x, x);
        let z = t.sum(t.add(y, x));
        assert_eq!(t.backward(z).unwrap().wrt(x), col(&[7.0]));
    }
}
