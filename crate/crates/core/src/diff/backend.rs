//! One model definition, two execution modes.
//!
//! Model code is written against [`Backend`]. [`Eval`] runs it on plain
//! matrices for inference; [`Graph`] records it on a [`Tape`] so gradients
//! with respect to every parameter can be taken.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::tape::{Gradients, Tape, Var};
use crate::error::Result;
use crate::lie::Block;

pub trait Backend {
    type V: Clone;

    fn param(&self, id: ParamId) -> Self::V;
    fn constant(&self, m: DMatrix<f64>) -> Self::V;
    fn value(&self, v: &Self::V) -> DMatrix<f64>;
    fn shape(&self, v: &Self::V) -> (usize, usize);
    fn is_finite(&self, v: &Self::V) -> bool;

    fn scalar(&self, v: &Self::V) -> f64 {
        self.value(v)[(0, 0)]
    }

    fn constant_scalar(&self, x: f64) -> Self::V {
        self.constant(DMatrix::from_element(1, 1, x))
    }

    fn add(&self, a: &Self::V, b: &Self::V) -> Self::V;
    /// Adds column vector `c` to every column of `x`.
    fn add_col(&self, x: &Self::V, c: &Self::V) -> Self::V;
    fn sub(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn div(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn scale(&self, a: &Self::V, c: f64) -> Self::V;
    /// `s * m` for a 1x1 `s`.
    fn scalar_mul(&self, s: &Self::V, m: &Self::V) -> Self::V;
    fn matmul(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn transpose(&self, a: &Self::V) -> Self::V;
    fn exp(&self, a: &Self::V) -> Self::V;
    fn log(&self, a: &Self::V) -> Self::V;
    fn tanh(&self, a: &Self::V) -> Self::V;
    fn sigmoid(&self, a: &Self::V) -> Self::V;
    fn softplus(&self, a: &Self::V) -> Self::V;
    fn square(&self, a: &Self::V) -> Self::V;
    fn sum(&self, a: &Self::V) -> Self::V;
    fn softmax(&self, a: &Self::V) -> Self::V;
    fn log_softmax(&self, a: &Self::V) -> Self::V;
    fn logsumexp(&self, a: &Self::V) -> Self::V;
    fn concat(&self, parts: &[Self::V]) -> Self::V;
    fn slice(&self, a: &Self::V, start: usize, len: usize) -> Self::V;
    fn reshape(&self, a: &Self::V, rows: usize, cols: usize) -> Self::V;
    fn invariant_features(&self, a: &Self::V, blocks: &Arc<[Block]>) -> Self::V;
    fn gate(&self, x: &Self::V, gates: &Self::V, blocks: &Arc<[Block]>) -> Self::V;

    /// Sum of a list of equally shaped values.
    /// Columns `start..start + len`.
    fn slice_cols(&self, a: &Self::V, start: usize, len: usize) -> Self::V {
        self.transpose(&self.slice(&self.transpose(a), start, len))
    }

    fn add_all(&self, parts: &[Self::V]) -> Self::V {
        let mut it = parts.iter();
        let first = it.next().expect("add_all needs at least one term").clone();
        it.fold(first, |acc, p| self.add(&acc, p))
    }
}

/// Plain forward evaluation against a parameter store.
#[derive(Debug, Clone, Copy)]
pub struct Eval<'a> {
    store: &'a ParamStore,
}

impl<'a> Eval<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store }
    }
}

impl Backend for Eval<'_> {
    type V = DMatrix<f64>;

    fn param(&self, id: ParamId) -> DMatrix<f64> {
        self.store.get(id).clone()
    }
    fn constant(&self, m: DMatrix<f64>) -> DMatrix<f64> {
        m
    }
    fn value(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        v.clone()
    }
    fn shape(&self, v: &DMatrix<f64>) -> (usize, usize) {
        v.shape()
    }
    fn is_finite(&self, v: &DMatrix<f64>) -> bool {
        v.iter().all(|x| x.is_finite())
    }
    fn scalar(&self, v: &DMatrix<f64>) -> f64 {
        v[(0, 0)]
    }
    fn add(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a + b
    }
    fn add_col(&self, x: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        kernels::add_col(x, c)
    }
    fn sub(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a - b
    }
    fn mul(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.component_mul(b)
    }
    fn div(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.component_div(b)
    }
    fn scale(&self, a: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
        a * c
    }
    fn scalar_mul(&self, s: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
        m * s[(0, 0)]
    }
    fn matmul(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a * b
    }
    fn transpose(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.transpose()
    }
    fn slice_cols(&self, a: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
        a.columns(start, len).into_owned()
    }
    fn exp(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.map(f64::exp)
    }
    fn log(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.map(f64::ln)
    }
    fn tanh(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.map(f64::tanh)
    }
    fn sigmoid(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.map(kernels::sigmoid)
    }
    fn softplus(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.map(kernels::softplus)
    }
    fn square(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.map(|v| v * v)
    }
    fn sum(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, a.sum())
    }
    fn softmax(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        kernels::softmax(a)
    }
    fn log_softmax(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        kernels::log_softmax(a)
    }
    fn logsumexp(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, kernels::logsumexp(a))
    }
    fn concat(&self, parts: &[DMatrix<f64>]) -> DMatrix<f64> {
        let refs: Vec<&DMatrix<f64>> = parts.iter().collect();
        kernels::concat(&refs)
    }
    fn slice(&self, a: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
        a.rows(start, len).into_owned()
    }
    fn reshape(&self, a: &DMatrix<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
        kernels::reshape(a, rows, cols)
    }
    fn invariant_features(&self, a: &DMatrix<f64>, blocks: &Arc<[Block]>) -> DMatrix<f64> {
        kernels::invariant_features(a, blocks)
    }
    fn gate(&self, x: &DMatrix<f64>, gates: &DMatrix<f64>, blocks: &Arc<[Block]>) -> DMatrix<f64> {
        kernels::gate(x, gates, blocks)
    }
}

/// Tape-recording evaluation with every store parameter bound as a leaf.
#[derive(Debug)]
pub struct Graph {
    tape: Tape,
    params: Vec<Var>,
}

impl Graph {
    pub fn new(store: &ParamStore) -> Self {
        let tape = Tape::new();
        let params = store.values().iter().map(|v| tape.leaf(v.clone())).collect();
        Self { tape, params }
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// A differentiable input outside the parameter store.
    pub fn leaf(&self, m: DMatrix<f64>) -> Var {
        self.tape.leaf(m)
    }

    /// Reverse pass from a scalar; returns all node gradients plus the
    /// per-parameter gradients in store order.
    pub fn backward(&self, out: Var) -> Result<(Gradients, Vec<DMatrix<f64>>)> {
        let grads = self.tape.backward(out)?;
        let per_param = self.params.iter().map(|v| grads.wrt(*v)).collect();
        Ok((grads, per_param))
    }
}

impl Backend for Graph {
    type V = Var;

    fn param(&self, id: ParamId) -> Var {
        self.params[id.index()]
    }
    fn constant(&self, m: DMatrix<f64>) -> Var {
        self.tape.leaf(m)
    }
    fn value(&self, v: &Var) -> DMatrix<f64> {
        self.tape.value(*v)
    }
    fn shape(&self, v: &Var) -> (usize, usize) {
        self.tape.shape(*v)
    }
    fn is_finite(&self, v: &Var) -> bool {
        self.tape.is_finite(*v)
    }
    fn scalar(&self, v: &Var) -> f64 {
        self.tape.scalar(*v)
    }
    fn add(&self, a: &Var, b: &Var) -> Var {
        self.tape.add(*a, *b)
    }
    fn add_col(&self, x: &Var, c: &Var) -> Var {
        self.tape.add_col(*x, *c)
    }
    fn sub(&self, a: &Var, b: &Var) -> Var {
        self.tape.sub(*a, *b)
    }
    fn mul(&self, a: &Var, b: &Var) -> Var {
        self.tape.mul(*a, *b)
    }
    fn div(&self, a: &Var, b: &Var) -> Var {
        self.tape.div(*a, *b)
    }
    fn scale(&self, a: &Var, c: f64) -> Var {
        self.tape.scale(*a, c)
    }
    fn scalar_mul(&self, s: &Var, m: &Var) -> Var {
        self.tape.scalar_mul(*s, *m)
    }
    fn matmul(&self, a: &Var, b: &Var) -> Var {
        self.tape.matmul(*a, *b)
    }
    fn transpose(&self, a: &Var) -> Var {
        self.tape.transpose(*a)
    }
    fn exp(&self, a: &Var) -> Var {
        self.tape.exp(*a)
    }
    fn log(&self, a: &Var) -> Var {
        self.tape.log(*a)
    }
    fn tanh(&self, a: &Var) -> Var {
        self.tape.tanh(*a)
    }
    fn sigmoid(&self, a: &Var) -> Var {
        self.tape.sigmoid(*a)
    }
    fn softplus(&self, a: &Var) -> Var {
        self.tape.softplus(*a)
    }
    fn square(&self, a: &Var) -> Var {
        self.tape.square(*a)
    }
    fn sum(&self, a: &Var) -> Var {
        self.tape.sum(*a)
    }
    fn softmax(&self, a: &Var) -> Var {
        self.tape.softmax(*a)
    }
    fn log_softmax(&self, a: &Var) -> Var {
        self.tape.log_softmax(*a)
    }
    fn logsumexp(&self, a: &Var) -> Var {
        self.tape.logsumexp(*a)
    }
    fn concat(&self, parts: &[Var]) -> Var {
        self.tape.concat(parts)
    }
    fn slice(&self, a: &Var, start: usize, len: usize) -> Var {
        self.tape.slice(*a, start, len)
    }
    fn reshape(&self, a: &Var, rows: usize, cols: usize) -> Var {
        self.tape.reshape(*a, rows, cols)
    }
    fn invariant_features(&self, a: &Var, blocks: &Arc<[Block]>) -> Var {
        self.tape.invariant_features(*a, blocks)
    }
    fn gate(&self, x: &Var, gates: &Var, blocks: &Arc<[Block]>) -> Var {
        self.tape.gate(*x, *gates, blocks)
    }
}
