//! Matrix-valued reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Nodes
//! are appended in evaluation order, so each node's operands always precede
//! it and a single reverse sweep visits every node exactly once.
//!
//! Trainable tensors enter through [`Tape::bind`], which registers every
//! entry of a [`ParamStore`] as a leaf. [`Tape::backward`] then returns a
//! [`Gradients`] value that yields `∂loss/∂param` for each of them, with an
//! exact zero for parameters that do not reach the loss.

use super::{Activation, Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Reference to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `(r x c) + (r x 1)`, bias added to every column.
    AddBias(Var, Var),
    /// `(r x c) ∘ (1 x c)`, column `j` scaled by entry `j`.
    ScaleCols(Var, Var),
    Act(Var, Activation),
    OneMinus(Var),
    VStack(Vec<Var>),
    Rows(Var, usize),
    /// Column-wise inner product, `(r x c), (r x c) -> (1 x c)`.
    ColDot(Var, Var),
    SoftmaxCols(Var),
    Sum(Vec<Var>),
    Scale(Var, f64),
    Square(Var),
    MeanAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers every tensor of `store` as a trainable leaf.
    ///
    /// Must be called once, before any [`Tape::param`] lookup.
    pub fn bind(&mut self, store: &ParamStore) {
        assert!(self.params.is_empty(), "tape already bound to a parameter store");
        self.params = store
            .iter()
            .map(|(_, _, m)| self.push(m.clone(), Op::Param))
            .collect();
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    /// A constant (non-trainable) leaf.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (r, 1) {
            return Err(Error::Shape {
                op: "add_bias",
                left: (r, c),
                right: self.shape(bias),
            });
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).as_slice().to_vec();
        for (i, row) in value.as_mut_slice().chunks_mut(c).enumerate() {
            for x in row {
                *x += b[i];
            }
        }
        Ok(self.push(value, Op::AddBias(a, bias)))
    }

    pub fn scale_cols(&mut self, a: Var, weights: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(weights) != (1, c) {
            return Err(Error::Shape {
                op: "scale_cols",
                left: (r, c),
                right: self.shape(weights),
            });
        }
        let w = self.value(weights).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for row in value.as_mut_slice().chunks_mut(c) {
            for (x, wj) in row.iter_mut().zip(&w) {
                *x *= wj;
            }
        }
        Ok(self.push(value, Op::ScaleCols(a, weights)))
    }

    pub fn act(&mut self, a: Var, kind: Activation) -> Var {
        let value = self.value(a).map(|x| kind.eval(x));
        self.push(value, Op::Act(a, kind))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.act(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.act(a, Activation::Tanh)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 - x);
        self.push(value, Op::OneMinus(a))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::vstack(&mats)?;
        Ok(self.push(value, Op::VStack(parts.to_vec())))
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).row_range(start, len)?;
        Ok(self.push(value, Op::Rows(a, start)))
    }

    pub fn col_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        ma.check_same_shape(mb, "col_dot")?;
        let (r, c) = ma.shape();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (j, o) in out.iter_mut().enumerate() {
                *o += ma.get(i, j) * mb.get(i, j);
            }
        }
        let value = Matrix::row(&out);
        Ok(self.push(value, Op::ColDot(a, b)))
    }

    /// Softmax down each column, stabilized by subtracting the column max.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let value = softmax_columns(self.value(a));
        self.push(value, Op::SoftmaxCols(a))
    }

    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("sum of zero terms"))?;
        let mut value = self.value(first).clone();
        for &p in &parts[1..] {
            self.value(p).check_same_shape(&value, "sum")?;
            value.add_assign(self.value(p));
        }
        Ok(self.push(value, Op::Sum(parts.to_vec())))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, found {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, va.shape());
                    g.matmul_nt_acc(vb, ga);
                    let gb = slot(&mut grads, *b, vb.shape());
                    va.matmul_tn_acc(&g, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::AddBias(a, bias) => {
                    let c = g.cols();
                    let row_sums: Vec<f64> =
                        g.as_slice().chunks(c).map(|r| r.iter().sum()).collect();
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *bias, &Matrix::column(&row_sums));
                }
                Op::ScaleCols(a, w) => {
                    let (va, vw) = (self.value(*a), self.value(*w));
                    let c = va.cols();
                    let mut ga = g.clone();
                    let mut gw = vec![0.0; c];
                    for (i, row) in ga.as_mut_slice().chunks_mut(c).enumerate() {
                        for j in 0..c {
                            gw[j] += row[j] * va.get(i, j);
                            row[j] *= vw.get(0, j);
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *w, &Matrix::row(&gw));
                }
                Op::Act(a, kind) => {
                    let y = &node.value;
                    let mut ga = g;
                    for (gi, &yi) in ga.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *gi *= kind.derivative_from_output(yi);
                    }
                    accumulate(&mut grads, *a, &ga);
                }
                Op::OneMinus(a) => accumulate(&mut grads, *a, &g.scale(-1.0)),
                Op::VStack(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let r = self.shape(p).0;
                        accumulate(&mut grads, p, &g.row_range(start, r)?);
                        start += r;
                    }
                }
                Op::Rows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let ga = slot(&mut grads, *a, (r, c));
                    let off = start * c;
                    for (dst, src) in ga.as_mut_slice()[off..off + g.len()]
                        .iter_mut()
                        .zip(g.as_slice())
                    {
                        *dst += src;
                    }
                }
                Op::ColDot(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let c = va.cols();
                    let mut ga = vb.clone();
                    let mut gb = va.clone();
                    for row in ga.as_mut_slice().chunks_mut(c) {
                        for (x, gj) in row.iter_mut().zip(g.as_slice()) {
                            *x *= gj;
                        }
                    }
                    for row in gb.as_mut_slice().chunks_mut(c) {
                        for (x, gj) in row.iter_mut().zip(g.as_slice()) {
                            *x *= gj;
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::SoftmaxCols(a) => {
                    let y = &node.value;
                    let (r, c) = y.shape();
                    let mut ga = Matrix::zeros(r, c);
                    for j in 0..c {
                        let dot: f64 = (0..r).map(|i| g.get(i, j) * y.get(i, j)).sum();
                        for i in 0..r {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, &g);
                    }
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, &g.scale(*f)),
                Op::Square(a) => {
                    let ga = g.hadamard(&self.value(*a).scale(2.0))?;
                    accumulate(&mut grads, *a, &ga);
                }
                Op::MeanAll(a) => {
                    let (r, c) = self.shape(*a);
                    let ga = Matrix::filled(r, c, g.get(0, 0) / (r * c) as f64);
                    accumulate(&mut grads, *a, &ga);
                }
            }
        }

        let params = self
            .params
            .iter()
            .map(|&v| match grads.get_mut(v.0).and_then(Option::take) {
                Some(g) => g,
                None => Matrix::zeros(self.shape(v).0, self.shape(v).1),
            })
            .collect();
        Ok(Gradients { params })
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: &Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(g),
        empty => *empty = Some(g.clone()),
    }
}

pub(crate) fn softmax_columns(m: &Matrix) -> Matrix {
    let (r, c) = m.shape();
    let mut out = Matrix::zeros(r, c);
    for j in 0..c {
        let max = (0..r).map(|i| m.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..r {
            let e = (m.get(i, j) - max).exp();
            out.set(i, j, e);
            total += e;
        }
        for i in 0..r {
            out.set(i, j, out.get(i, j) / total);
        }
    }
    out
}

/// Gradients of a scalar loss with respect to every bound parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Matrix>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> &Matrix {
        &self.params[id.0]
    }

    pub fn as_slice(&self) -> &[Matrix] {
        &self.params
    }

    pub fn into_vec(self) -> Vec<Matrix> {
        self.params
    }
}
