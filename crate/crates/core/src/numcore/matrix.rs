//! Dense row-major `f64` matrices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense matrix stored in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Elementwise nonlinearity applied by [`apply_nonlinear`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Logistic sigmoid, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn apply_nonlinear(m: &Matrix, kind: Activation) -> Matrix {
    m.map(|x| kind.eval(x))
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix data length {} does not equal {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A column vector.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// A row vector.
    pub fn row(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Value of a 1x1 matrix.
    pub fn to_scalar(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "expected a 1x1 matrix, found {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same_shape(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|x| x * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm_nn(self, other, &mut out);
        Ok(out)
    }

    /// `selfᵀ · other`, accumulated into `out`.
    pub(crate) fn matmul_tn_acc(&self, other: &Matrix, out: &mut Matrix) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(out.shape(), (self.cols, other.cols));
        let n = other.cols;
        for k in 0..self.rows {
            let a_row = self.row_slice(k);
            let b_row = other.row_slice(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in o.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
    }

    /// `self · otherᵀ`, accumulated into `out`.
    pub(crate) fn matmul_nt_acc(&self, other: &Matrix, out: &mut Matrix) {
        debug_assert_eq!(self.cols, other.cols);
        debug_assert_eq!(out.shape(), (self.rows, other.rows));
        for i in 0..self.rows {
            let a_row = self.row_slice(i);
            for j in 0..other.rows {
                let b_row = other.row_slice(j);
                let dot: f64 = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
                out.data[i * other.rows + j] += dot;
            }
        }
    }

    /// Vertical concatenation.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("vstack of zero matrices"))?;
        let cols = first.cols;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::Shape {
                    op: "vstack",
                    left: first.shape(),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn row_range(&self, start: usize, len: usize) -> Result<Matrix> {
        if start + len > self.rows {
            return Err(Error::contract(format!(
                "row range {start}..{} exceeds {} rows",
                start + len,
                self.rows
            )));
        }
        Ok(Matrix {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        })
    }

    /// Lower-triangular Cholesky factor `L` with `L·Lᵀ = self`.
    pub fn cholesky(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::Shape {
                op: "cholesky",
                left: self.shape(),
                right: self.shape(),
            });
        }
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag -= l.get(j, k) * l.get(j, k);
            }
            if !(diag > 0.0) {
                return Err(Error::Numeric(format!(
                    "cholesky: matrix is not positive definite (pivot {j} = {diag})"
                )));
            }
            let d = diag.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        Ok(l)
    }
}

fn gemm_nn(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let a_row = a.row_slice(i);
        let o = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in o.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row_slice(i))?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_m_is_m() {
        let m = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 4.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::column(&[1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap(), Matrix::column(&[3.0, 7.0]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        match a.matmul(&b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 2));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn nonlinearities_at_fixed_points() {
        let z = Matrix::scalar(0.0);
        assert_eq!(apply_nonlinear(&z, Activation::Sigmoid).get(0, 0), 0.5);
        assert_eq!(apply_nonlinear(&z, Activation::Tanh).get(0, 0), 0.0);
        let m = Matrix::row(&[2.0, -3.0]);
        assert_eq!(apply_nonlinear(&m, Activation::Identity), m);
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.3, -2.0], vec![1.0, 1.0]]).unwrap();
        let mut tn = Matrix::zeros(3, 2);
        a.matmul_tn_acc(&b, &mut tn);
        assert_eq!(tn, a.transpose().matmul(&b).unwrap());

        let c = Matrix::from_rows(&[vec![1.0, 0.0, 2.0]]).unwrap();
        let mut nt = Matrix::zeros(2, 1);
        a.matmul_nt_acc(&c, &mut nt);
        assert_eq!(nt, a.matmul(&c.transpose()).unwrap());
    }

    #[test]
    fn cholesky_reconstructs_and_rejects_indefinite() {
        let s = Matrix::from_rows(&[vec![2.0, 0.7], vec![0.7, 2.0]]).unwrap();
        let l = s.cholesky().unwrap();
        let back = l.matmul(&l.transpose()).unwrap();
        assert!(back.sub(&s).unwrap().max_abs() < 1e-14);
        let bad = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(bad.cholesky(), Err(Error::Numeric(_))));
    }
}
