//! Dense row-major `f64` tensors, a small reverse-mode tape, and toy MLPs.
//!
//! Everything here is deliberately small: 2-D matrices cover every quantity
//! the pipeline needs (point sets are `n x d`, latent vectors are `1 x d`).
//! The only broadcasting is the bias-style row add; anything else must be an
//! explicit op so the tape stays easy to audit.

mod codec;
mod mlp;
mod tape;

pub use codec::{read_tensor, read_tensors, write_tensor, write_tensors, TENSOR_MAGIC};
pub use mlp::{mlp_apply, Activation, Linear, Mlp, Recording};
pub use tape::{Gradients, NodeId, Op, Tape};

use crate::error::{dim_err, num_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a 2-D tensor; panics if the sizes disagree (internal use).
    pub(crate) fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols}");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A `1 x n` row vector.
    pub fn row(values: &[f64]) -> Self {
        Tensor::matrix(1, values.len(), values.to_vec())
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(dim_err!("row {} has {} columns, expected {}", i, r.len(), cols));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor::matrix(rows.len(), cols, data))
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor; a 1-D tensor is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(num_err!("non-finite values in {what}"))
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim_err!("{op}: {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// `self + c * other`, elementwise.
    pub fn axpy(&self, c: f64, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "axpy", |a, b| a + c * b)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(dim_err!(
                "matmul needs 2-D operands, got {:?} and {:?}",
                self.shape,
                other.shape
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(dim_err!("matmul {m}x{k} by {k2}x{n}"));
        }
        Ok(Tensor::matrix(
            m,
            n,
            gemm(m, k, n, &self.data, (k, 1), &other.data, (n, 1)),
        ))
    }

    /// `self^T * other` without materialising the transpose.
    pub(crate) fn t_matmul(&self, other: &Tensor) -> Tensor {
        let (k, m) = (self.rows(), self.cols());
        let n = other.cols();
        Tensor::matrix(m, n, gemm(m, k, n, &self.data, (1, m), &other.data, (n, 1)))
    }

    /// `self * other^T` without materialising the transpose.
    pub(crate) fn matmul_t(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.rows(), self.cols());
        let n = other.rows();
        Tensor::matrix(m, n, gemm(m, k, n, &self.data, (k, 1), &other.data, (1, k)))
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, m) = (self.rows(), self.cols());
        if bias.len() != m {
            return Err(dim_err!("bias of length {} for {n}x{m}", bias.len()));
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(Tensor::matrix(n, m, data))
    }

    /// Column sums as a `1 x m` row.
    pub fn sum_rows(&self) -> Tensor {
        let m = self.cols();
        let mut out = vec![0.0; m];
        for row in self.data.chunks(m.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor::matrix(1, m, out)
    }

    pub fn mean_rows(&self) -> Tensor {
        let n = self.rows() as f64;
        self.sum_rows().map(|v| v / n)
    }

    /// Column maxima and the row index achieving each (first on ties).
    pub fn max_rows(&self) -> (Tensor, Vec<usize>) {
        let m = self.cols();
        let mut best = vec![f64::NEG_INFINITY; m];
        let mut arg = vec![0usize; m];
        for (i, row) in self.data.chunks(m.max(1)).enumerate() {
            for j in 0..m {
                if row[j] > best[j] {
                    best[j] = row[j];
                    arg[j] = i;
                }
            }
        }
        (Tensor::matrix(1, m, best), arg)
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let n = parts.first().map_or(0, |p| p.rows());
        if parts.iter().any(|p| p.rows() != n) {
            return Err(dim_err!("concat_cols with differing row counts"));
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.row_slice(i));
            }
        }
        Ok(Tensor::matrix(n, total, data))
    }

    pub fn repeat_rows(&self, n: usize) -> Tensor {
        let m = self.len();
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Tensor::matrix(n, m, data)
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (n, m) = (self.rows(), self.cols());
        if start + len > m {
            return Err(dim_err!("slice {start}..{} of {m} columns", start + len));
        }
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&self.data[i * m + start..i * m + start + len]);
        }
        Ok(Tensor::matrix(n, len, data))
    }

    /// Selects rows by index (gather).
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let m = self.cols();
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor::matrix(idx.len(), m, data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: the caller guarantees `a` spans m x k and `b` spans k x n under
    // the given strides; `c` is a fresh m x n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}
