//! Dense row-major `f64` matrices and the handful of kernels the model needs.
//!
//! Every reduction runs in a fixed order, so results are bit-reproducible
//! regardless of how often a computation is repeated.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::normal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| normal(rng, 0.0, std)).collect();
        Self { rows, cols, data }
    }

    /// Whether the stored data length agrees with the shape; only a
    /// hand-edited or corrupt serialized matrix can fail this.
    pub fn is_well_formed(&self) -> bool {
        self.data.len() == self.rows * self.cols
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

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · otherᵀ` where `self` is `t×k` and `other` is `n×k`; result `t×n`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let (t, n) = (self.rows, other.rows);
        if n < BLOCK {
            let mut out = Matrix::zeros(t, n);
            for i in 0..t {
                let x = self.row(i);
                for j in 0..n {
                    out.data[i * n + j] = dot(x, other.row(j));
                }
            }
            return out;
        }
        self.matmul(&other.transpose())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other` where `self` is `t×n` and `other` is `n×k`; result `t×k`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let (t, k) = (self.rows, other.cols);
        let mut out = Matrix::zeros(t, k);
        let full = k / BLOCK * BLOCK;
        let mut i = 0;
        while i < t {
            let pair = i + 1 < t;
            let x0 = self.row(i);
            let x1 = if pair { self.row(i + 1) } else { x0 };
            for j in (0..full).step_by(BLOCK) {
                let [r0, r1] = kernel_2xb(x0, x1, other, j);
                out.data[i * k + j..i * k + j + BLOCK].copy_from_slice(&r0);
                if pair {
                    out.data[(i + 1) * k + j..(i + 1) * k + j + BLOCK].copy_from_slice(&r1);
                }
            }
            if full < k {
                for (p, (&a0, &a1)) in x0.iter().zip(x1).enumerate() {
                    let w = &other.row(p)[full..];
                    axpy(a0, w, &mut out.data[i * k + full..(i + 1) * k]);
                    if pair {
                        axpy(a1, w, &mut out.data[(i + 1) * k + full..(i + 2) * k]);
                    }
                }
            }
            i += 2;
        }
        out
    }

    /// `acc += selfᵀ · other` where `self` is `t×a` and `other` is `t×b`.
    pub fn t_matmul_acc(&self, other: &Matrix, acc: &mut Matrix) {
        assert_eq!(self.rows, other.rows, "t_matmul row count");
        assert_eq!(acc.shape(), (self.cols, other.cols), "t_matmul accumulator shape");
        for t in 0..self.rows {
            let x = self.row(t);
            let y = other.row(t);
            for (a, &xa) in x.iter().enumerate() {
                if xa != 0.0 {
                    axpy(xa, y, acc.row_mut(a));
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn hadamard_in_place(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "hadamard shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= *b;
        }
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| if libm::fabs(*v) > m { libm::fabs(*v) } else { m })
    }
}

/// Dot product with four independent accumulators (fixed summation order).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Output tile width of the matmul kernel.
const BLOCK: usize = 8;

/// Rows `x0`, `x1` times columns `j..j+BLOCK` of `w`, accumulated in order.
#[inline(always)]
fn kernel_2xb(x0: &[f64], x1: &[f64], w: &Matrix, j: usize) -> [[f64; BLOCK]; 2] {
    let mut acc0 = [0.0f64; BLOCK];
    let mut acc1 = [0.0f64; BLOCK];
    for (p, (&a0, &a1)) in x0.iter().zip(x1).enumerate() {
        let row: &[f64; BLOCK] = w.row(p)[j..j + BLOCK].try_into().unwrap();
        for c in 0..BLOCK {
            acc0[c] += a0 * row[c];
            acc1[c] += a1 * row[c];
        }
    }
    [acc0, acc1]
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
