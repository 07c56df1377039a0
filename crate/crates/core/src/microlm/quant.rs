//! Per-row absmax int8 quantization of frozen weights.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

pub const INT8_LEVELS: f64 = 127.0;

/// Row `i` dequantizes to `values[i, j] * scales[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    values: Vec<i8>,
    scales: Vec<f64>,
}

impl QuantizedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn is_well_formed(&self) -> bool {
        self.values.len() == self.rows * self.cols && self.scales.len() == self.rows
    }
}

/// `scale_i = max_j |W_ij| / 127`, `q_ij = round(W_ij / scale_i)`.
/// An all-zero row gets scale 0 and quantizes to zeros.
pub fn quantize_int8(w: &Matrix) -> QuantizedMatrix {
    let (rows, cols) = w.shape();
    let mut values = Vec::with_capacity(rows * cols);
    let mut scales = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = w.row(i);
        let absmax = row.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
        let scale = absmax / INT8_LEVELS;
        scales.push(scale);
        for &v in row {
            let q = if scale == 0.0 {
                0.0
            } else {
                libm::round(v / scale).clamp(-INT8_LEVELS, INT8_LEVELS)
            };
            values.push(q as i8);
        }
    }
    QuantizedMatrix { rows, cols, values, scales }
}

pub fn dequantize_int8(q: &QuantizedMatrix) -> Matrix {
    let mut out = Matrix::zeros(q.rows, q.cols);
    for i in 0..q.rows {
        let s = q.scales[i];
        let src = &q.values[i * q.cols..(i + 1) * q.cols];
        for (o, &v) in out.row_mut(i).iter_mut().zip(src) {
            *o = f64::from(v) * s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn zero_matrix_round_trips_exactly() {
        let w = Matrix::zeros(4, 5);
        let q = quantize_int8(&w);
        assert!(q.scales().iter().all(|&s| s == 0.0));
        assert_eq!(dequantize_int8(&q), w);
    }

    #[test]
    fn row_absmax_maps_to_127() {
        let w = Matrix::from_rows(&[&[0.5, -2.0, 1.0], &[0.0, 0.0, 3.0]]);
        let q = quantize_int8(&w);
        assert_eq!(q.values()[1], -127);
        assert_eq!(q.values()[5], 127);
        assert_eq!(q.scales()[0], 2.0 / 127.0);
    }

    #[test]
    fn random_matrix_respects_half_step_bound() {
        let mut rng = seeded(11);
        let w = Matrix::gaussian(32, 32, 1.0, &mut rng);
        let q = quantize_int8(&w);
        let dq = dequantize_int8(&q);
        for i in 0..32 {
            let bound = q.scales()[i] / 2.0 + 1e-12;
            for j in 0..32 {
                assert!((w.get(i, j) - dq.get(i, j)).abs() <= bound);
            }
        }
    }

    proptest! {
        #[test]
        fn error_bound_holds(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>(), scale in 1e-6f64..1e3) {
            let mut rng = seeded(seed);
            let w = Matrix::gaussian(rows, cols, scale, &mut rng);
            let q = quantize_int8(&w);
            let dq = dequantize_int8(&q);
            for i in 0..rows {
                let bound = q.scales()[i] / 2.0 + 1e-12 * scale.max(1.0);
                for j in 0..cols {
                    prop_assert!((w.get(i, j) - dq.get(i, j)).abs() <= bound);
                }
            }
        }
    }
}
