//! Dense row-major f64 matrices and the handful of kernels the network needs.
//!
//! Every kernel has a fixed summation order (ascending inner index), so
//! results are bit-identical across runs and across thread counts: rayon
//! only ever splits work along output rows.

use rayon::prelude::*;

/// Row-major dense matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Rectified linear unit. One definition shared by kernels and oracles so
/// both sides round identically.
#[inline(always)]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Minimum row count per rayon task; keeps scheduling overhead negligible
/// for small matrices.
const PAR_CHUNK: usize = 256;

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * w` where `w` is `cols x n`. Accumulation over the shared
    /// dimension runs in ascending order per output element, identical to a
    /// scalar dot-product loop.
    pub fn matmul(&self, w: &Mat) -> Mat {
        assert_eq!(self.cols, w.rows, "matmul shape mismatch");
        let n = w.cols;
        let mut out = Mat::zeros(self.rows, n);
        out.data
            .par_chunks_mut(PAR_CHUNK * n)
            .zip(self.data.par_chunks(PAR_CHUNK * self.cols))
            .for_each(|(ochunk, ichunk)| {
                for (orow, irow) in ochunk.chunks_mut(n).zip(ichunk.chunks(self.cols)) {
                    for (k, &a) in irow.iter().enumerate() {
                        let wrow = &w.data[k * n..(k + 1) * n];
                        for (o, &b) in orow.iter_mut().zip(wrow) {
                            *o += a * b;
                        }
                    }
                }
            });
        out
    }

    /// `self * w + bias` broadcast over rows.
    pub fn linear(&self, w: &Mat, bias: &[f64]) -> Mat {
        assert_eq!(w.cols, bias.len(), "bias width mismatch");
        let mut out = self.matmul(w);
        for i in 0..out.rows {
            let row = out.row_mut(i);
            for (o, &b) in row.iter_mut().zip(bias) {
                *o += b;
            }
        }
        out
    }

    pub fn relu_inplace(&mut self) {
        for v in &mut self.data {
            *v = relu(*v);
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// Per-row normalization: subtract the row mean, divide by the row standard
/// deviation, then apply a learned scale and shift per channel.
pub const NORM_EPS: f64 = 1e-5;

pub fn row_normalize(x: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    assert_eq!(x.cols(), gamma.len());
    assert_eq!(x.cols(), beta.len());
    let c = x.cols();
    let mut out = Mat::zeros(x.rows(), c);
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        let orow = out.row_mut(i);
        for j in 0..c {
            orow[j] = (row[j] - mean) * inv * gamma[j] + beta[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_scalar_loop() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert_eq!(c.get(i, j), acc);
            }
        }
    }

    #[test]
    fn linear_adds_bias() {
        let x = Mat::from_vec(1, 2, vec![1.0, 1.0]);
        let w = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let y = x.linear(&w, &[0.5, -0.5]);
        assert_eq!(y.row(0), &[1.5, 0.5]);
    }

    #[test]
    fn row_normalize_zero_mean_unit_scale() {
        let x = Mat::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let y = row_normalize(&x, &[1.0; 4], &[0.0; 4]);
        let mean: f64 = y.row(0).iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }
}
