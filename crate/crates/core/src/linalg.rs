//! Small dense helpers for the per-sample hot loops.
//!
//! Parameter-level work (eigendecompositions, inverses) goes through
//! `nalgebra`; per-sample work uses the row-major buffers here so that a
//! density evaluation does not allocate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix. Used for point sets and sample blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Lower Cholesky factor `L` of an SPD matrix `S = L L^T`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
}

impl CholeskyFactor {
    /// Factors `matrix`; fails if it is not numerically positive definite.
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: matrix.ncols(),
            });
        }
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularProposal("matrix is not positive definite".into()))?;
        let l = chol.l();
        let mut lower = vec![0.0; d * d];
        let mut log_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                lower[i * d + j] = l[(i, j)];
            }
            log_det += 2.0 * l[(i, i)].ln();
        }
        if !log_det.is_finite() {
            return Err(Error::SingularProposal("non-finite log-determinant".into()));
        }
        Ok(Self {
            dim: d,
            lower,
            log_det,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut lower = vec![0.0; dim * dim];
        for i in 0..dim {
            lower[i * dim + i] = 1.0;
        }
        Self {
            dim,
            lower,
            log_det: 0.0,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ln det(L L^T)`.
    #[inline]
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// `out = shift + L z`.
    #[inline]
    pub fn affine(&self, shift: &[f64], z: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i + 1];
            let mut acc = shift[i];
            for (l, zj) in row.iter().zip(z) {
                acc += l * zj;
            }
            out[i] = acc;
        }
    }

    /// Squared Mahalanobis norm `|L^{-1}(x - center)|^2` by forward substitution.
    /// `scratch` must have length `dim`.
    #[inline]
    pub fn mahalanobis_sq(&self, x: &[f64], center: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut total = 0.0;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let mut acc = x[i] - center[i];
            for (l, yj) in row.iter().zip(scratch.iter()) {
                acc -= l * yj;
            }
            let yi = acc / self.lower[i * d + i];
            scratch[i] = yi;
            total += yi * yi;
        }
        total
    }

    /// Forward substitution `out = L^{-1} x`.
    pub fn solve_lower(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lower[i * d + j] * out[j];
            }
            out[i] = acc / self.lower[i * d + i];
        }
    }

    pub fn lower_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.lower)
    }

    /// Reconstructs `L L^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.lower_matrix();
        &l * l.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs_and_solves() {
        let s = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
        let c = CholeskyFactor::new(&s).unwrap();
        assert!((c.covariance() - &s).abs().max() < 1e-12);
        assert!((c.log_det() - s.determinant().ln()).abs() < 1e-12);

        let x = [1.0, -2.0, 0.5];
        let mut y = [0.0; 3];
        c.solve_lower(&x, &mut y);
        let mut back = [0.0; 3];
        c.affine(&[0.0; 3], &y, &mut back);
        for i in 0..3 {
            assert!((back[i] - x[i]).abs() < 1e-12);
        }
        let mut scratch = [0.0; 3];
        let m = c.mahalanobis_sq(&x, &[0.0; 3], &mut scratch);
        let direct = DMatrix::from_row_slice(1, 3, &x)
            * s.clone().try_inverse().unwrap()
            * DMatrix::from_column_slice(3, 1, &x);
        assert!((m - direct[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn non_spd_is_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CholeskyFactor::new(&s),
            Err(Error::SingularProposal(_))
        ));
    }

    #[test]
    fn row_matrix_shape_checks() {
        assert!(RowMatrix::from_vec(2, 2, vec![0.0; 3]).is_err());
        let m = RowMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.iter_rows().count(), 2);
    }
}
