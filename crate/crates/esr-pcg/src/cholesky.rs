//! Dense Cholesky factorization.
//!
//! Used for the exact block Jacobi preconditioner, the direct recovery
//! subsystem solve and as a test oracle. Matrices are densified first, so
//! this is meant for blocks up to a few thousand rows.

use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;

/// Lower-triangular Cholesky factor `L` with `A = L L^T`, stored row-major.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    // full n*n buffer; only the lower triangle is referenced
    factor: Vec<f64>,
}

impl DenseCholesky {
    /// Factorizes a square sparse matrix after densification.
    pub fn factorize(a: &SparseMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "cholesky: matrix is {}x{}",
                a.n_rows(),
                a.n_cols()
            )));
        }
        Self::factorize_dense(a.n_rows(), a.to_dense())
    }

    /// Factorizes a dense row-major buffer in place.
    pub fn factorize_dense(n: usize, mut a: Vec<f64>) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        for j in 0..n {
            for k in 0..=j {
                let mut s = a[j * n + k];
                // dot over the leading parts of rows j and k, contiguous
                let (row_j, row_k) = (&a[j * n..j * n + k], &a[k * n..k * n + k]);
                for m in 0..k {
                    s -= row_j[m] * row_k[m];
                }
                if k == j {
                    if s <= 0.0 {
                        return Err(Error::NotSpd(format!(
                            "non-positive pivot {s:e} at row {j}"
                        )));
                    }
                    a[j * n + j] = s.sqrt();
                } else {
                    a[j * n + k] = s / a[k * n + k];
                }
            }
        }
        Ok(DenseCholesky { n, factor: a })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` by forward and backward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let n = self.n;
        let l = &self.factor;
        // L y = b
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[i * n + k] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
    }
}

/// Solves `A x = b` for an SPD matrix by dense Cholesky.
pub fn direct_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "direct_solve: matrix has {} rows, vector has length {}",
            a.n_rows(),
            b.len()
        )));
    }
    Ok(DenseCholesky::factorize(a)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{norm2, rel_l2_deviation};
    use crate::matrix::tridiag;

    #[test]
    fn identity_solve() {
        let a = SparseMatrix::identity(4);
        let x = direct_solve(&a, &[5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(x, vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn tridiag2_hand_inverse() {
        // [2 -1; -1 2] x = [1, 0]  =>  x = [2/3, 1/3]
        let a = tridiag(2, -1.0, 2.0);
        let x = direct_solve(&a, &[1.0, 0.0]).unwrap();
        assert!(rel_l2_deviation(&x, &[2.0 / 3.0, 1.0 / 3.0]) < 1e-15);
    }

    #[test]
    fn zero_diagonal_is_rejected() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 0.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(direct_solve(&a, &[1.0, 1.0]), Err(Error::NotSpd(_))));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -2.0)]).unwrap();
        assert!(matches!(direct_solve(&a, &[1.0, 1.0]), Err(Error::NotSpd(_))));
    }

    #[test]
    fn solve_then_spmv_round_trips() {
        let a = tridiag(50, -1.0, 2.0);
        let b: Vec<f64> = (0..50).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let x = direct_solve(&a, &b).unwrap();
        let bb = a.spmv(&x).unwrap();
        let mut diff = bb.clone();
        for i in 0..50 {
            diff[i] -= b[i];
        }
        assert!(norm2(&diff) / norm2(&b) < 1e-12);
    }
}
