//! Built-in SPD test matrices.
//!
//! `laplace1d(n)` is the tridiagonal (-1, 2, -1) stencil, `laplace2d(k)`
//! the 5-point stencil on a k x k grid, and `band(n, b, delta)` a
//! diagonally dominant matrix fully populated within a periodic band of
//! half-bandwidth `b`. The band wraps around, so every pair of row blocks
//! within ring distance `ceil(b * N / n)` is coupled; growing `b` past
//! `ceil(rho * n / (2N))` covers all backup edges with product traffic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MatrixSpec {
    Laplace1d { n: usize },
    Laplace2d { k: usize },
    Band { n: usize, half_bandwidth: usize, dominance: f64 },
}

pub fn generate_matrix(spec: MatrixSpec) -> Result<SparseMatrix> {
    match spec {
        MatrixSpec::Laplace1d { n } => {
            if n == 0 {
                return Err(Error::InvalidArgument("laplace1d needs n >= 1".into()));
            }
            Ok(crate::matrix::tridiag(n, -1.0, 2.0))
        }
        MatrixSpec::Laplace2d { k } => {
            if k == 0 {
                return Err(Error::InvalidArgument("laplace2d needs k >= 1".into()));
            }
            let n = k * k;
            let mut t = Vec::with_capacity(5 * n);
            for iy in 0..k {
                for ix in 0..k {
                    let row = iy * k + ix;
                    t.push((row, row, 4.0));
                    if ix > 0 {
                        t.push((row, row - 1, -1.0));
                    }
                    if ix + 1 < k {
                        t.push((row, row + 1, -1.0));
                    }
                    if iy > 0 {
                        t.push((row, row - k, -1.0));
                    }
                    if iy + 1 < k {
                        t.push((row, row + k, -1.0));
                    }
                }
            }
            SparseMatrix::from_triplets(n, n, &t)
        }
        MatrixSpec::Band { n, half_bandwidth, dominance } => {
            if n == 0 || half_bandwidth == 0 {
                return Err(Error::InvalidArgument(
                    "band needs n >= 1 and half-bandwidth >= 1".into(),
                ));
            }
            if 2 * half_bandwidth >= n {
                return Err(Error::InvalidArgument(format!(
                    "half-bandwidth {half_bandwidth} too large for n = {n} with wrap-around"
                )));
            }
            if dominance <= 0.0 {
                return Err(Error::InvalidArgument("dominance must be positive".into()));
            }
            let mut t = Vec::with_capacity((2 * half_bandwidth + 1) * n);
            // off-diagonal value depends only on the ring distance, keeping
            // the matrix symmetric; the diagonal makes each row strictly
            // dominant by the factor (1 + dominance)
            let mut row_offdiag_sum = 0.0;
            for d in 1..=half_bandwidth {
                row_offdiag_sum += 2.0 / d as f64;
            }
            let diag = (1.0 + dominance) * row_offdiag_sum;
            for i in 0..n {
                t.push((i, i, diag));
                for d in 1..=half_bandwidth {
                    let v = -1.0 / d as f64;
                    t.push((i, (i + d) % n, v));
                    t.push((i, (i + n - d) % n, v));
                }
            }
            SparseMatrix::from_triplets(n, n, &t)
        }
    }
}

impl FromStr for MatrixSpec {
    type Err = Error;

    /// Parses `laplace1d:N`, `laplace2d:K` or `band:N:B:DELTA`.
    fn from_str(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let usage = || {
            Error::InvalidArgument(format!(
                "bad generator spec '{text}', expected laplace1d:N, laplace2d:K or band:N:B:DELTA"
            ))
        };
        match parts.as_slice() {
            ["laplace1d", n] => Ok(MatrixSpec::Laplace1d {
                n: n.parse().map_err(|_| usage())?,
            }),
            ["laplace2d", k] => Ok(MatrixSpec::Laplace2d {
                k: k.parse().map_err(|_| usage())?,
            }),
            ["band", n, b, delta] => Ok(MatrixSpec::Band {
                n: n.parse().map_err(|_| usage())?,
                half_bandwidth: b.parse().map_err(|_| usage())?,
                dominance: delta.parse().map_err(|_| usage())?,
            }),
            _ => Err(usage()),
        }
    }
}

impl fmt::Display for MatrixSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixSpec::Laplace1d { n } => write!(f, "laplace1d:{n}"),
            MatrixSpec::Laplace2d { k } => write!(f, "laplace2d:{k}"),
            MatrixSpec::Band { n, half_bandwidth, dominance } => {
                write!(f, "band:{n}:{half_bandwidth}:{dominance}")
            }
        }
    }
}
