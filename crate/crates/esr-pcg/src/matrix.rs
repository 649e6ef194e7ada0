//! Compressed sparse row matrices.
//!
//! The same type stores the global system matrix, per-node row blocks and
//! extracted submatrices. Entries within a row are kept in strictly
//! ascending column order, which fixes the accumulation order of every
//! matrix-vector product.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets in any order.
    /// Duplicate positions are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) out of bounds for {n_rows}x{n_cols} matrix"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut rows = Vec::with_capacity(sorted.len());
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            if rows.last() == Some(&r) && col_indices.last() == Some(&c) {
                *values.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                col_indices.push(c);
                values.push(v);
            }
        }
        let mut row_offsets = vec![0usize; n_rows + 1];
        for &r in &rows {
            row_offsets[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a matrix from raw CSR arrays, validating the storage invariants.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 {
            return Err(Error::InvalidArgument(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n_rows + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[n_rows] != col_indices.len() {
            return Err(Error::InvalidArgument(
                "row_offsets must start at 0 and end at the entry count".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(Error::InvalidArgument(
                "col_indices and values have different lengths".into(),
            ));
        }
        for r in 0..n_rows {
            if row_offsets[r] > row_offsets[r + 1] {
                return Err(Error::InvalidArgument("row_offsets must be non-decreasing".into()));
            }
            let row = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidArgument(format!(
                        "columns in row {r} are not strictly increasing"
                    )));
                }
            }
            if let Some(&last) = row.last() {
                if last >= n_cols {
                    return Err(Error::InvalidArgument(format!(
                        "column index {last} in row {r} exceeds {n_cols}"
                    )));
                }
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored entries in row-major order, ascending columns within a row.
    pub fn iter_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Stored value at (i, j), if present.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    /// Row-wise CSR product `A x`. Within each row the accumulation runs in
    /// ascending column order, making the result deterministic.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "spmv: matrix has {} columns, vector has length {}",
                self.n_cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// `spmv` writing into a preallocated buffer.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let lo = self.row_offsets[r];
            let hi = self.row_offsets[r + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[r] = acc;
        }
    }

    /// Extracts the submatrix with the given rows and columns, renumbered by
    /// rank within the index sets. Both sets must be sorted strictly
    /// ascending and in bounds.
    pub fn extract_submatrix(&self, rows: &[usize], cols: &[usize]) -> Result<SparseMatrix> {
        check_index_set(rows, self.n_rows, "row")?;
        check_index_set(cols, self.n_cols, "column")?;
        let mut col_rank = vec![usize::MAX; self.n_cols];
        for (rank, &c) in cols.iter().enumerate() {
            col_rank[c] = rank;
        }
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for &r in rows {
            let (rcols, rvals) = self.row(r);
            for (&c, &v) in rcols.iter().zip(rvals) {
                if col_rank[c] != usize::MAX {
                    col_indices.push(col_rank[c]);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            n_rows: rows.len(),
            n_cols: cols.len(),
            row_offsets,
            col_indices,
            values,
        })
    }

    /// True when entry (i, j) is stored iff (j, i) is stored with the exact
    /// same value.
    pub fn is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        self.iter_triplets().all(|(r, c, v)| self.get(c, r) == Some(v))
    }

    /// Structural SPD validation: exact symmetry and strictly positive
    /// diagonal. Full positive definiteness surfaces later through
    /// factorization or solver breakdown.
    pub fn check_spd_structure(&self) -> Result<()> {
        if self.n_rows != self.n_cols {
            return Err(Error::NotSpd(format!(
                "matrix is {}x{}, not square",
                self.n_rows, self.n_cols
            )));
        }
        if !self.is_symmetric() {
            return Err(Error::NotSpd("stored pattern or values are unsymmetric".into()));
        }
        for i in 0..self.n_rows {
            match self.get(i, i) {
                Some(v) if v > 0.0 => {}
                _ => {
                    return Err(Error::NotSpd(format!("diagonal entry {i} is missing or not positive")));
                }
            }
        }
        Ok(())
    }

    /// Densifies into a row-major `n_rows * n_cols` buffer.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n_rows * self.n_cols];
        for (r, c, v) in self.iter_triplets() {
            dense[r * self.n_cols + c] = v;
        }
        dense
    }
}

fn check_index_set(set: &[usize], bound: usize, what: &str) -> Result<()> {
    for w in set.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidArgument(format!(
                "{what} index set is not strictly ascending"
            )));
        }
    }
    if let Some(&last) = set.last() {
        if last >= bound {
            return Err(Error::InvalidArgument(format!(
                "{what} index {last} out of range (bound {bound})"
            )));
        }
    }
    Ok(())
}

/// Tridiagonal (off, diag, off) matrix of order `n`; the classic test
/// stencil is `tridiag(-1, 2, -1)`.
pub fn tridiag(n: usize, off: f64, diag: f64) -> SparseMatrix {
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        if i > 0 {
            t.push((i, i - 1, off));
        }
        t.push((i, i, diag));
        if i + 1 < n {
            t.push((i, i + 1, off));
        }
    }
    SparseMatrix::from_triplets(n, n, &t).unwrap()
}
