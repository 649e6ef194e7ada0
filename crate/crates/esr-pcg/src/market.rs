//! Matrix Market coordinate-format reader.
//!
//! Accepts `matrix coordinate real {general|symmetric}` headers. Symmetric
//! files are expanded to full storage so that row-wise kernels and
//! submatrix extraction see explicit entries. Indices are 1-based on disk
//! and 0-based in memory. Duplicate entries are summed.

use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;

pub fn parse_matrix_market(text: &str) -> Result<SparseMatrix> {
    let mut lines = text.lines().enumerate();

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty input"))?;
    let header = header.trim();
    let mut fields = header.split_whitespace();
    if fields.next() != Some("%%MatrixMarket") {
        return Err(parse_err(header_line + 1, "header must start with %%MatrixMarket"));
    }
    if fields.next() != Some("matrix") {
        return Err(parse_err(header_line + 1, "object must be 'matrix'"));
    }
    if fields.next() != Some("coordinate") {
        return Err(parse_err(header_line + 1, "format must be 'coordinate'"));
    }
    match fields.next() {
        Some("real") => {}
        Some(other) => {
            return Err(parse_err(
                header_line + 1,
                &format!("unsupported field '{other}', only 'real' is accepted"),
            ));
        }
        None => return Err(parse_err(header_line + 1, "missing field qualifier")),
    }
    let symmetric = match fields.next() {
        Some("general") => false,
        Some("symmetric") => true,
        Some(other) => {
            return Err(parse_err(
                header_line + 1,
                &format!("unsupported symmetry '{other}', expected 'general' or 'symmetric'"),
            ));
        }
        None => return Err(parse_err(header_line + 1, "missing symmetry qualifier")),
    };

    // skip comments and blank lines up to the size line
    let mut size_line = None;
    for (idx, line) in lines.by_ref() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        size_line = Some((idx, trimmed.to_string()));
        break;
    }
    let (size_idx, size_text) =
        size_line.ok_or_else(|| parse_err(header_line + 2, "missing size line"))?;
    let dims: Vec<&str> = size_text.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(parse_err(size_idx + 1, "size line must be 'rows cols nnz'"));
    }
    let n_rows = parse_count(dims[0], size_idx)?;
    let n_cols = parse_count(dims[1], size_idx)?;
    let declared = parse_count(dims[2], size_idx)?;

    let mut triplets = Vec::with_capacity(if symmetric { 2 * declared } else { declared });
    let mut seen = 0usize;
    for (idx, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(idx + 1, "entry line must be 'row col value'"));
        }
        let r = parse_count(parts[0], idx)?;
        let c = parse_count(parts[1], idx)?;
        let v: f64 = parts[2]
            .parse()
            .map_err(|_| parse_err(idx + 1, &format!("'{}' is not a real value", parts[2])))?;
        if r == 0 || c == 0 || r > n_rows || c > n_cols {
            return Err(parse_err(
                idx + 1,
                &format!("index ({r}, {c}) out of bounds for {n_rows}x{n_cols} matrix"),
            ));
        }
        let (r, c) = (r - 1, c - 1);
        triplets.push((r, c, v));
        if symmetric {
            if c > r {
                return Err(parse_err(
                    idx + 1,
                    "symmetric file stores an entry above the diagonal",
                ));
            }
            if c < r {
                triplets.push((c, r, v));
            }
        }
        seen += 1;
    }
    if seen != declared {
        return Err(parse_err(
            size_idx + 1,
            &format!("size line declares {declared} entries, found {seen}"),
        ));
    }
    SparseMatrix::from_triplets(n_rows, n_cols, &triplets)
}

fn parse_count(text: &str, idx: usize) -> Result<usize> {
    text.parse()
        .map_err(|_| parse_err(idx + 1, &format!("'{text}' is not a non-negative integer")))
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}
