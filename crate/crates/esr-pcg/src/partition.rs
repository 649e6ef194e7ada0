//! Contiguous block-row partition of `[0, n)` across the cluster nodes.

use std::ops::Range;

use crate::error::{Error, Result};

/// Assigns each node a contiguous half-open row interval. When `n` is not
/// divisible by the node count, the first `n mod N` nodes own the larger
/// blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRowPartition {
    n: usize,
    starts: Vec<usize>, // length node_count + 1, starts[N] == n
}

pub fn partition_rows(n: usize, node_count: usize) -> Result<BlockRowPartition> {
    if node_count == 0 {
        return Err(Error::InvalidArgument("node_count must be positive".into()));
    }
    if node_count > n {
        return Err(Error::InvalidArgument(format!(
            "node_count {node_count} exceeds row count {n}"
        )));
    }
    let base = n / node_count;
    let extra = n % node_count;
    let mut starts = Vec::with_capacity(node_count + 1);
    let mut pos = 0;
    starts.push(0);
    for i in 0..node_count {
        pos += base + usize::from(i < extra);
        starts.push(pos);
    }
    debug_assert_eq!(pos, n);
    Ok(BlockRowPartition { n, starts })
}

impl BlockRowPartition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_count(&self) -> usize {
        self.starts.len() - 1
    }

    /// Half-open row interval owned by node `i`.
    pub fn range(&self, i: usize) -> Range<usize> {
        self.starts[i]..self.starts[i + 1]
    }

    pub fn size(&self, i: usize) -> usize {
        self.starts[i + 1] - self.starts[i]
    }

    /// Largest block size, `ceil(n / N)`.
    pub fn max_block_size(&self) -> usize {
        (0..self.node_count()).map(|i| self.size(i)).max().unwrap_or(0)
    }

    /// Node owning the given global row.
    pub fn owner_of(&self, row: usize) -> usize {
        debug_assert!(row < self.n);
        match self.starts.binary_search(&row) {
            Ok(i) if i == self.node_count() => i - 1,
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.node_count()).map(|i| self.range(i))
    }
}
