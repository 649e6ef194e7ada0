//! The communication pattern induced by a matrix sparsity pattern under a
//! block-row distribution.
//!
//! During the distributed product `u = A p`, node `k` needs the element
//! `p[s]` owned by node `i` exactly when some row of `A` owned by `k` has a
//! stored entry in column `s`. The set of such elements is the send set
//! `S_ik`. Send sets depend only on the sparsity pattern and the partition,
//! so they are computed once per run.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;
use crate::partition::BlockRowPartition;

#[derive(Debug, Clone)]
pub struct CommPattern {
    part: BlockRowPartition,
    // send_sets[i]: receiver -> sorted global indices of S_ik, k != i.
    // Receivers without coupling are absent.
    send_sets: Vec<BTreeMap<usize, Vec<usize>>>,
}

/// Enumerates the minimal send sets for the given matrix and partition.
pub fn compute_send_sets(a: &SparseMatrix, part: &BlockRowPartition) -> Result<CommPattern> {
    if a.n_rows() != a.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "send sets require a square matrix, got {}x{}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    if a.n_rows() != part.n() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} rows, matrix has {}",
            part.n(),
            a.n_rows()
        )));
    }
    let n_nodes = part.node_count();
    let mut sets: Vec<BTreeMap<usize, BTreeSet<usize>>> = vec![BTreeMap::new(); n_nodes];
    for (row, col, _) in a.iter_triplets() {
        let receiver = part.owner_of(row);
        let owner = part.owner_of(col);
        if owner != receiver {
            sets[owner].entry(receiver).or_default().insert(col);
        }
    }
    let send_sets = sets
        .into_iter()
        .map(|per_owner| {
            per_owner
                .into_iter()
                .map(|(recv, set)| (recv, set.into_iter().collect()))
                .collect()
        })
        .collect();
    Ok(CommPattern {
        part: part.clone(),
        send_sets,
    })
}

impl CommPattern {
    pub fn node_count(&self) -> usize {
        self.part.node_count()
    }

    pub fn partition(&self) -> &BlockRowPartition {
        &self.part
    }

    /// Sorted elements of `S_ik`; empty when the pair is uncoupled.
    pub fn send_set(&self, owner: usize, receiver: usize) -> &[usize] {
        self.send_sets[owner]
            .get(&receiver)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Receivers of node `i`'s elements, ascending, excluding `i` itself.
    pub fn receivers(&self, owner: usize) -> impl Iterator<Item = usize> + '_ {
        self.send_sets[owner].keys().copied()
    }

    /// Multiplicity `m_i(s)`: the number of distinct other nodes element `s`
    /// reaches during the product.
    pub fn multiplicity(&self, owner: usize, element: usize) -> Result<usize> {
        if !self.part.range(owner).contains(&element) {
            return Err(Error::InvalidArgument(format!(
                "element {element} is not owned by node {owner}"
            )));
        }
        Ok(self
            .send_sets[owner]
            .values()
            .filter(|set| set.binary_search(&element).is_ok())
            .count())
    }

    /// True when `s` is sent from `owner` to `receiver` during the product.
    pub fn sends_to(&self, owner: usize, receiver: usize, element: usize) -> bool {
        self.send_set(owner, receiver).binary_search(&element).is_ok()
    }
}
