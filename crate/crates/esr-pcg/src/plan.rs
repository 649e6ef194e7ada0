//! Redundancy placement for the retained search directions.
//!
//! To survive up to `rho` simultaneous or overlapping node failures, every
//! element of the two most recent search directions must live on at least
//! `rho` nodes besides its owner. Elements already shipped to `m >= rho`
//! other nodes during the product need nothing extra; the rest are
//! piggybacked onto backup destinations in `rho` rounds.
//!
//! Round `k` sends from node `i` to `d_ik = (i + ceil(k/2)) mod N` for odd
//! `k` and `(i - k/2) mod N` for even `k`, alternating right and left so
//! that matrices clustered around the diagonal usually cover the backup
//! edges with product traffic anyway.
//!
//! An element with multiplicity `m < rho` is assigned to the first
//! `rho - m` rounds whose destination does not already receive it. Rounds
//! that do receive it contribute a copy through the product itself, so
//! every element ends up on exactly `max(m, rho)` other nodes: coverage is
//! met and no planned element can be dropped without breaking it.

use serde::Serialize;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;
use crate::partition::BlockRowPartition;
use crate::pattern::{compute_send_sets, CommPattern};

/// Backup destination `d_ik` for owner `i` in round `k` (1-based round).
pub fn backup_destination(i: usize, k: usize, node_count: usize) -> Result<usize> {
    if k == 0 || k >= node_count {
        return Err(Error::InvalidArgument(format!(
            "round {k} out of range for {node_count} nodes"
        )));
    }
    if i >= node_count {
        return Err(Error::InvalidArgument(format!(
            "node {i} out of range for {node_count} nodes"
        )));
    }
    Ok(if k % 2 == 1 {
        (i + k.div_ceil(2)) % node_count
    } else {
        // non-negative modulo
        (i + node_count - k / 2) % node_count
    })
}

#[derive(Debug, Clone)]
pub struct RedundancyPlan {
    redundancy: usize,
    node_count: usize,
    // destinations[i][k-1] = d_ik
    destinations: Vec<Vec<usize>>,
    // extra_sets[i][k-1] = sorted R_ik
    extra_sets: Vec<Vec<Vec<usize>>>,
}

/// Computes the minimal per-round extra sets guaranteeing `rho` redundant
/// copies of every owned element.
pub fn compute_redundancy_plan(pattern: &CommPattern, rho: usize) -> Result<RedundancyPlan> {
    let node_count = pattern.node_count();
    if rho >= node_count {
        return Err(Error::InvalidArgument(format!(
            "redundancy {rho} must be smaller than the node count {node_count}"
        )));
    }
    let mut destinations = vec![Vec::with_capacity(rho); node_count];
    let mut extra_sets = vec![vec![Vec::new(); rho]; node_count];
    for i in 0..node_count {
        for k in 1..=rho {
            destinations[i].push(backup_destination(i, k, node_count)?);
        }
        debug_assert_eq!(
            destinations[i].iter().collect::<BTreeSet<_>>().len(),
            rho,
            "backup destinations must be distinct"
        );

        for s in pattern.partition().range(i) {
            let m = pattern.multiplicity(i, s)?;
            if m >= rho {
                continue;
            }
            let mut remaining = rho - m;
            for k in 1..=rho {
                if remaining == 0 {
                    break;
                }
                let d = destinations[i][k - 1];
                if !pattern.sends_to(i, d, s) {
                    extra_sets[i][k - 1].push(s);
                    remaining -= 1;
                }
            }
            // A round is skipped only when its destination already receives
            // the element, and each such destination is counted in m, so
            // rho - m unblocked rounds always exist.
            debug_assert_eq!(remaining, 0);
        }
    }
    Ok(RedundancyPlan {
        redundancy: rho,
        node_count,
        destinations,
        extra_sets,
    })
}

impl RedundancyPlan {
    pub fn redundancy(&self) -> usize {
        self.redundancy
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// `d_ik` for 1-based round `k`.
    pub fn destination(&self, i: usize, k: usize) -> usize {
        self.destinations[i][k - 1]
    }

    /// Sorted `R_ik` for 1-based round `k`.
    pub fn extra_set(&self, i: usize, k: usize) -> &[usize] {
        &self.extra_sets[i][k - 1]
    }

    /// Largest extra set per round, `max_i |R_ik|` for `k = 1..rho`.
    pub fn per_round_max_extra(&self) -> Vec<usize> {
        (1..=self.redundancy)
            .map(|k| {
                (0..self.node_count)
                    .map(|i| self.extra_set(i, k).len())
                    .max()
                    .unwrap_or(0)
            })
            .collect()
    }

    /// JSON export for inspection and the planner subcommand.
    pub fn to_json(&self) -> serde_json::Value {
        let mut destinations = Vec::new();
        let mut extra_sets = Vec::new();
        for i in 0..self.node_count {
            for k in 1..=self.redundancy {
                destinations.push(serde_json::json!([i, k, self.destination(i, k)]));
                extra_sets.push(serde_json::json!([i, k, self.extra_set(i, k)]));
            }
        }
        serde_json::json!({
            "rho": self.redundancy,
            "node_count": self.node_count,
            "destinations": destinations,
            "extra_sets": extra_sets,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageViolation {
    pub owner: usize,
    pub element: usize,
    pub copies: usize,
    pub required: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanVerification {
    pub ok: bool,
    pub violations: Vec<CoverageViolation>,
}

/// Brute-force coverage check: every owned element must reach at least
/// `rho` distinct nodes other than its owner, through product traffic or
/// planned backups.
pub fn verify_plan(plan: &RedundancyPlan, pattern: &CommPattern) -> PlanVerification {
    let rho = plan.redundancy();
    let mut violations = Vec::new();
    for i in 0..pattern.node_count() {
        for s in pattern.partition().range(i) {
            let holders = holders_of(plan, pattern, i, s);
            if holders.len() < rho {
                violations.push(CoverageViolation {
                    owner: i,
                    element: s,
                    copies: holders.len(),
                    required: rho,
                });
            }
        }
    }
    PlanVerification {
        ok: violations.is_empty(),
        violations,
    }
}

/// Distinct nodes other than the owner holding a copy of element `s` after
/// one product round under the plan.
pub fn holders_of(
    plan: &RedundancyPlan,
    pattern: &CommPattern,
    owner: usize,
    s: usize,
) -> BTreeSet<usize> {
    let mut holders: BTreeSet<usize> = pattern
        .receivers(owner)
        .filter(|&k| pattern.sends_to(owner, k, s))
        .collect();
    for k in 1..=plan.redundancy() {
        if plan.extra_set(owner, k).binary_search(&s).is_ok() {
            holders.insert(plan.destination(owner, k));
        }
    }
    holders
}

/// Per-pair latencies `lambda_ik` for backup round traffic; a constant by
/// default, with optional per-pair overrides.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    default: f64,
    overrides: std::collections::BTreeMap<(usize, usize), f64>,
}

impl LatencyModel {
    pub fn constant(default: f64) -> Result<Self> {
        if default < 0.0 {
            return Err(Error::InvalidArgument("latency must be non-negative".into()));
        }
        Ok(LatencyModel {
            default,
            overrides: Default::default(),
        })
    }

    pub fn with_override(mut self, i: usize, k: usize, lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::InvalidArgument("latency must be non-negative".into()));
        }
        self.overrides.insert((i, k), lambda);
        Ok(self)
    }

    /// Latency for owner `i` in backup round `k`.
    pub fn get(&self, i: usize, k: usize) -> f64 {
        *self.overrides.get(&(i, k)).unwrap_or(&self.default)
    }

    /// Latency charged to plain product messages.
    pub fn base(&self) -> f64 {
        self.default
    }

    pub fn max(&self) -> f64 {
        self.overrides
            .values()
            .fold(self.default, |acc, &v| acc.max(v))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OverheadEstimate {
    /// Critical-path extra elements per iteration, `sum_k max_i |R_ik|`.
    pub lower_elements: usize,
    /// Cap from the model, `rho * ceil(n / N)`.
    pub upper_elements: usize,
    /// `sum_k max_i |R_ik| * beta` — overhead when every backup edge is
    /// covered by product traffic.
    pub lower_time: f64,
    /// Adds `max_i lambda_ik` for every round in which some backup pair has
    /// no product traffic.
    pub upper_time: f64,
    /// Closed-form cap `rho * (lambda_max + ceil(n/N) * beta)`.
    pub cap_time: f64,
    pub per_round_max_extra: Vec<usize>,
}

/// Bounds for the per-iteration communication overhead of maintaining the
/// redundant copies, under a latency-bandwidth model with per-element cost
/// `beta`.
pub fn estimate_overhead(
    plan: &RedundancyPlan,
    pattern: &CommPattern,
    latency: &LatencyModel,
    beta: f64,
) -> Result<OverheadEstimate> {
    if beta <= 0.0 {
        return Err(Error::InvalidArgument("per-element cost must be positive".into()));
    }
    let rho = plan.redundancy();
    let n = pattern.partition().n();
    let node_count = pattern.node_count();
    let per_round_max_extra = plan.per_round_max_extra();

    let lower_elements: usize = per_round_max_extra.iter().sum();
    let upper_elements = rho * n.div_ceil(node_count);

    let mut lower_time = 0.0;
    let mut upper_time = 0.0;
    for k in 1..=rho {
        let bandwidth_term = per_round_max_extra[k - 1] as f64 * beta;
        lower_time += bandwidth_term;
        let round_needs_new_edge = (0..node_count).any(|i| {
            pattern.send_set(i, plan.destination(i, k)).is_empty()
        });
        let latency_term = if round_needs_new_edge {
            (0..node_count).map(|i| latency.get(i, k)).fold(0.0, f64::max)
        } else {
            0.0
        };
        upper_time += latency_term + bandwidth_term;
    }
    let cap_time = rho as f64 * (latency.max() + n.div_ceil(node_count) as f64 * beta);
    Ok(OverheadEstimate {
        lower_elements,
        upper_elements,
        lower_time,
        upper_time,
        cap_time,
        per_round_max_extra,
    })
}

/// For each owner `i` and round `k`, whether the backup edge to `d_ik`
/// carries product traffic anyway, i.e. whether the submatrix
/// `A[I_{d_ik}, I_i]` has a stored entry. When true for every pair, the
/// redundant copies ride along for free latency-wise.
pub fn zero_latency_condition(
    a: &SparseMatrix,
    part: &BlockRowPartition,
    rho: usize,
) -> Result<Vec<Vec<bool>>> {
    let pattern = compute_send_sets(a, part)?;
    let node_count = part.node_count();
    if rho >= node_count {
        return Err(Error::InvalidArgument(format!(
            "redundancy {rho} must be smaller than the node count {node_count}"
        )));
    }
    let mut result = vec![Vec::with_capacity(rho); node_count];
    for i in 0..node_count {
        for k in 1..=rho {
            let d = backup_destination(i, k, node_count)?;
            result[i].push(!pattern.send_set(i, d).is_empty());
        }
    }
    Ok(result)
}
