//! Exact state reconstruction after fail-stop node failures.
//!
//! With the union index set of the failed blocks written `I_f`, recovery
//! proceeds on the replacement nodes as:
//!
//! 1. reload static data (matrix rows, rhs segment, preconditioner block),
//! 2. gather the surviving iterate and residual elements the following
//!    steps need,
//! 3. retrieve the backup copies of the two retained search direction
//!    blocks and the replicated scalar `beta`,
//! 4. `z_f = p_f - beta_prev * p_prev_f`,
//! 5. `r_f = M_ff z_f` (the preconditioner is block diagonal, so its
//!    off-diagonal coupling vanishes),
//! 6. solve `A_ff x_f = b_f - r_f - A[I_f, rest] x_rest`, directly for
//!    small unions and with an inner solver otherwise,
//! 7. reinstall the state, re-seed lost backup copies and rebuild the
//!    local product block so the iteration can resume in place.
//!
//! A failure arriving while reconstruction is in flight restarts it over
//! the enlarged failed set. More distinct failures than the planned
//! redundancy is reported as unrecoverable, never patched over.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cholesky::DenseCholesky;
use crate::cluster::{BackupAge, Cluster, TraceEvent};
use crate::dense::{dot, norm2, rel_l2_deviation};
use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;
use crate::solver::StateSnapshot;

/// How the recovery subsystem `A_ff x_f = w` is solved.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerSolveKind {
    /// Dense Cholesky on the extracted submatrix.
    Direct,
    /// Inner conjugate gradient with per-failed-node block Jacobi, run to
    /// the given relative residual reduction.
    Iterative { tol: f64 },
    /// Direct up to the row threshold, iterative beyond it.
    Auto { direct_threshold: usize, tol: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoverySettings {
    pub inner: InnerSolveKind,
    pub max_inner_iterations: usize,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        RecoverySettings {
            inner: InnerSolveKind::Auto {
                direct_threshold: 4096,
                tol: 1e-14,
            },
            max_inner_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct RecoveryCommCost {
    pub messages: u64,
    pub elements: u64,
    pub model_time: f64,
}

/// Relative deviations of the reconstructed blocks from a reference state.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StateDeviation {
    pub x: f64,
    pub r: f64,
    pub z: f64,
    pub p: f64,
}

impl StateDeviation {
    pub fn max(&self) -> f64 {
        self.x.max(self.r).max(self.z).max(self.p)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub failed_nodes: Vec<usize>,
    pub trigger_iteration: usize,
    pub reconstructed: bool,
    /// Times the reconstruction was restarted by an overlapping failure.
    pub restarted_count: usize,
    pub inner_iterations: usize,
    pub comm: RecoveryCommCost,
    /// Deviations against a reference run, when one was supplied.
    pub deviation: Option<StateDeviation>,
    pub error: Option<String>,
}

/// Everything gathered before reconstruction can run.
#[derive(Debug, Clone)]
pub struct RecoveryTask {
    pub failed: Vec<usize>,
    /// Union of the failed row ranges, ascending.
    pub union_rows: Vec<usize>,
    pub beta_prev: f64,
    /// Retrieved copies of the current and previous search direction over
    /// the union rows.
    pub p_cur: Vec<f64>,
    pub p_prev: Vec<f64>,
    /// Surviving iterate elements needed by the failed rows, by global
    /// column.
    pub gathered_x: BTreeMap<usize, f64>,
}

/// Deterministic ledger of recovery messages, one entry per (from, to).
#[derive(Debug, Default)]
struct CostLedger {
    pairs: BTreeMap<(usize, usize), u64>,
}

impl CostLedger {
    fn add(&mut self, from: usize, to: usize, elements: u64) {
        if from != to {
            *self.pairs.entry((from, to)).or_default() += elements;
        }
    }

    fn total(&self, cluster: &Cluster) -> RecoveryCommCost {
        let mut cost = RecoveryCommCost::default();
        for &count in self.pairs.values() {
            cost.messages += 1;
            cost.elements += count;
            cost.model_time +=
                cluster.cost().latency.base() + count as f64 * cluster.cost().per_element;
        }
        cost
    }
}

/// Drives a full reconstruction, restarting whenever a pending
/// during-recovery failure fires. Returns a report; `reconstructed: false`
/// means the state could not be rebuilt (the cluster is left failed).
pub fn run_recovery(
    cluster: &mut Cluster,
    settings: &RecoverySettings,
    pending_overlaps: &mut VecDeque<BTreeSet<usize>>,
    iteration: usize,
    ground_truth: Option<&StateSnapshot>,
) -> Result<RecoveryReport> {
    let rho = cluster.plan().redundancy();
    let mut restarted_count = 0usize;
    loop {
        let failed: Vec<usize> = cluster.failed_set().iter().copied().collect();
        if failed.len() > rho {
            return Ok(RecoveryReport {
                failed_nodes: failed.clone(),
                trigger_iteration: iteration,
                reconstructed: false,
                restarted_count,
                inner_iterations: 0,
                comm: RecoveryCommCost::default(),
                deviation: None,
                error: Some(format!(
                    "{} distinct failed nodes exceed the redundancy {rho}",
                    failed.len()
                )),
            });
        }
        cluster.provision_replacements()?;

        let task = match gather_surviving(cluster, &failed) {
            Ok(task) => task,
            Err(Error::Unrecoverable(msg)) => {
                return Ok(RecoveryReport {
                    failed_nodes: failed.clone(),
                    trigger_iteration: iteration,
                    reconstructed: false,
                    restarted_count,
                    inner_iterations: 0,
                    comm: RecoveryCommCost::default(),
                    deviation: None,
                    error: Some(msg),
                });
            }
            Err(other) => return Err(other),
        };

        // Overlapping failures are checked between recovery stages; a new
        // one discards the current task and restarts over the union.
        if let Some(extra) = pending_overlaps.pop_front() {
            cluster.inject_failures(&extra, iteration)?;
            restarted_count += 1;
            cluster.push_trace(TraceEvent::RecoveryRestart {
                iteration,
                nodes: extra.iter().copied().collect(),
            });
            continue;
        }

        let (p_cur, p_prev, z_f) = reconstruct_p_z(&task);
        let r_f = reconstruct_r(cluster, &task, &z_f)?;
        let (x_f, inner_iterations) = reconstruct_x(cluster, &task, &r_f, settings)?;
        let comm = finalize_recovery(cluster, &task, &p_cur, &p_prev, &z_f, &r_f, &x_f)?;

        let deviation = ground_truth.map(|truth| deviation_on(&task, truth, &x_f, &r_f, &z_f, &p_cur));

        cluster.push_trace(TraceEvent::RecoveryComplete {
            iteration,
            nodes: task.failed.clone(),
            restarts: restarted_count,
        });
        return Ok(RecoveryReport {
            failed_nodes: task.failed,
            trigger_iteration: iteration,
            reconstructed: true,
            restarted_count,
            inner_iterations,
            comm,
            deviation,
            error: None,
        });
    }
}

/// Stage 1: locate and fetch the surviving inputs of the reconstruction.
/// Backup copies come from the lowest surviving holder of each element;
/// iterate elements come from their owners.
pub fn gather_surviving(cluster: &mut Cluster, failed: &[usize]) -> Result<RecoveryTask> {
    let mut union_rows = Vec::new();
    for &f in failed {
        union_rows.extend(cluster.partition().range(f));
    }
    let survivors: Vec<usize> = (0..cluster.node_count())
        .filter(|i| !cluster.failed_set().contains(i))
        .collect();
    let lowest_survivor = *survivors
        .first()
        .ok_or_else(|| Error::Unrecoverable("no surviving nodes".into()))?;
    let beta_prev = cluster.dynamic(lowest_survivor).beta_prev;

    let mut ledger = CostLedger::default();
    let mut p_cur = Vec::with_capacity(union_rows.len());
    let mut p_prev = Vec::with_capacity(union_rows.len());
    for &f in failed {
        for s in cluster.partition().range(f) {
            let cur = survivors.iter().find_map(|&h| {
                cluster
                    .node(h)
                    .dynamic()
                    .and_then(|d| d.backup_copy(f, BackupAge::Current, s))
                    .map(|v| (h, v))
            });
            match cur {
                Some((holder, value)) => {
                    ledger.add(holder, f, 1);
                    p_cur.push(value);
                }
                None => {
                    return Err(Error::Unrecoverable(format!(
                        "no surviving copy of search direction element {s} (owner {f})"
                    )));
                }
            }
            let prev = survivors.iter().find_map(|&h| {
                cluster
                    .node(h)
                    .dynamic()
                    .and_then(|d| d.backup_copy(f, BackupAge::Previous, s))
                    .map(|v| (h, v))
            });
            match prev {
                Some((holder, value)) => {
                    ledger.add(holder, f, 1);
                    p_prev.push(value);
                }
                // before the second exchange no previous generation exists;
                // the retained block is still the zero vector and beta is 0
                None if beta_prev == 0.0 => p_prev.push(0.0),
                None => {
                    return Err(Error::Unrecoverable(format!(
                        "no surviving copy of previous search direction element {s} (owner {f})"
                    )));
                }
            }
        }
    }

    // iterate elements needed by A[I_f, outside]
    let coordinator = failed[0];
    let mut gathered_x = BTreeMap::new();
    for &f in failed {
        for (_, c, _) in cluster.node(f).a_rows.iter_triplets() {
            if union_rows.binary_search(&c).is_err() {
                gathered_x.entry(c).or_insert(0.0);
            }
        }
    }
    let keys: Vec<usize> = gathered_x.keys().copied().collect();
    for c in keys {
        let owner = cluster.partition().owner_of(c);
        debug_assert!(!cluster.failed_set().contains(&owner));
        let start = cluster.partition().range(owner).start;
        let value = cluster.dynamic(owner).x[c - start];
        gathered_x.insert(c, value);
        ledger.add(owner, coordinator, 1);
    }

    let cost = ledger.total(cluster);
    cluster.add_recovery_cost(cost.messages, cost.elements, cost.model_time);
    Ok(RecoveryTask {
        failed: failed.to_vec(),
        union_rows,
        beta_prev,
        p_cur,
        p_prev,
        gathered_x,
    })
}

/// Stage 2: both search direction generations are exact copies, and the
/// preconditioned residual follows from the search direction recurrence,
/// `z_f = p_f - beta_prev * p_prev_f`.
pub fn reconstruct_p_z(task: &RecoveryTask) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let z_f: Vec<f64> = task
        .p_cur
        .iter()
        .zip(&task.p_prev)
        .map(|(p, q)| p - task.beta_prev * q)
        .collect();
    (task.p_cur.clone(), task.p_prev.clone(), z_f)
}

/// Stage 3: undo the preconditioner application. The block Jacobi
/// preconditioner is aligned with the partition, so its off-diagonal
/// blocks vanish and `r_f = M_ff z_f` block by block; the identity
/// preconditioner copies.
pub fn reconstruct_r(cluster: &Cluster, task: &RecoveryTask, z_f: &[f64]) -> Result<Vec<f64>> {
    let mut r_f = Vec::with_capacity(z_f.len());
    let mut offset = 0;
    for &f in &task.failed {
        let len = cluster.partition().size(f);
        let seg = cluster.apply_local_preconditioner_matrix(f, &z_f[offset..offset + len])?;
        r_f.extend_from_slice(&seg);
        offset += len;
    }
    Ok(r_f)
}

/// Stage 4: solve the coupled subsystem over the union rows,
/// `A_ff x_f = b_f - r_f - A[I_f, rest] x_rest`.
pub fn reconstruct_x(
    cluster: &Cluster,
    task: &RecoveryTask,
    r_f: &[f64],
    settings: &RecoverySettings,
) -> Result<(Vec<f64>, usize)> {
    let rows = &task.union_rows;
    let mut w = Vec::with_capacity(rows.len());
    let mut local = 0;
    for &f in &task.failed {
        let node = cluster.node(f);
        let start = node.range().start;
        for g in node.range() {
            let (cols, vals) = node.a_rows.row(g - start);
            let mut coupling = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                if rows.binary_search(&c).is_err() {
                    coupling += v * task.gathered_x[&c];
                }
            }
            w.push(node.b_seg[g - start] - r_f[local] - coupling);
            local += 1;
        }
    }

    let a_ff = cluster.matrix().extract_submatrix(rows, rows)?;
    let use_direct = match settings.inner {
        InnerSolveKind::Direct => true,
        InnerSolveKind::Iterative { .. } => false,
        InnerSolveKind::Auto {
            direct_threshold, ..
        } => rows.len() <= direct_threshold,
    };
    if use_direct {
        let x_f = DenseCholesky::factorize(&a_ff)
            .map_err(|e| Error::Recovery(format!("subsystem factorization: {e}")))?
            .solve(&w);
        Ok((x_f, 0))
    } else {
        let tol = match settings.inner {
            InnerSolveKind::Iterative { tol } | InnerSolveKind::Auto { tol, .. } => tol,
            InnerSolveKind::Direct => unreachable!(),
        };
        let block_sizes: Vec<usize> = task
            .failed
            .iter()
            .map(|&f| cluster.partition().size(f))
            .collect();
        inner_pcg(&a_ff, &w, &block_sizes, tol, settings.max_inner_iterations)
    }
}

/// Inner conjugate gradient for the recovery subsystem, preconditioned by
/// exact solves with the per-failed-node diagonal blocks.
fn inner_pcg(
    a: &SparseMatrix,
    b: &[f64],
    block_sizes: &[usize],
    tol: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n_rows();
    let mut factors = Vec::with_capacity(block_sizes.len());
    let mut offset = 0;
    for &len in block_sizes {
        let rows: Vec<usize> = (offset..offset + len).collect();
        let block = a.extract_submatrix(&rows, &rows)?;
        factors.push((
            offset,
            len,
            DenseCholesky::factorize(&block)
                .map_err(|e| Error::Recovery(format!("inner block factorization: {e}")))?,
        ));
        offset += len;
    }
    let apply_precond = |r: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; n];
        for (offset, len, chol) in &factors {
            let seg = chol.solve(&r[*offset..offset + len]);
            z[*offset..offset + len].copy_from_slice(&seg);
        }
        z
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0_norm = norm2(&r);
    if r0_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut z = apply_precond(&r);
    let mut p = z.clone();
    let mut rho = dot(&r, &z);
    let mut r_norm = r0_norm;
    for it in 1..=max_iterations {
        let u = a.spmv(&p)?;
        let p_dot_u = dot(&p, &u);
        if !(p_dot_u > 0.0) {
            return Err(Error::Recovery(format!(
                "inner solver breakdown: p^T A p = {p_dot_u}"
            )));
        }
        let alpha = rho / p_dot_u;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * u[i];
        }
        r_norm = norm2(&r);
        if r_norm <= tol * r0_norm {
            return Ok((x, it));
        }
        z = apply_precond(&r);
        let rho_new = dot(&r, &z);
        let beta = rho_new / rho;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rho = rho_new;
    }
    Err(Error::Recovery(format!(
        "inner solver stalled at relative residual {:e} after {max_iterations} iterations",
        r_norm / r0_norm
    )))
}

/// Stage 5: install the reconstructed blocks and replicated scalars on the
/// replacements, re-seed every backup copy a failed holder was keeping,
/// and rebuild the product block so the iteration can resume. Restores the
/// full redundancy invariant before the solver continues.
pub fn finalize_recovery(
    cluster: &mut Cluster,
    task: &RecoveryTask,
    p_cur: &[f64],
    p_prev: &[f64],
    z_f: &[f64],
    r_f: &[f64],
    x_f: &[f64],
) -> Result<RecoveryCommCost> {
    let failed_set: BTreeSet<usize> = task.failed.iter().copied().collect();
    let survivors: Vec<usize> = (0..cluster.node_count())
        .filter(|i| !failed_set.contains(i))
        .collect();
    let scalar_source = *survivors.first().expect("at least one survivor");
    let (alpha, beta, beta_prev, rho_dot) = {
        let d = cluster.dynamic(scalar_source);
        (d.alpha, d.beta, d.beta_prev, d.rho_dot)
    };

    let mut ledger = CostLedger::default();
    let coordinator = task.failed[0];

    // install per-replacement state
    let mut offset = 0;
    for &f in &task.failed {
        let len = cluster.partition().size(f);
        let seg = offset..offset + len;
        if f != coordinator {
            // subsystem solved jointly; ship the foreign blocks over
            ledger.add(coordinator, f, len as u64);
        }
        let d = cluster.dynamic_mut(f);
        d.x.copy_from_slice(&x_f[seg.clone()]);
        d.r.copy_from_slice(&r_f[seg.clone()]);
        d.z.copy_from_slice(&z_f[seg.clone()]);
        d.p.copy_from_slice(&p_cur[seg.clone()]);
        d.p_prev.copy_from_slice(&p_prev[seg.clone()]);
        d.alpha = alpha;
        d.beta = beta;
        d.beta_prev = beta_prev;
        d.rho_dot = rho_dot;
        offset += len;
    }

    // re-seed backup copies hosted on replacement nodes: every owner with
    // an edge into a failed node resends both retained generations
    let mut reseeded = 0u64;
    for owner in 0..cluster.node_count() {
        let edges: Vec<(usize, Vec<usize>)> = cluster
            .pattern()
            .receivers(owner)
            .map(|r| (r, cluster.pattern().send_set(owner, r).to_vec()))
            .collect();
        // merge in backup-only edges from the plan
        let mut merged: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (r, set) in edges {
            merged.entry(r).or_default().extend(set);
        }
        for k in 1..=cluster.plan().redundancy() {
            let d = cluster.plan().destination(owner, k);
            let extra = cluster.plan().extra_set(owner, k);
            if !extra.is_empty() {
                merged.entry(d).or_default().extend(extra.iter().copied());
            }
        }
        for (holder, elements) in merged {
            if !failed_set.contains(&holder) {
                continue;
            }
            let owner_start = cluster.partition().range(owner).start;
            let values: Vec<(usize, f64, f64)> = {
                let d = cluster.dynamic(owner);
                elements
                    .iter()
                    .map(|&g| (g, d.p[g - owner_start], d.p_prev[g - owner_start]))
                    .collect()
            };
            ledger.add(owner, holder, 2 * values.len() as u64);
            reseeded += 2 * values.len() as u64;
            let dh = cluster.dynamic_mut(holder);
            let slot = dh
                .backups
                .get_mut(&owner)
                .expect("plan edge without a slot");
            for (g, cur, prev) in values {
                let pos = slot
                    .indices
                    .binary_search(&g)
                    .expect("element outside slot indices");
                slot.current[pos] = cur;
                slot.previous[pos] = prev;
            }
            slot.has_current = true;
            slot.has_previous = true;
        }
    }

    // rebuild the product block on each replacement from the reconstructed
    // search direction and the surviving halo
    for &f in &task.failed {
        let node = cluster.node(f);
        let start = node.range().start;
        let needed: Vec<usize> = {
            let mut cols = BTreeSet::new();
            for (_, c, _) in node.a_rows.iter_triplets() {
                cols.insert(c);
            }
            cols.into_iter().collect()
        };
        let mut halo_count: BTreeMap<usize, u64> = BTreeMap::new();
        let mut values = Vec::with_capacity(needed.len());
        for &c in &needed {
            let owner = cluster.partition().owner_of(c);
            let owner_start = cluster.partition().range(owner).start;
            let v = cluster.dynamic(owner).p[c - owner_start];
            values.push((c, v));
            if owner != f {
                *halo_count.entry(owner).or_default() += 1;
            }
        }
        for (owner, count) in halo_count {
            ledger.add(owner, f, count);
        }
        let d = cluster.dynamic_mut(f);
        for (c, v) in values {
            d.scratch[c] = v;
        }
        cluster.recompute_u(f);
        let _ = start;
    }

    cluster.mark_recovered();
    let cost = ledger.total(cluster);
    cluster.add_recovery_cost(cost.messages, cost.elements, cost.model_time);
    cluster.stats.extra_elements += reseeded;
    Ok(cost)
}

fn deviation_on(
    task: &RecoveryTask,
    truth: &StateSnapshot,
    x_f: &[f64],
    r_f: &[f64],
    z_f: &[f64],
    p_f: &[f64],
) -> StateDeviation {
    let restrict = |global: &[f64]| -> Vec<f64> {
        task.union_rows.iter().map(|&g| global[g]).collect()
    };
    StateDeviation {
        x: rel_l2_deviation(x_f, &restrict(&truth.x)),
        r: rel_l2_deviation(r_f, &restrict(&truth.r)),
        z: rel_l2_deviation(z_f, &restrict(&truth.z)),
        p: rel_l2_deviation(p_f, &restrict(&truth.p)),
    }
}

/// Relative residual difference `(||r_solver|| - ||b - A x||) / ||b - A x||`.
/// Returns None when the true residual is exactly zero.
pub fn relative_residual_difference(
    r_solver: &[f64],
    a: &SparseMatrix,
    x: &[f64],
    b: &[f64],
) -> Result<Option<f64>> {
    if r_solver.len() != a.n_rows() || x.len() != a.n_cols() || b.len() != a.n_rows() {
        return Err(Error::DimensionMismatch(
            "relative_residual_difference: inconsistent lengths".into(),
        ));
    }
    let ax = a.spmv(x)?;
    let mut true_residual = Vec::with_capacity(b.len());
    for i in 0..b.len() {
        true_residual.push(b[i] - ax[i]);
    }
    let true_norm = norm2(&true_residual);
    if true_norm == 0.0 {
        return Ok(None);
    }
    Ok(Some((norm2(r_solver) - true_norm) / true_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{build_cluster, CostModel, PreconditionerKind};
    use crate::generate::{generate_matrix, MatrixSpec};
    use crate::matrix::tridiag;
    use crate::partition::partition_rows;
    use crate::pattern::compute_send_sets;
    use crate::plan::compute_redundancy_plan;
    use crate::solver::{pcg_init, pcg_step, SolverConfig};

    fn stepped_cluster(n: usize, nodes: usize, rho: usize, steps: usize) -> Cluster {
        let a = generate_matrix(MatrixSpec::Laplace1d { n }).unwrap();
        let b = crate::experiment::default_rhs(&a);
        let part = partition_rows(n, nodes).unwrap();
        let pattern = compute_send_sets(&a, &part).unwrap();
        let plan = compute_redundancy_plan(&pattern, rho).unwrap();
        let mut cluster = build_cluster(
            a,
            b,
            part,
            plan,
            PreconditionerKind::BlockJacobiExact,
            CostModel::default(),
        )
        .unwrap();
        let config = SolverConfig {
            redundancy: rho,
            ..Default::default()
        };
        let mut state = pcg_init(&mut cluster, &config).unwrap();
        let mut trace = Default::default();
        for _ in 0..steps {
            pcg_step(&mut cluster, &mut state, &config, &mut trace).unwrap();
        }
        cluster
    }

    #[test]
    fn first_iteration_recovery_sets_z_equal_p() {
        let task = RecoveryTask {
            failed: vec![1],
            union_rows: vec![2, 3],
            beta_prev: 0.0,
            p_cur: vec![0.5, -0.25],
            p_prev: vec![0.0, 0.0],
            gathered_x: BTreeMap::new(),
        };
        let (p, _, z) = reconstruct_p_z(&task);
        assert_eq!(z, p);
    }

    #[test]
    fn z_reconstruction_applies_the_direction_recurrence() {
        let task = RecoveryTask {
            failed: vec![0],
            union_rows: vec![0, 1],
            beta_prev: 0.5,
            p_cur: vec![2.0, 3.0],
            p_prev: vec![1.0, -1.0],
            gathered_x: BTreeMap::new(),
        };
        let (_, _, z) = reconstruct_p_z(&task);
        assert_eq!(z, vec![1.5, 3.5]);
    }

    #[test]
    fn destroyed_coverage_is_detected_not_patched() {
        let mut cluster = stepped_cluster(64, 4, 1, 2);
        let victim = 2usize;
        // adversarially erase every surviving copy of the victim's block
        for holder in 0..cluster.node_count() {
            if holder == victim {
                continue;
            }
            let d = cluster.dynamic_mut(holder);
            if let Some(slot) = d.backups.get_mut(&victim) {
                slot.has_current = false;
                slot.has_previous = false;
            }
        }
        cluster
            .inject_failures(&BTreeSet::from([victim]), 2)
            .unwrap();
        let report = run_recovery(
            &mut cluster,
            &RecoverySettings::default(),
            &mut VecDeque::new(),
            2,
            None,
        )
        .unwrap();
        assert!(!report.reconstructed);
        assert!(report
            .error
            .unwrap()
            .contains("no surviving copy"));
    }

    #[test]
    fn missing_previous_generation_is_fatal_once_beta_is_nonzero() {
        let mut cluster = stepped_cluster(64, 4, 1, 3);
        let victim = 1usize;
        for holder in 0..cluster.node_count() {
            if holder == victim {
                continue;
            }
            let d = cluster.dynamic_mut(holder);
            if let Some(slot) = d.backups.get_mut(&victim) {
                slot.has_previous = false;
            }
        }
        cluster
            .inject_failures(&BTreeSet::from([victim]), 3)
            .unwrap();
        let report = run_recovery(
            &mut cluster,
            &RecoverySettings::default(),
            &mut VecDeque::new(),
            3,
            None,
        )
        .unwrap();
        assert!(!report.reconstructed);
        assert!(report.error.unwrap().contains("previous"));
    }

    #[test]
    fn direct_and_iterative_inner_agree() {
        let run = |settings: RecoverySettings| {
            let mut cluster = stepped_cluster(128, 8, 2, 3);
            cluster
                .inject_failures(&BTreeSet::from([3, 4]), 3)
                .unwrap();
            let report = run_recovery(
                &mut cluster,
                &settings,
                &mut VecDeque::new(),
                3,
                None,
            )
            .unwrap();
            assert!(report.reconstructed);
            (
                cluster.assemble_global(|d| d.x()).unwrap(),
                report.inner_iterations,
            )
        };
        let (x_direct, it_direct) = run(RecoverySettings {
            inner: InnerSolveKind::Direct,
            max_inner_iterations: 10_000,
        });
        let (x_iterative, it_iterative) = run(RecoverySettings {
            inner: InnerSolveKind::Iterative { tol: 1e-14 },
            max_inner_iterations: 10_000,
        });
        assert_eq!(it_direct, 0);
        assert!(it_iterative > 0);
        assert!(crate::dense::rel_l2_deviation(&x_iterative, &x_direct) <= 1e-8);
    }

    #[test]
    fn inner_solver_cap_is_reported() {
        // two coupled failed blocks: the per-block inner preconditioner is
        // no longer the exact inverse and one iteration cannot converge
        let mut cluster = stepped_cluster(128, 8, 2, 3);
        cluster.inject_failures(&BTreeSet::from([3, 4]), 3).unwrap();
        let result = run_recovery(
            &mut cluster,
            &RecoverySettings {
                inner: InnerSolveKind::Iterative { tol: 1e-14 },
                max_inner_iterations: 1,
            },
            &mut VecDeque::new(),
            3,
            None,
        );
        match result {
            Err(Error::Recovery(msg)) => assert!(msg.contains("stalled")),
            other => panic!("expected inner-solver stall, got {other:?}"),
        }
    }

    #[test]
    fn residual_difference_rejects_bad_dimensions() {
        let a = tridiag(4, -1.0, 2.0);
        let err = relative_residual_difference(&[1.0; 3], &a, &[0.0; 4], &[1.0; 4]);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }
}
