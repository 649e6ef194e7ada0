//! Distributed preconditioned conjugate gradient iteration over the
//! simulated cluster.
//!
//! Starting from `x = 0`: `r = b`, `z = M^-1 r`, `p = z`, then per
//! iteration `alpha = (r^T z) / (p^T A p)`, updates of `x` and `r`, a local
//! preconditioner application, `beta = (r'^T z') / (r^T z)` and the search
//! direction update. The product `A p` runs through the cluster exchange,
//! which also refreshes the backup copies; the two scalar reductions use
//! the fixed-order allreduce. Convergence is judged on the recurrence
//! residual.
//!
//! Failure events fire right after the product exchange of their
//! iteration, the one point in the loop where the backup stores carry both
//! retained search direction generations of the current state. Recovery
//! reconstructs the full state on replacement nodes and the iteration
//! resumes at the same index.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, FailureSchedule, FailureTrigger, PreconditionerKind};
use crate::dense::dot;
use crate::error::{Error, Result};
use crate::recovery::{run_recovery, RecoveryReport, RecoverySettings};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once the residual norm has dropped by this factor.
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub preconditioner: PreconditionerKind,
    /// Redundant copies to maintain (rho).
    pub redundancy: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tolerance: 1e-8,
            max_iterations: 10_000,
            preconditioner: PreconditionerKind::BlockJacobiExact,
            redundancy: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance < 1.0) {
            return Err(Error::Config(format!(
                "rel_tolerance must lie in (0, 1), got {}",
                self.rel_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverEvent {
    Failure { iteration: usize, nodes: Vec<usize> },
    Recovery { iteration: usize, restarts: usize },
}

/// Per-iteration scalars and event markers.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IterationTrace {
    /// `||r||` per iteration, starting with the initial residual.
    pub residual_norms: Vec<f64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub events: Vec<SolverEvent>,
}

/// Engine bookkeeping; the replicated scalars live on the nodes.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub iteration: usize,
    pub initial_residual_norm: f64,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Global solver state captured at an iteration boundary.
#[derive(Debug, Clone, Serialize)]
pub struct StateSnapshot {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

pub fn capture_snapshot(cluster: &Cluster, iteration: usize) -> Result<StateSnapshot> {
    Ok(StateSnapshot {
        iteration,
        x: cluster.assemble_global(|d| d.x())?,
        r: cluster.assemble_global(|d| d.residual())?,
        z: cluster.assemble_global(|d| &d.z)?,
        p: cluster.assemble_global(|d| d.search_direction())?,
    })
}

/// Initializes the solver state on every node: `r = b - A x` with `x = 0`,
/// `z = M^-1 r`, `p = z`, replicated scalars seeded.
pub fn pcg_init(cluster: &mut Cluster, config: &SolverConfig) -> Result<SolverState> {
    config.validate()?;
    if !cluster.failed_set().is_empty() {
        return Err(Error::Config("cannot initialize with failed nodes".into()));
    }
    for i in 0..cluster.node_count() {
        let node = cluster.node(i);
        let r = node.b_seg.clone();
        let z = Cluster::apply_local_preconditioner(node, &r);
        let d = cluster.dynamic_mut(i);
        for v in d.x.iter_mut() {
            *v = 0.0;
        }
        d.p.copy_from_slice(&z);
        for v in d.p_prev.iter_mut() {
            *v = 0.0;
        }
        d.r = r;
        d.z = z;
        d.alpha = 0.0;
        d.beta = 0.0;
        d.beta_prev = 0.0;
    }
    let rho_dot = cluster.allreduce_scalar(|_, d| dot(&d.r, &d.z), |d, v| d.rho_dot = v)?;
    let r_norm_sq = cluster.allreduce_scalar(|_, d| dot(&d.r, &d.r), |_, _| {})?;
    if !rho_dot.is_finite() || !r_norm_sq.is_finite() {
        return Err(Error::Breakdown("non-finite initial residual".into()));
    }
    let r_norm = r_norm_sq.sqrt();
    Ok(SolverState {
        iteration: 0,
        initial_residual_norm: r_norm,
        residual_norm: r_norm,
        converged: r_norm == 0.0,
    })
}

/// Runs one full iteration: exchange, then the scalar and vector updates.
pub fn pcg_step(
    cluster: &mut Cluster,
    state: &mut SolverState,
    config: &SolverConfig,
    trace: &mut IterationTrace,
) -> Result<bool> {
    cluster.exchange_spmv(state.iteration)?;
    step_after_exchange(cluster, state, config, trace)
}

/// The part of an iteration after the product exchange. Split out so the
/// run loop can interpose failure injection and recovery between the
/// exchange and the updates.
pub(crate) fn step_after_exchange(
    cluster: &mut Cluster,
    state: &mut SolverState,
    config: &SolverConfig,
    trace: &mut IterationTrace,
) -> Result<bool> {
    let p_dot_ap = cluster.allreduce_scalar(|_, d| dot(&d.p, &d.u), |_, _| {})?;
    if !(p_dot_ap > 0.0) {
        return Err(Error::Breakdown(format!(
            "p^T A p = {p_dot_ap} at iteration {}; matrix is not positive definite",
            state.iteration
        )));
    }
    let rho_dot = cluster.dynamic(0).rho_dot;
    let alpha = rho_dot / p_dot_ap;
    for i in 0..cluster.node_count() {
        let node = cluster.node(i);
        let r_new: Vec<f64> = {
            let d = node.dynamic().unwrap();
            d.r.iter().zip(&d.u).map(|(r, u)| r - alpha * u).collect()
        };
        let z_new = Cluster::apply_local_preconditioner(node, &r_new);
        let d = cluster.dynamic_mut(i);
        d.alpha = alpha;
        for (x, p) in d.x.iter_mut().zip(&d.p) {
            *x += alpha * p;
        }
        d.r = r_new;
        d.z = z_new;
    }
    let rho_new = cluster.allreduce_scalar(|_, d| dot(&d.r, &d.z), |_, _| {})?;
    let r_norm_sq = cluster.allreduce_scalar(|_, d| dot(&d.r, &d.r), |_, _| {})?;
    if !rho_new.is_finite() || !r_norm_sq.is_finite() {
        return Err(Error::Breakdown(format!(
            "non-finite residual at iteration {}",
            state.iteration
        )));
    }
    let beta = rho_new / rho_dot;
    for i in 0..cluster.node_count() {
        let d = cluster.dynamic_mut(i);
        d.beta = beta;
        d.beta_prev = beta;
        std::mem::swap(&mut d.p, &mut d.p_prev);
        for k in 0..d.p.len() {
            d.p[k] = d.z[k] + beta * d.p_prev[k];
        }
        d.rho_dot = rho_new;
    }
    let r_norm = r_norm_sq.sqrt();
    trace.alphas.push(alpha);
    trace.betas.push(beta);
    trace.residual_norms.push(r_norm);
    state.iteration += 1;
    state.residual_norm = r_norm;
    state.converged = r_norm <= config.rel_tolerance * state.initial_residual_norm;
    Ok(state.converged)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Capture global state at these iteration boundaries.
    pub snapshot_at: Vec<usize>,
    pub recovery: RecoverySettings,
    /// Reference states to measure recovery deviations against, keyed by
    /// iteration.
    pub ground_truth: Vec<StateSnapshot>,
    pub capture_post_recovery: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PcgOutcome {
    pub converged: bool,
    pub iterations: usize,
    pub initial_residual_norm: f64,
    pub final_residual_norm: f64,
    /// Set when the run ended because reconstruction was impossible.
    pub failure: Option<String>,
    pub trace: IterationTrace,
    pub recoveries: Vec<RecoveryReport>,
    #[serde(skip)]
    pub snapshots: Vec<StateSnapshot>,
    #[serde(skip)]
    pub post_recovery_states: Vec<StateSnapshot>,
    /// Final iterate and recurrence residual, assembled globally.
    #[serde(skip)]
    pub x: Vec<f64>,
    #[serde(skip)]
    pub solver_residual: Vec<f64>,
    /// Relative residual difference; None when `b - A x` is exactly zero.
    pub residual_difference: Option<f64>,
    /// Events whose trigger never fired (e.g. past convergence).
    pub unfired_events: usize,
}

/// Full run: iterate until convergence or the iteration cap, injecting the
/// scheduled failures and recovering from them.
pub fn pcg_run(
    cluster: &mut Cluster,
    config: &SolverConfig,
    schedule: &FailureSchedule,
    options: &RunOptions,
) -> Result<PcgOutcome> {
    schedule.validate(cluster.node_count(), config.redundancy)?;
    if cluster.plan().redundancy() != config.redundancy {
        return Err(Error::Config(format!(
            "cluster plan holds {} redundant copies, solver config expects {}",
            cluster.plan().redundancy(),
            config.redundancy
        )));
    }

    let mut at_events: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut overlap_events: VecDeque<BTreeSet<usize>> = VecDeque::new();
    for event in &schedule.events {
        match event.trigger {
            FailureTrigger::AtIteration(t) => {
                at_events.insert(t, event.nodes.clone());
            }
            FailureTrigger::DuringRecovery => overlap_events.push_back(event.nodes.clone()),
        }
    }

    let ground_truth: BTreeMap<usize, &StateSnapshot> = options
        .ground_truth
        .iter()
        .map(|s| (s.iteration, s))
        .collect();

    let mut trace = IterationTrace::default();
    let mut state = pcg_init(cluster, config)?;
    trace.residual_norms.push(state.initial_residual_norm);

    let mut snapshots = Vec::new();
    let mut post_recovery_states = Vec::new();
    let mut recoveries: Vec<RecoveryReport> = Vec::new();
    let mut failure: Option<String> = None;

    while !state.converged && state.iteration < config.max_iterations {
        let j = state.iteration;
        if options.snapshot_at.contains(&j) {
            snapshots.push(capture_snapshot(cluster, j)?);
        }
        cluster.exchange_spmv(j)?;
        if let Some(nodes) = at_events.remove(&j) {
            cluster.inject_failures(&nodes, j)?;
            trace.events.push(SolverEvent::Failure {
                iteration: j,
                nodes: nodes.iter().copied().collect(),
            });
            let report = run_recovery(
                cluster,
                &options.recovery,
                &mut overlap_events,
                j,
                ground_truth.get(&j).copied(),
            )?;
            trace.events.push(SolverEvent::Recovery {
                iteration: j,
                restarts: report.restarted_count,
            });
            let ok = report.reconstructed;
            let diagnostic = report.error.clone();
            recoveries.push(report);
            if !ok {
                failure = Some(diagnostic.unwrap_or_else(|| "reconstruction failed".into()));
                break;
            }
            if options.capture_post_recovery {
                post_recovery_states.push(capture_snapshot(cluster, j)?);
            }
        }
        step_after_exchange(cluster, &mut state, config, &mut trace)?;
    }

    let unfired_events = at_events.len() + overlap_events.len();
    let (x, solver_residual, residual_difference) = if failure.is_none() {
        let x = cluster.assemble_global(|d| d.x())?;
        let r = cluster.assemble_global(|d| d.residual())?;
        let delta = crate::recovery::relative_residual_difference(
            &r,
            cluster.matrix(),
            &x,
            cluster.rhs(),
        )?;
        (x, r, delta)
    } else {
        (Vec::new(), Vec::new(), None)
    };

    Ok(PcgOutcome {
        converged: state.converged,
        iterations: state.iteration,
        initial_residual_norm: state.initial_residual_norm,
        final_residual_norm: state.residual_norm,
        failure,
        trace,
        recoveries,
        snapshots,
        post_recovery_states,
        x,
        solver_residual,
        residual_difference,
        unfired_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{build_cluster, CostModel};
    use crate::dense::{norm2, rel_l2_deviation};
    use crate::matrix::{tridiag, SparseMatrix};
    use crate::partition::partition_rows;
    use crate::pattern::compute_send_sets;
    use crate::plan::compute_redundancy_plan;

    fn cluster_for(
        a: &SparseMatrix,
        b: Vec<f64>,
        nodes: usize,
        rho: usize,
        kind: PreconditionerKind,
    ) -> Cluster {
        let part = partition_rows(a.n_rows(), nodes).unwrap();
        let pattern = compute_send_sets(a, &part).unwrap();
        let plan = compute_redundancy_plan(&pattern, rho).unwrap();
        build_cluster(a.clone(), b, part, plan, kind, CostModel::default()).unwrap()
    }

    fn config(rho: usize, kind: PreconditionerKind) -> SolverConfig {
        SolverConfig {
            redundancy: rho,
            preconditioner: kind,
            ..Default::default()
        }
    }

    #[test]
    fn init_with_identity_preconditioner_copies_residual() {
        let a = tridiag(8, -1.0, 2.0);
        let b: Vec<f64> = (0..8).map(|i| i as f64 + 1.0).collect();
        let mut cluster = cluster_for(&a, b.clone(), 4, 0, PreconditionerKind::Identity);
        let state = pcg_init(&mut cluster, &config(0, PreconditionerKind::Identity)).unwrap();
        assert!(!state.converged);
        let r = cluster.assemble_global(|d| d.residual()).unwrap();
        let z = cluster.assemble_global(|d| &d.z).unwrap();
        let p = cluster.assemble_global(|d| d.search_direction()).unwrap();
        assert_eq!(r, b);
        assert_eq!(z, b);
        assert_eq!(p, b);
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let a = tridiag(8, -1.0, 2.0);
        let mut cluster = cluster_for(&a, vec![0.0; 8], 4, 0, PreconditionerKind::BlockJacobiExact);
        let cfg = config(0, PreconditionerKind::BlockJacobiExact);
        let outcome = pcg_run(
            &mut cluster,
            &cfg,
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(outcome.converged);
        assert_eq!(outcome.iterations, 0);
    }

    #[test]
    fn identity_matrix_converges_in_one_step_with_x_equal_b() {
        let a = SparseMatrix::identity(8);
        let b: Vec<f64> = (0..8).map(|i| (i as f64) - 3.5).collect();
        let mut cluster = cluster_for(&a, b.clone(), 4, 0, PreconditionerKind::Identity);
        let cfg = config(0, PreconditionerKind::Identity);
        let outcome = pcg_run(
            &mut cluster,
            &cfg,
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(outcome.converged);
        assert_eq!(outcome.iterations, 1);
        assert_eq!(outcome.x, b);
    }

    #[test]
    fn block_jacobi_on_block_diagonal_matrix_converges_in_one_iteration() {
        // 4 nodes, 2x2 blocks, no coupling between blocks: the local solves
        // apply the exact inverse
        let mut t = Vec::new();
        for blk in 0..4 {
            let o = 2 * blk;
            t.extend_from_slice(&[
                (o, o, 3.0),
                (o, o + 1, -1.0),
                (o + 1, o, -1.0),
                (o + 1, o + 1, 3.0),
            ]);
        }
        let a = SparseMatrix::from_triplets(8, 8, &t).unwrap();
        let b: Vec<f64> = (0..8).map(|i| 1.0 + (i % 3) as f64).collect();
        let mut cluster = cluster_for(&a, b, 4, 0, PreconditionerKind::BlockJacobiExact);
        let cfg = config(0, PreconditionerKind::BlockJacobiExact);
        let outcome = pcg_run(
            &mut cluster,
            &cfg,
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(outcome.converged);
        assert_eq!(outcome.iterations, 1);
    }

    #[test]
    fn one_by_one_blocks_are_diagonal_scaling() {
        let a = SparseMatrix::from_triplets(4, 4, &[(0, 0, 2.0), (1, 1, 4.0), (2, 2, 8.0), (3, 3, 16.0)])
            .unwrap();
        let b = vec![2.0, 4.0, 8.0, 16.0];
        let mut cluster = cluster_for(&a, b, 4, 0, PreconditionerKind::BlockJacobiExact);
        let cfg = config(0, PreconditionerKind::BlockJacobiExact);
        let outcome = pcg_run(
            &mut cluster,
            &cfg,
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(outcome.converged);
        assert_eq!(outcome.iterations, 1);
        assert!(rel_l2_deviation(&outcome.x, &[1.0; 4]) < 1e-14);
    }

    #[test]
    fn converges_to_direct_solve_solution() {
        let a = tridiag(32, -1.0, 2.0);
        let b: Vec<f64> = (0..32).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let mut cluster = cluster_for(&a, b.clone(), 8, 0, PreconditionerKind::BlockJacobiExact);
        let cfg = config(0, PreconditionerKind::BlockJacobiExact);
        let outcome = pcg_run(
            &mut cluster,
            &cfg,
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(outcome.converged);
        assert!(outcome.iterations <= 32);
        let exact = crate::cholesky::direct_solve(&a, &b).unwrap();
        assert!(rel_l2_deviation(&outcome.x, &exact) < 1e-7);
    }

    #[test]
    fn breakdown_on_indefinite_matrix() {
        // symmetric but indefinite: passes the structural check (positive
        // diagonal), caught by p^T A p <= 0
        let a = SparseMatrix::from_triplets(
            4,
            4,
            &[
                (0, 0, 1.0),
                (0, 1, 3.0),
                (1, 0, 3.0),
                (1, 1, 1.0),
                (2, 2, 1.0),
                (3, 3, 1.0),
            ],
        )
        .unwrap();
        // rhs with a component on the negative eigenvector [1, -1] of the
        // leading block
        let b = vec![1.0, 0.0, 1.0, 1.0];
        let mut cluster = cluster_for(&a, b, 2, 0, PreconditionerKind::Identity);
        let cfg = config(0, PreconditionerKind::Identity);
        let result = pcg_run(
            &mut cluster,
            &cfg,
            &FailureSchedule::empty(),
            &RunOptions::default(),
        );
        assert!(matches!(result, Err(Error::Breakdown(_))));
    }

    #[test]
    fn replicated_scalars_identical_on_every_node() {
        let a = tridiag(16, -1.0, 2.0);
        let b: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3) - 2.0).collect();
        let mut cluster = cluster_for(&a, b, 4, 1, PreconditionerKind::BlockJacobiExact);
        let cfg = config(1, PreconditionerKind::BlockJacobiExact);
        let mut state = pcg_init(&mut cluster, &cfg).unwrap();
        let mut trace = IterationTrace::default();
        for _ in 0..3 {
            pcg_step(&mut cluster, &mut state, &cfg, &mut trace).unwrap();
            let d0 = cluster.dynamic(0);
            let (alpha, beta, rho) = (d0.alpha, d0.beta, d0.rho_dot);
            for i in 1..cluster.node_count() {
                let d = cluster.dynamic(i);
                assert_eq!(d.alpha.to_bits(), alpha.to_bits());
                assert_eq!(d.beta.to_bits(), beta.to_bits());
                assert_eq!(d.rho_dot.to_bits(), rho.to_bits());
            }
        }
    }

    #[test]
    fn recurrence_residual_tracks_true_residual() {
        let a = tridiag(64, -1.0, 2.0);
        let b: Vec<f64> = (0..64).map(|i| ((i % 7) as f64) - 3.0).collect();
        let mut cluster = cluster_for(&a, b.clone(), 8, 0, PreconditionerKind::BlockJacobiExact);
        let cfg = config(0, PreconditionerKind::BlockJacobiExact);
        let mut state = pcg_init(&mut cluster, &cfg).unwrap();
        let mut trace = IterationTrace::default();
        for _ in 0..5 {
            if pcg_step(&mut cluster, &mut state, &cfg, &mut trace).unwrap() {
                break;
            }
            let x = cluster.assemble_global(|d| d.x()).unwrap();
            let r = cluster.assemble_global(|d| d.residual()).unwrap();
            let ax = a.spmv(&x).unwrap();
            let mut gap = Vec::with_capacity(64);
            for i in 0..64 {
                gap.push(r[i] - (b[i] - ax[i]));
            }
            assert!(norm2(&gap) / norm2(&b) <= 1e-10);
        }
    }

    #[test]
    fn redundancy_level_does_not_change_iterates() {
        let a = tridiag(64, -1.0, 2.0);
        let b: Vec<f64> = (0..64).map(|i| ((i * 5 % 13) as f64) - 6.0).collect();
        let mut runs = Vec::new();
        for rho in [0usize, 3] {
            let mut cluster =
                cluster_for(&a, b.clone(), 8, rho, PreconditionerKind::BlockJacobiExact);
            let cfg = config(rho, PreconditionerKind::BlockJacobiExact);
            let outcome = pcg_run(
                &mut cluster,
                &cfg,
                &FailureSchedule::empty(),
                &RunOptions::default(),
            )
            .unwrap();
            runs.push(outcome);
        }
        assert_eq!(runs[0].iterations, runs[1].iterations);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&runs[0].x), bits(&runs[1].x));
        assert_eq!(bits(&runs[0].trace.alphas), bits(&runs[1].trace.alphas));
        assert_eq!(bits(&runs[0].trace.betas), bits(&runs[1].trace.betas));
    }

    #[test]
    fn schedule_violating_redundancy_is_a_config_error() {
        let a = tridiag(16, -1.0, 2.0);
        let mut cluster = cluster_for(&a, vec![1.0; 16], 4, 1, PreconditionerKind::Identity);
        let cfg = config(1, PreconditionerKind::Identity);
        let schedule = FailureSchedule::at_iteration(1, [0, 1]);
        let result = pcg_run(&mut cluster, &cfg, &schedule, &RunOptions::default());
        assert!(matches!(result, Err(Error::Config(_))));
    }

    #[test]
    fn residual_difference_examples() {
        let a = tridiag(8, -1.0, 2.0);
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let ax = a.spmv(&x).unwrap();
        let true_r: Vec<f64> = b.iter().zip(&ax).map(|(u, v)| u - v).collect();
        let delta =
            crate::recovery::relative_residual_difference(&true_r, &a, &x, &b).unwrap();
        assert_eq!(delta, Some(0.0));
        let doubled: Vec<f64> = true_r.iter().map(|v| 2.0 * v).collect();
        let delta =
            crate::recovery::relative_residual_difference(&doubled, &a, &x, &b).unwrap();
        assert_eq!(delta, Some(1.0));
        // exact solution: metric undefined
        let exact = crate::cholesky::direct_solve(&a, &b).unwrap();
        let bb = a.spmv(&exact).unwrap();
        let delta =
            crate::recovery::relative_residual_difference(&vec![0.0; 8], &a, &exact, &bb)
                .unwrap();
        assert_eq!(delta, None);
    }
}
