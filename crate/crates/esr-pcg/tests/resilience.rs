//! Failure-injection and recovery scenarios driven through the public API.

use std::collections::{BTreeSet, VecDeque};

use esr_pcg::*;

fn make_cluster(
    a: &SparseMatrix,
    nodes: usize,
    rho: usize,
    kind: PreconditionerKind,
) -> Cluster {
    let b = experiment::default_rhs(a);
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

/// Reference snapshots at the given iterations, from a plain run.
fn snapshots_at(
    a: &SparseMatrix,
    nodes: usize,
    kind: PreconditionerKind,
    at: Vec<usize>,
) -> Vec<solver::StateSnapshot> {
    let mut cluster = make_cluster(a, nodes, 0, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(0, kind),
        &FailureSchedule::empty(),
        &RunOptions {
            snapshot_at: at,
            ..Default::default()
        },
    )
    .unwrap();
    outcome.snapshots
}

#[test]
fn single_failure_recovers_exactly_and_converges() {
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 256 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let reference = {
        let mut cluster = make_cluster(&a, 8, 0, kind);
        pcg_run(
            &mut cluster,
            &config(0, kind),
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap()
    };
    assert!(reference.converged);
    let trigger = reference.iterations / 2;
    let truth = snapshots_at(&a, 8, kind, vec![trigger]);

    let mut cluster = make_cluster(&a, 8, 1, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(1, kind),
        &FailureSchedule::at_iteration(trigger, [3]),
        &RunOptions {
            ground_truth: truth,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(outcome.converged);
    assert_eq!(outcome.recoveries.len(), 1);
    let rec = &outcome.recoveries[0];
    assert!(rec.reconstructed);
    assert_eq!(rec.failed_nodes, vec![3]);
    assert_eq!(rec.restarted_count, 0);
    let dev = rec.deviation.as_ref().unwrap();
    assert!(dev.max() <= 1e-12, "deviation {dev:?}");
    assert!((outcome.iterations as i64 - reference.iterations as i64).abs() <= 2);
    // final iterate agrees with the failure-free run
    assert!(dense::rel_l2_deviation(&outcome.x, &reference.x) <= 1e-10);
}

#[test]
fn failure_at_iteration_zero_recovers_initial_state() {
    // with the identity preconditioner the iteration-0 state is recovered
    // bit for bit: z_f = p_f = b_f, r_f = z_f, w = 0 and x_f = 0
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 64 }).unwrap();
    let kind = PreconditionerKind::Identity;
    let truth = snapshots_at(&a, 4, kind, vec![0]);
    let mut cluster = make_cluster(&a, 4, 1, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(1, kind),
        &FailureSchedule::at_iteration(0, [2]),
        &RunOptions {
            ground_truth: truth,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(outcome.converged);
    let rec = &outcome.recoveries[0];
    assert!(rec.reconstructed);
    let dev = rec.deviation.as_ref().unwrap();
    assert_eq!(dev.x, 0.0);
    assert_eq!(dev.r, 0.0);
    assert_eq!(dev.z, 0.0);
    assert_eq!(dev.p, 0.0);

    // block Jacobi reconstructs the same state up to one preconditioner
    // round-trip of rounding
    let kind = PreconditionerKind::BlockJacobiExact;
    let truth = snapshots_at(&a, 4, kind, vec![0]);
    let mut cluster = make_cluster(&a, 4, 1, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(1, kind),
        &FailureSchedule::at_iteration(0, [2]),
        &RunOptions {
            ground_truth: truth,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(outcome.converged);
    let dev = outcome.recoveries[0].deviation.as_ref().unwrap();
    assert!(dev.max() <= 1e-12, "deviation {dev:?}");
}

#[test]
fn three_contiguous_failures_solve_one_coupled_subsystem() {
    let a = generate_matrix(MatrixSpec::Band {
        n: 512,
        half_bandwidth: 16,
        dominance: 0.1,
    })
    .unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let reference = {
        let mut cluster = make_cluster(&a, 8, 0, kind);
        pcg_run(
            &mut cluster,
            &config(0, kind),
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap()
    };
    let trigger = (reference.iterations / 2).max(1);
    let truth = snapshots_at(&a, 8, kind, vec![trigger]);
    let mut cluster = make_cluster(&a, 8, 3, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(3, kind),
        &FailureSchedule::at_iteration(trigger, [3, 4, 5]),
        &RunOptions {
            ground_truth: truth,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(outcome.converged);
    let rec = &outcome.recoveries[0];
    assert!(rec.reconstructed);
    assert!(rec.deviation.as_ref().unwrap().max() <= 1e-12);
}

#[test]
fn overlapping_failure_restarts_and_recovers_exactly() {
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 256 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let reference = {
        let mut cluster = make_cluster(&a, 8, 0, kind);
        pcg_run(
            &mut cluster,
            &config(0, kind),
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap()
    };
    let trigger = reference.iterations / 2;
    let truth = snapshots_at(&a, 8, kind, vec![trigger]);
    let mut schedule = FailureSchedule::at_iteration(trigger, [1]);
    schedule.push_during_recovery([4]);
    let mut cluster = make_cluster(&a, 8, 2, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(2, kind),
        &schedule,
        &RunOptions {
            ground_truth: truth,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(outcome.converged);
    let rec = &outcome.recoveries[0];
    assert!(rec.reconstructed);
    assert_eq!(rec.restarted_count, 1);
    assert_eq!(rec.failed_nodes, vec![1, 4]);
    assert!(rec.deviation.as_ref().unwrap().max() <= 1e-12);
}

#[test]
fn refailed_replacement_is_still_recoverable() {
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 256 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let mut schedule = FailureSchedule::at_iteration(2, [1]);
    schedule.push_during_recovery([1]);
    let mut cluster = make_cluster(&a, 8, 2, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(2, kind),
        &schedule,
        &RunOptions::default(),
    )
    .unwrap();
    assert!(outcome.converged);
    let rec = &outcome.recoveries[0];
    assert!(rec.reconstructed);
    assert_eq!(rec.restarted_count, 1);
    assert_eq!(rec.failed_nodes, vec![1]);
}

#[test]
fn exceeding_redundancy_reports_unrecoverable_not_wrong_state() {
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 256 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let mut schedule = FailureSchedule::at_iteration(2, [1]);
    schedule.push_during_recovery([4]);
    schedule.push_during_recovery([6]);
    let mut cluster = make_cluster(&a, 8, 2, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(2, kind),
        &schedule,
        &RunOptions::default(),
    )
    .unwrap();
    assert!(!outcome.converged);
    assert!(outcome.failure.is_some(), "run must be marked failed");
    let rec = outcome.recoveries.last().unwrap();
    assert!(!rec.reconstructed);
    assert_eq!(rec.restarted_count, 2);
    assert!(rec.error.as_ref().unwrap().contains("exceed"));
    // no iterate is published for a failed run
    assert!(outcome.x.is_empty());
}

#[test]
fn direct_recovery_rejects_more_failures_than_redundancy() {
    // chen-style counterexample: node i and its only backup holder fail
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 64 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let mut cluster = make_cluster(&a, 4, 1, kind);
    let cfg = config(1, kind);
    let mut state = pcg_init(&mut cluster, &cfg).unwrap();
    let mut trace = Default::default();
    pcg_step(&mut cluster, &mut state, &cfg, &mut trace).unwrap();
    cluster
        .inject_failures(&BTreeSet::from([0, 1]), 1)
        .unwrap();
    let report = recovery::run_recovery(
        &mut cluster,
        &RecoverySettings::default(),
        &mut VecDeque::new(),
        1,
        None,
    )
    .unwrap();
    assert!(!report.reconstructed);
    assert!(report.error.unwrap().contains("exceed"));
}

#[test]
fn recovery_restores_full_redundancy_for_both_generations() {
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 128 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    // fail at iteration 3, then again (different node) at iteration 4: only
    // possible if recovery restored the backup invariant
    let mut schedule = FailureSchedule::at_iteration(3, [2]);
    schedule.push_at_iteration(4, [3]);
    let mut cluster = make_cluster(&a, 8, 1, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(1, kind),
        &schedule,
        &RunOptions::default(),
    )
    .unwrap();
    assert!(outcome.converged);
    assert_eq!(outcome.recoveries.len(), 2);
    assert!(outcome.recoveries.iter().all(|r| r.reconstructed));

    // the live invariant holds after the run for both generations
    let part = cluster.partition().clone();
    let rho = cluster.plan().redundancy();
    for owner in 0..part.node_count() {
        for s in part.range(owner) {
            for age in [BackupAge::Current, BackupAge::Previous] {
                let holders = cluster.live_copy_holders(owner, s, age);
                assert!(
                    holders.len() >= rho + 1,
                    "element {s} of node {owner} has {} copies at {age:?}",
                    holders.len()
                );
            }
        }
    }
}

#[test]
fn live_invariant_holds_after_every_exchange_in_failure_free_run() {
    let a = generate_matrix(MatrixSpec::Laplace2d { k: 8 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    for rho in [1usize, 2, 3] {
        let mut cluster = make_cluster(&a, 4, rho, kind);
        let cfg = config(rho, kind);
        let mut state = pcg_init(&mut cluster, &cfg).unwrap();
        let mut trace = Default::default();
        for step in 0..4 {
            pcg_step(&mut cluster, &mut state, &cfg, &mut trace).unwrap();
            for owner in 0..cluster.node_count() {
                for s in cluster.partition().range(owner) {
                    let current = cluster.live_copy_holders(owner, s, BackupAge::Current);
                    assert!(current.len() >= rho + 1);
                    if step >= 1 {
                        let previous =
                            cluster.live_copy_holders(owner, s, BackupAge::Previous);
                        assert!(previous.len() >= rho + 1);
                    }
                }
            }
        }
    }
}

#[test]
fn backup_copies_match_owner_values_in_failure_free_run() {
    // after a completed iteration the backups hold the generation that was
    // broadcast at its start, which the owner has since retained as the
    // previous search direction
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 64 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let mut cluster = make_cluster(&a, 4, 2, kind);
    let cfg = config(2, kind);
    let mut state = pcg_init(&mut cluster, &cfg).unwrap();
    let mut trace = Default::default();
    for _ in 0..3 {
        pcg_step(&mut cluster, &mut state, &cfg, &mut trace).unwrap();
        for owner in 0..cluster.node_count() {
            let range = cluster.node(owner).range();
            let retained = cluster.node(owner).dynamic().unwrap().previous_direction().to_vec();
            for holder in 0..cluster.node_count() {
                if holder == owner {
                    continue;
                }
                let d = cluster.node(holder).dynamic().unwrap();
                for (pos, g) in range.clone().enumerate() {
                    if let Some(v) = d.backup_copy(owner, BackupAge::Current, g) {
                        assert_eq!(v.to_bits(), retained[pos].to_bits());
                    }
                }
            }
        }
    }
}

#[test]
fn disturbed_runs_are_bitwise_deterministic() {
    let a = generate_matrix(MatrixSpec::Laplace2d { k: 16 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let run = || {
        let mut cluster = make_cluster(&a, 8, 2, kind);
        pcg_run(
            &mut cluster,
            &config(2, kind),
            &FailureSchedule::at_iteration(5, [2, 3]),
            &RunOptions::default(),
        )
        .unwrap()
    };
    let first = run();
    let second = run();
    assert!(first.converged);
    assert_eq!(first.iterations, second.iterations);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&first.x), bits(&second.x));
    assert_eq!(bits(&first.trace.alphas), bits(&second.trace.alphas));
    assert_eq!(
        first.recoveries[0].comm, second.recoveries[0].comm,
        "recovery accounting must be deterministic"
    );
}

#[test]
fn events_past_convergence_are_reported_unfired() {
    let a = generate_matrix(MatrixSpec::Laplace1d { n: 64 }).unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;
    let mut cluster = make_cluster(&a, 4, 1, kind);
    let outcome = pcg_run(
        &mut cluster,
        &config(1, kind),
        &FailureSchedule::at_iteration(10_000 - 1, [1]),
        &RunOptions::default(),
    )
    .unwrap();
    assert!(outcome.converged);
    assert_eq!(outcome.recoveries.len(), 0);
    assert_eq!(outcome.unfired_events, 1);
}

#[test]
fn model_time_decomposition_is_exact() {
    let a = generate_matrix(MatrixSpec::Band {
        n: 512,
        half_bandwidth: 8,
        dominance: 0.1,
    })
    .unwrap();
    let kind = PreconditionerKind::BlockJacobiExact;

    let mut undisturbed = make_cluster(&a, 8, 2, kind);
    let u_out = pcg_run(
        &mut undisturbed,
        &config(2, kind),
        &FailureSchedule::empty(),
        &RunOptions::default(),
    )
    .unwrap();

    let mut disturbed = make_cluster(&a, 8, 2, kind);
    let d_out = pcg_run(
        &mut disturbed,
        &config(2, kind),
        &FailureSchedule::at_iteration(u_out.iterations / 2, [4, 5]),
        &RunOptions::default(),
    )
    .unwrap();
    assert!(d_out.converged);

    // iteration counts match here, so the base and redundancy accumulators
    // agree bit for bit and the total splits exactly into
    // undisturbed time + recovery time
    assert_eq!(u_out.iterations, d_out.iterations);
    let us = &undisturbed.stats;
    let ds = &disturbed.stats;
    assert_eq!(us.model_time_base.to_bits(), ds.model_time_base.to_bits());
    assert_eq!(us.model_time_extra.to_bits(), ds.model_time_extra.to_bits());
    assert!(ds.model_time_recovery > 0.0);
    assert_eq!(
        ds.model_time().to_bits(),
        (us.model_time() + ds.model_time_recovery).to_bits()
    );
}

#[test]
fn measured_extra_time_sits_inside_planner_bounds() {
    for (spec, nodes, rho) in [
        (MatrixSpec::Laplace1d { n: 512 }, 8, 2),
        (MatrixSpec::Laplace2d { k: 16 }, 4, 3),
        (
            MatrixSpec::Band {
                n: 512,
                half_bandwidth: 16,
                dominance: 0.1,
            },
            8,
            3,
        ),
    ] {
        let a = generate_matrix(spec).unwrap();
        let part = partition_rows(a.n_rows(), nodes).unwrap();
        let pattern = compute_send_sets(&a, &part).unwrap();
        let plan = compute_redundancy_plan(&pattern, rho).unwrap();
        let cost = CostModel::default();
        let estimate = estimate_overhead(&plan, &pattern, &cost.latency, cost.per_element).unwrap();

        let mut cluster = build_cluster(
            a.clone(),
            experiment::default_rhs(&a),
            part,
            plan,
            PreconditionerKind::BlockJacobiExact,
            cost,
        )
        .unwrap();
        let cfg = SolverConfig {
            redundancy: rho,
            max_iterations: 1,
            ..Default::default()
        };
        let _ = pcg_run(
            &mut cluster,
            &cfg,
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .unwrap();
        let measured = cluster.stats.model_time_extra;
        assert!(
            estimate.lower_time <= measured && measured <= estimate.upper_time,
            "{spec:?}: measured {measured} outside [{}, {}]",
            estimate.lower_time,
            estimate.upper_time
        );
        assert!(estimate.upper_time <= estimate.cap_time);
    }
}
