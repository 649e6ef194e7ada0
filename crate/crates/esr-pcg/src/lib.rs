//! A preconditioned conjugate gradient solver running on a deterministic
//! simulated distributed-memory cluster, made resilient against multiple
//! simultaneous or overlapping fail-stop node failures by exact state
//! reconstruction from redundant search-direction copies.
//!
//! The crate is organized along the pipeline:
//!
//! - [`matrix`], [`market`], [`partition`], [`cholesky`]: CSR linear
//!   algebra, Matrix Market ingestion, block-row distribution and the
//!   dense direct-solve oracle;
//! - [`pattern`], [`plan`]: the sparsity-induced communication pattern,
//!   backup destinations, minimal extra-send sets and overhead bounds;
//! - [`cluster`]: the simulated nodes, message exchange, fault injection
//!   and replacement provisioning;
//! - [`solver`]: the distributed iteration;
//! - [`recovery`]: exact state reconstruction after failures;
//! - [`generate`], [`experiment`]: test matrices and the batch experiment
//!   protocol with report emission.

pub mod cholesky;
pub mod cluster;
pub mod dense;
pub mod error;
pub mod experiment;
pub mod generate;
pub mod market;
pub mod matrix;
pub mod partition;
pub mod pattern;
pub mod plan;
pub mod recovery;
pub mod solver;

pub use cholesky::{direct_solve, DenseCholesky};
pub use cluster::{
    build_cluster, BackupAge, Cluster, CommStats, CostModel, FailureEvent, FailureSchedule,
    FailureTrigger, NodeState, PreconditionerKind, TraceEvent,
};
pub use dense::DenseVector;
pub use error::{Error, Result};
pub use experiment::{
    emit_report, run_experiment, run_solve, ExperimentConfig, ExperimentReport, FailureLocation,
    MatrixSource, ReportFormat, RunRecord, SolveFailureSpec, SolveOutput,
};
pub use generate::{generate_matrix, MatrixSpec};
pub use market::parse_matrix_market;
pub use matrix::SparseMatrix;
pub use partition::{partition_rows, BlockRowPartition};
pub use pattern::{compute_send_sets, CommPattern};
pub use plan::{
    backup_destination, compute_redundancy_plan, estimate_overhead, verify_plan,
    zero_latency_condition, LatencyModel, OverheadEstimate, PlanVerification, RedundancyPlan,
};
pub use recovery::{
    relative_residual_difference, InnerSolveKind, RecoveryReport, RecoverySettings,
};
pub use solver::{pcg_init, pcg_run, pcg_step, PcgOutcome, RunOptions, SolverConfig};
