//! Batch experiment driver: reference run, undisturbed resilient run and
//! disturbed runs over a grid of failure progress points and locations,
//! with relative-overhead statistics in deterministic model time.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{build_cluster, Cluster, CommStats, CostModel, FailureSchedule, PreconditionerKind};
use crate::error::{Error, Result};
use crate::generate::{generate_matrix, MatrixSpec};
use crate::market::parse_matrix_market;
use crate::matrix::SparseMatrix;
use crate::partition::partition_rows;
use crate::pattern::compute_send_sets;
use crate::plan::{compute_redundancy_plan, LatencyModel, RedundancyPlan};
use crate::recovery::{InnerSolveKind, RecoveryReport, RecoverySettings};
use crate::solver::{pcg_run, PcgOutcome, RunOptions, SolverConfig, StateSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum MatrixSource {
    File { path: PathBuf },
    Generate { spec: MatrixSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureLocation {
    Start,
    Center,
}

impl FromStr for FailureLocation {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        match text {
            "start" => Ok(FailureLocation::Start),
            "center" => Ok(FailureLocation::Center),
            other => Err(Error::InvalidArgument(format!(
                "unknown failure location '{other}', expected 'start' or 'center'"
            ))),
        }
    }
}

impl std::fmt::Display for FailureLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureLocation::Start => write!(f, "start"),
            FailureLocation::Center => write!(f, "center"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        match text {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format '{other}'"
            ))),
        }
    }
}

fn default_fractions() -> Vec<f64> {
    vec![0.2, 0.5, 0.8]
}

fn default_locations() -> Vec<FailureLocation> {
    vec![FailureLocation::Start, FailureLocation::Center]
}

fn default_repetitions() -> usize {
    1
}

fn default_rel_tolerance() -> f64 {
    1e-8
}

fn default_inner_tolerance() -> f64 {
    1e-14
}

fn default_direct_threshold() -> usize {
    4096
}

fn default_latency() -> f64 {
    1.0
}

fn default_per_element_cost() -> f64 {
    0.01
}

fn default_max_iterations() -> usize {
    10_000
}

fn default_preconditioner() -> PreconditionerKind {
    PreconditionerKind::BlockJacobiExact
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub matrix: MatrixSource,
    pub node_count: usize,
    #[serde(default)]
    pub redundancy: usize,
    #[serde(default)]
    pub failures: usize,
    #[serde(default = "default_fractions")]
    pub progress_fractions: Vec<f64>,
    #[serde(default = "default_locations")]
    pub failure_locations: Vec<FailureLocation>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rel_tolerance")]
    pub rel_tolerance: f64,
    #[serde(default = "default_inner_tolerance")]
    pub inner_tolerance: f64,
    #[serde(default = "default_direct_threshold")]
    pub direct_threshold: usize,
    #[serde(default = "default_latency")]
    pub latency: f64,
    #[serde(default = "default_per_element_cost")]
    pub per_element_cost: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_preconditioner")]
    pub preconditioner: PreconditionerKind,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(Error::Config("node_count must be positive".into()));
        }
        if self.redundancy >= self.node_count {
            return Err(Error::Config(format!(
                "redundancy {} must be smaller than node_count {}",
                self.redundancy, self.node_count
            )));
        }
        if self.failures > self.redundancy {
            return Err(Error::Config(format!(
                "failures {} exceed redundancy {}",
                self.failures, self.redundancy
            )));
        }
        for &f in &self.progress_fractions {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "progress fraction {f} outside (0, 1)"
                )));
            }
        }
        if self.failures > 0 && self.failure_locations.is_empty() {
            return Err(Error::Config("no failure locations configured".into()));
        }
        Ok(())
    }

    pub fn load_matrix(&self) -> Result<SparseMatrix> {
        match &self.matrix {
            MatrixSource::File { path } => {
                let text = std::fs::read_to_string(path)?;
                parse_matrix_market(&text)
            }
            MatrixSource::Generate { spec } => generate_matrix(*spec),
        }
    }

    pub fn recovery_settings(&self) -> RecoverySettings {
        RecoverySettings {
            inner: InnerSolveKind::Auto {
                direct_threshold: self.direct_threshold,
                tol: self.inner_tolerance,
            },
            max_inner_iterations: 100_000,
        }
    }

    pub fn solver_config(&self, redundancy: usize) -> SolverConfig {
        SolverConfig {
            rel_tolerance: self.rel_tolerance,
            max_iterations: self.max_iterations,
            preconditioner: self.preconditioner,
            redundancy,
        }
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        CostModel::new(LatencyModel::constant(self.latency)?, self.per_element_cost)
    }
}

/// Failed node ids for a location: `start` fails ranks `0..nf`, `center`
/// fails `floor(N/2)..floor(N/2)+nf`.
pub fn failure_nodes(location: FailureLocation, nf: usize, node_count: usize) -> BTreeSet<usize> {
    let base = match location {
        FailureLocation::Start => 0,
        FailureLocation::Center => node_count / 2,
    };
    (base..base + nf).map(|i| i % node_count).collect()
}

/// Trigger iteration for a progress fraction, measured against the
/// reference iteration count and clamped so the event can fire.
pub fn trigger_iteration(fraction: f64, reference_iterations: usize) -> usize {
    let raw = (fraction * reference_iterations as f64).ceil() as usize;
    raw.min(reference_iterations.saturating_sub(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Reference,
    Undisturbed,
    Disturbed,
}

/// Report for one run of the solver.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub kind: RunKind,
    pub redundancy: usize,
    pub failures: usize,
    pub location: Option<FailureLocation>,
    pub progress: Option<f64>,
    pub repetition: usize,
    pub trigger_iteration: Option<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub initial_residual_norm: f64,
    pub final_residual_norm: f64,
    /// Relative residual difference of this run.
    pub residual_difference: Option<f64>,
    /// Relative residual difference of the reference run.
    pub reference_residual_difference: Option<f64>,
    pub stats: CommStats,
    pub model_time: f64,
    /// Extra elements over the reference baseline element count.
    pub extra_elements_ratio: Option<f64>,
    /// Total model time over the reference model time.
    pub model_time_ratio: Option<f64>,
    /// (model_time - reference) / reference.
    pub relative_overhead: Option<f64>,
    /// Recovery model time over the reference model time.
    pub relative_reconstruction_time: Option<f64>,
    pub recoveries: Vec<RecoveryReport>,
    pub max_state_deviation: Option<f64>,
    pub error: Option<String>,
}

/// Mean and standard deviation of the overhead columns for one
/// (redundancy, failures, location) cell.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub redundancy: usize,
    pub failures: usize,
    pub location: FailureLocation,
    pub undisturbed_overhead: Option<f64>,
    pub mean_reconstruction_time: f64,
    pub std_reconstruction_time: f64,
    pub mean_overhead_with_failures: f64,
    pub std_overhead_with_failures: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub matrix_rows: usize,
    pub matrix_nnz: usize,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / values.len() as f64;
    (mean, var.sqrt())
}

struct RunContext {
    matrix: SparseMatrix,
    plan: RedundancyPlan,
    config: SolverConfig,
    cost: CostModel,
}

impl RunContext {
    fn build_cluster(&self) -> Result<Cluster> {
        let part = partition_rows(self.matrix.n_rows(), self.plan.node_count())?;
        build_cluster(
            self.matrix.clone(),
            default_rhs(&self.matrix),
            part,
            self.plan.clone(),
            self.config.preconditioner,
            self.cost.clone(),
        )
    }
}

/// Deterministic value in [-1, 1) derived from the index (splitmix64
/// finalizer); reproducible across platforms, no libm involved.
fn hash_unit(i: u64) -> f64 {
    let mut z = i.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// The exact solution the default right-hand side is built from.
pub fn default_solution(n: usize) -> Vec<f64> {
    (0..n).map(|i| hash_unit(i as u64)).collect()
}

/// Right-hand side fixed to `A * x` for a deterministic, spectrally
/// generic `x` with entries in [-1, 1). A structured solution (all ones or
/// alternating signs) either nearly cancels under stencil matrices —
/// inflating the relative drift between the recurrence residual and
/// `b - A x` — or aligns with an eigenvector and collapses the run to a
/// single iteration.
pub fn default_rhs(a: &SparseMatrix) -> Vec<f64> {
    a.spmv(&default_solution(a.n_cols())).expect("square matrix")
}

fn record_run(
    kind: RunKind,
    config: &ExperimentConfig,
    outcome: &PcgOutcome,
    stats: &CommStats,
    reference: Option<&RunRecord>,
    location: Option<FailureLocation>,
    progress: Option<f64>,
    repetition: usize,
    trigger: Option<usize>,
) -> RunRecord {
    let (extra_ratio, time_ratio, rel_overhead, rel_reconstruction) = match reference {
        Some(r) if r.stats.elements_sent > 0 && r.model_time > 0.0 => {
            let t0 = r.model_time;
            let t = stats.model_time();
            (
                Some(stats.extra_elements as f64 / r.stats.elements_sent as f64),
                Some(t / t0),
                Some((t - t0) / t0),
                Some(stats.model_time_recovery / t0),
            )
        }
        _ => (None, None, None, None),
    };
    let max_state_deviation = outcome
        .recoveries
        .iter()
        .filter_map(|r| r.deviation.as_ref().map(|d| d.max()))
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    RunRecord {
        kind,
        redundancy: if matches!(kind, RunKind::Reference) { 0 } else { config.redundancy },
        failures: if matches!(kind, RunKind::Disturbed) { config.failures } else { 0 },
        location,
        progress,
        repetition,
        trigger_iteration: trigger,
        converged: outcome.converged,
        iterations: outcome.iterations,
        initial_residual_norm: outcome.initial_residual_norm,
        final_residual_norm: outcome.final_residual_norm,
        residual_difference: outcome.residual_difference,
        reference_residual_difference: reference.and_then(|r| r.residual_difference),
        stats: stats.clone(),
        model_time: stats.model_time(),
        extra_elements_ratio: extra_ratio,
        model_time_ratio: time_ratio,
        relative_overhead: rel_overhead,
        relative_reconstruction_time: rel_reconstruction,
        recoveries: outcome.recoveries.clone(),
        max_state_deviation,
        error: outcome.failure.clone(),
    }
}

/// Runs the full protocol: one reference run, one undisturbed resilient
/// run, and a disturbed run per (location, progress, repetition) cell.
/// Individual run failures are recorded, not propagated.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let matrix = config.load_matrix()?;
    let part = partition_rows(matrix.n_rows(), config.node_count)?;
    let pattern = compute_send_sets(&matrix, &part)?;
    let cost = config.cost_model()?;

    let reference_ctx = RunContext {
        matrix: matrix.clone(),
        plan: compute_redundancy_plan(&pattern, 0)?,
        config: config.solver_config(0),
        cost: cost.clone(),
    };
    let resilient_ctx = RunContext {
        matrix: matrix.clone(),
        plan: compute_redundancy_plan(&pattern, config.redundancy)?,
        config: config.solver_config(config.redundancy),
        cost: cost.clone(),
    };

    let mut runs = Vec::new();

    // reference: plain solver without redundancy
    let mut cluster = reference_ctx.build_cluster()?;
    let reference_outcome = pcg_run(
        &mut cluster,
        &reference_ctx.config,
        &FailureSchedule::empty(),
        &RunOptions::default(),
    )?;
    let reference_stats = cluster.stats.clone();
    let reference_record = record_run(
        RunKind::Reference,
        config,
        &reference_outcome,
        &reference_stats,
        None,
        None,
        None,
        0,
        None,
    );
    let reference_iterations = reference_outcome.iterations;
    runs.push(reference_record);
    let reference_record = runs[0].clone();

    // undisturbed resilient run
    let mut cluster = resilient_ctx.build_cluster()?;
    let undisturbed_outcome = pcg_run(
        &mut cluster,
        &resilient_ctx.config,
        &FailureSchedule::empty(),
        &RunOptions::default(),
    )?;
    let undisturbed_stats = cluster.stats.clone();
    runs.push(record_run(
        RunKind::Undisturbed,
        config,
        &undisturbed_outcome,
        &undisturbed_stats,
        Some(&reference_record),
        None,
        None,
        0,
        None,
    ));
    let undisturbed_overhead = runs[1].relative_overhead;

    // disturbed cells
    if config.failures > 0 {
        if reference_iterations == 0 {
            return Err(Error::Config(
                "reference run converged immediately; nothing to disturb".into(),
            ));
        }
        let triggers: Vec<usize> = config
            .progress_fractions
            .iter()
            .map(|&f| trigger_iteration(f, reference_iterations))
            .collect();
        // reference state snapshots at every trigger, for deviation reports
        let mut snapshot_at: Vec<usize> = triggers.clone();
        snapshot_at.sort_unstable();
        snapshot_at.dedup();
        let mut cluster = reference_ctx.build_cluster()?;
        let snap_outcome = pcg_run(
            &mut cluster,
            &reference_ctx.config,
            &FailureSchedule::empty(),
            &RunOptions {
                snapshot_at,
                ..RunOptions::default()
            },
        )?;
        let snapshots: Vec<StateSnapshot> = snap_outcome.snapshots;

        for &location in &config.failure_locations {
            let nodes = failure_nodes(location, config.failures, config.node_count);
            for (&fraction, &trigger) in config.progress_fractions.iter().zip(&triggers) {
                for rep in 0..config.repetitions.max(1) {
                    let schedule = FailureSchedule::at_iteration(trigger, nodes.iter().copied());
                    let options = RunOptions {
                        snapshot_at: Vec::new(),
                        recovery: config.recovery_settings(),
                        ground_truth: snapshots
                            .iter()
                            .filter(|s| s.iteration == trigger)
                            .cloned()
                            .collect(),
                        capture_post_recovery: false,
                    };
                    let mut cluster = resilient_ctx.build_cluster()?;
                    match pcg_run(&mut cluster, &resilient_ctx.config, &schedule, &options) {
                        Ok(outcome) => {
                            let stats = cluster.stats.clone();
                            runs.push(record_run(
                                RunKind::Disturbed,
                                config,
                                &outcome,
                                &stats,
                                Some(&reference_record),
                                Some(location),
                                Some(fraction),
                                rep,
                                Some(trigger),
                            ));
                        }
                        Err(e) => {
                            // recorded per run, the batch continues
                            let mut record = record_run(
                                RunKind::Disturbed,
                                config,
                                &PcgOutcome {
                                    converged: false,
                                    iterations: 0,
                                    initial_residual_norm: 0.0,
                                    final_residual_norm: 0.0,
                                    failure: Some(e.to_string()),
                                    trace: Default::default(),
                                    recoveries: Vec::new(),
                                    snapshots: Vec::new(),
                                    post_recovery_states: Vec::new(),
                                    x: Vec::new(),
                                    solver_residual: Vec::new(),
                                    residual_difference: None,
                                    unfired_events: 0,
                                },
                                &cluster.stats.clone(),
                                Some(&reference_record),
                                Some(location),
                                Some(fraction),
                                rep,
                                Some(trigger),
                            );
                            record.error = Some(e.to_string());
                            runs.push(record);
                        }
                    }
                }
            }
        }
    }

    // aggregates per (rho, nf, location), over progress points and reps
    let mut aggregates = Vec::new();
    for &location in &config.failure_locations {
        let cell: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| matches!(r.kind, RunKind::Disturbed) && r.location == Some(location))
            .collect();
        if cell.is_empty() {
            continue;
        }
        let overheads: Vec<f64> = cell.iter().filter_map(|r| r.relative_overhead).collect();
        let reconstructions: Vec<f64> = cell
            .iter()
            .filter_map(|r| r.relative_reconstruction_time)
            .collect();
        let (mean_o, std_o) = mean_std(&overheads);
        let (mean_r, std_r) = mean_std(&reconstructions);
        aggregates.push(AggregateRow {
            redundancy: config.redundancy,
            failures: config.failures,
            location,
            undisturbed_overhead,
            mean_reconstruction_time: mean_r,
            std_reconstruction_time: std_r,
            mean_overhead_with_failures: mean_o,
            std_overhead_with_failures: std_o,
            samples: cell.len(),
        });
    }

    Ok(ExperimentReport {
        schema_version: 1,
        config: config.clone(),
        matrix_rows: matrix.n_rows(),
        matrix_nnz: matrix.nnz(),
        runs,
        aggregates,
    })
}

/// Failure placement for a single `solve` run.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveFailureSpec {
    None,
    /// `failures` nodes at the given progress fraction of the reference run.
    AtProgress { fraction: f64, location: FailureLocation },
    /// `failures` nodes at each listed iteration.
    AtIterations { iterations: Vec<usize>, location: FailureLocation },
}

#[derive(Debug)]
pub struct SolveOutput {
    /// Report holding the reference run and the main run.
    pub report: ExperimentReport,
    pub trace: Vec<crate::cluster::TraceEvent>,
    pub converged: bool,
    pub unrecoverable: bool,
}

/// One solver run plus the reference run it is measured against.
pub fn run_solve(
    config: &ExperimentConfig,
    failure: &SolveFailureSpec,
    capture_trace: bool,
) -> Result<SolveOutput> {
    config.validate()?;
    if config.failures == 0 && !matches!(failure, SolveFailureSpec::None) {
        return Err(Error::Config(
            "failure placement given but failures is 0".into(),
        ));
    }
    if config.failures > 0 && matches!(failure, SolveFailureSpec::None) {
        return Err(Error::Config(
            "failures requested without a placement (--fail or --fail-at)".into(),
        ));
    }
    let matrix = config.load_matrix()?;
    let part = partition_rows(matrix.n_rows(), config.node_count)?;
    let pattern = compute_send_sets(&matrix, &part)?;
    let cost = config.cost_model()?;

    let reference_ctx = RunContext {
        matrix: matrix.clone(),
        plan: compute_redundancy_plan(&pattern, 0)?,
        config: config.solver_config(0),
        cost: cost.clone(),
    };
    let mut cluster = reference_ctx.build_cluster()?;
    let reference_outcome = pcg_run(
        &mut cluster,
        &reference_ctx.config,
        &FailureSchedule::empty(),
        &RunOptions::default(),
    )?;
    let reference_stats = cluster.stats.clone();
    let reference_record = record_run(
        RunKind::Reference,
        config,
        &reference_outcome,
        &reference_stats,
        None,
        None,
        None,
        0,
        None,
    );

    // schedule and ground-truth snapshots
    let (schedule, location, progress, first_trigger, snapshots) = match failure {
        SolveFailureSpec::None => (FailureSchedule::empty(), None, None, None, Vec::new()),
        SolveFailureSpec::AtProgress { fraction, location } => {
            if reference_outcome.iterations == 0 {
                return Err(Error::Config(
                    "reference run converged immediately; nothing to disturb".into(),
                ));
            }
            let trigger = trigger_iteration(*fraction, reference_outcome.iterations);
            let nodes = failure_nodes(*location, config.failures, config.node_count);
            let snaps = reference_snapshots(&reference_ctx, &[trigger])?;
            (
                FailureSchedule::at_iteration(trigger, nodes),
                Some(*location),
                Some(*fraction),
                Some(trigger),
                snaps,
            )
        }
        SolveFailureSpec::AtIterations { iterations, location } => {
            let nodes = failure_nodes(*location, config.failures, config.node_count);
            let mut schedule = FailureSchedule::empty();
            for &t in iterations {
                schedule.push_at_iteration(t, nodes.iter().copied());
            }
            let snaps = reference_snapshots(&reference_ctx, iterations)?;
            (
                schedule,
                Some(*location),
                None,
                iterations.first().copied(),
                snaps,
            )
        }
    };

    let resilient_ctx = RunContext {
        matrix,
        plan: compute_redundancy_plan(&pattern, config.redundancy)?,
        config: config.solver_config(config.redundancy),
        cost,
    };
    let mut cluster = resilient_ctx.build_cluster()?;
    if capture_trace {
        cluster.enable_trace();
    }
    let outcome = pcg_run(
        &mut cluster,
        &resilient_ctx.config,
        &schedule,
        &RunOptions {
            snapshot_at: Vec::new(),
            recovery: config.recovery_settings(),
            ground_truth: snapshots,
            capture_post_recovery: false,
        },
    )?;
    let trace = cluster.take_trace();
    let stats = cluster.stats.clone();
    let kind = if config.failures > 0 {
        RunKind::Disturbed
    } else {
        RunKind::Undisturbed
    };
    let record = record_run(
        kind,
        config,
        &outcome,
        &stats,
        Some(&reference_record),
        location,
        progress,
        0,
        first_trigger,
    );
    let unrecoverable = outcome.failure.is_some();
    let converged = outcome.converged;
    Ok(SolveOutput {
        report: ExperimentReport {
            schema_version: 1,
            config: config.clone(),
            matrix_rows: reference_ctx.matrix.n_rows(),
            matrix_nnz: reference_ctx.matrix.nnz(),
            runs: vec![reference_record, record],
            aggregates: Vec::new(),
        },
        trace,
        converged,
        unrecoverable,
    })
}

fn reference_snapshots(ctx: &RunContext, triggers: &[usize]) -> Result<Vec<StateSnapshot>> {
    let mut snapshot_at = triggers.to_vec();
    snapshot_at.sort_unstable();
    snapshot_at.dedup();
    let mut cluster = ctx.build_cluster()?;
    let outcome = pcg_run(
        &mut cluster,
        &ctx.config,
        &FailureSchedule::empty(),
        &RunOptions {
            snapshot_at,
            ..RunOptions::default()
        },
    )?;
    Ok(outcome.snapshots)
}

/// Serializes a report with a stable field order.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)
            .map_err(|e| Error::Config(format!("serialization failed: {e}"))),
        ReportFormat::Csv => Ok(emit_csv(report)),
    }
}

const CSV_HEADER: &str = "kind,redundancy,failures,location,progress,repetition,trigger_iteration,\
converged,iterations,final_residual_norm,residual_difference,messages,elements_sent,\
extra_elements,extra_edges,allreduce_count,model_time,model_time_base,model_time_extra,\
model_time_recovery,extra_elements_ratio,model_time_ratio,relative_overhead,\
relative_reconstruction_time,recovery_count,restarts,inner_iterations,max_state_deviation,error";

fn emit_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.runs {
        let kind = match r.kind {
            RunKind::Reference => "reference",
            RunKind::Undisturbed => "undisturbed",
            RunKind::Disturbed => "disturbed",
        };
        let opt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let restarts: usize = r.recoveries.iter().map(|rec| rec.restarted_count).sum();
        let inner: usize = r.recoveries.iter().map(|rec| rec.inner_iterations).sum();
        let row = [
            kind.to_string(),
            r.redundancy.to_string(),
            r.failures.to_string(),
            r.location.map(|l| l.to_string()).unwrap_or_default(),
            opt_f(r.progress),
            r.repetition.to_string(),
            opt_u(r.trigger_iteration),
            r.converged.to_string(),
            r.iterations.to_string(),
            r.final_residual_norm.to_string(),
            opt_f(r.residual_difference),
            r.stats.messages.to_string(),
            r.stats.elements_sent.to_string(),
            r.stats.extra_elements.to_string(),
            r.stats.extra_edges.to_string(),
            r.stats.allreduce_count.to_string(),
            r.model_time.to_string(),
            r.stats.model_time_base.to_string(),
            r.stats.model_time_extra.to_string(),
            r.stats.model_time_recovery.to_string(),
            opt_f(r.extra_elements_ratio),
            opt_f(r.model_time_ratio),
            opt_f(r.relative_overhead),
            opt_f(r.relative_reconstruction_time),
            r.recoveries.len().to_string(),
            restarts.to_string(),
            inner.to_string(),
            opt_f(r.max_state_deviation),
            r.error.clone().unwrap_or_default().replace(',', ";"),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
