//! Command-line harness: single runs, batch experiments, redundancy-plan
//! inspection and an invariant battery.
//!
//! Exit codes: 0 success, 1 solver failure, 2 unrecoverable node failure,
//! 3 usage error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use esr_pcg::cluster::TraceEvent;
use esr_pcg::experiment::SolveFailureSpec;
use esr_pcg::{
    build_cluster, compute_redundancy_plan, compute_send_sets, emit_report, estimate_overhead,
    parse_matrix_market, partition_rows, pcg_run, run_experiment, run_solve, verify_plan,
    zero_latency_condition, CostModel, Error, ExperimentConfig, FailureLocation, FailureSchedule,
    LatencyModel, MatrixSource, MatrixSpec, PreconditionerKind, ReportFormat, RunOptions,
    SolverConfig, SparseMatrix,
};

#[derive(Parser)]
#[command(
    name = "esr-pcg",
    version,
    about = "Failure-resilient preconditioned conjugate gradient on a simulated cluster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver once, optionally injecting node failures.
    Solve(SolveArgs),
    /// Run the full experiment protocol with aggregate statistics.
    Experiment(ExperimentArgs),
    /// Print the redundancy plan and communication-overhead bounds.
    Plan(PlanArgs),
    /// Run the invariant battery on a matrix.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct MatrixArgs {
    /// Matrix Market file with the SPD system matrix.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Generator spec: laplace1d:N, laplace2d:K or band:N:B:DELTA.
    #[arg(long, value_name = "SPEC")]
    gen: Option<String>,
}

impl MatrixArgs {
    fn source(&self) -> Result<MatrixSource, Error> {
        match (&self.matrix, &self.gen) {
            (Some(path), None) => Ok(MatrixSource::File { path: path.clone() }),
            (None, Some(spec)) => Ok(MatrixSource::Generate {
                spec: MatrixSpec::from_str(spec)?,
            }),
            _ => Err(Error::Config(
                "exactly one of --matrix and --gen is required".into(),
            )),
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Number of simulated nodes.
    #[arg(long)]
    nodes: usize,
    /// Redundant copies of the retained search directions (rho).
    #[arg(long, default_value_t = 0)]
    redundancy: usize,
    /// Outer relative residual reduction.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Relative tolerance of the iterative recovery subsystem solver.
    #[arg(long, default_value_t = 1e-14)]
    inner_tol: f64,
    /// Row threshold below which the recovery subsystem is solved directly.
    #[arg(long, default_value_t = 4096)]
    direct_threshold: usize,
    /// Message latency in model time units.
    #[arg(long, default_value_t = 1.0)]
    latency: f64,
    /// Per-element transfer cost in model time units.
    #[arg(long, value_name = "COST", default_value_t = 0.01)]
    bandwidth_cost: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = 10_000)]
    max_iterations: usize,
    /// Preconditioner: block-jacobi-exact or identity.
    #[arg(long, default_value = "block-jacobi-exact")]
    precond: String,
    /// Experiment seed (configuration identity; the simulation itself is
    /// deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report format.
    #[arg(long, default_value = "json")]
    format: String,
}

impl CommonArgs {
    fn base_config(&self, matrix: MatrixSource, failures: usize) -> Result<ExperimentConfig, Error> {
        Ok(ExperimentConfig {
            matrix,
            node_count: self.nodes,
            redundancy: self.redundancy,
            failures,
            progress_fractions: vec![0.2, 0.5, 0.8],
            failure_locations: vec![FailureLocation::Start, FailureLocation::Center],
            repetitions: 1,
            seed: self.seed,
            rel_tolerance: self.tol,
            inner_tolerance: self.inner_tol,
            direct_threshold: self.direct_threshold,
            latency: self.latency,
            per_element_cost: self.bandwidth_cost,
            max_iterations: self.max_iterations,
            preconditioner: PreconditionerKind::from_str(&self.precond)?,
        })
    }

    fn format(&self) -> Result<ReportFormat, Error> {
        ReportFormat::from_str(&self.format)
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Failure spec NF@FRACTION:LOCATION, e.g. 3@0.5:center.
    #[arg(long, value_name = "SPEC")]
    fail: Option<String>,
    /// Number of simultaneous node failures (with --fail-at).
    #[arg(long, default_value_t = 0)]
    failures: usize,
    /// Comma-separated absolute trigger iterations.
    #[arg(long, value_name = "ITERS", value_delimiter = ',')]
    fail_at: Vec<usize>,
    /// Failure location for --fail-at: start or center.
    #[arg(long, default_value = "start")]
    fail_location: String,
    /// Write an event trace (JSON lines) of the main run.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// JSON config file mirroring the experiment configuration; explicit
    /// flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of simultaneous node failures per disturbed run.
    #[arg(long, default_value_t = 0)]
    failures: usize,
    /// Progress fractions for the failure triggers.
    #[arg(long, value_delimiter = ',', value_name = "FRACS")]
    progress: Option<Vec<f64>>,
    /// Restrict to one failure location (default: both start and center).
    #[arg(long)]
    fail_location: Option<String>,
    /// Repetitions per cell.
    #[arg(long, default_value_t = 1)]
    reps: usize,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Number of simulated nodes.
    #[arg(long)]
    nodes: usize,
    /// Redundant copies (rho).
    #[arg(long)]
    redundancy: usize,
    /// Message latency in model time units.
    #[arg(long, default_value_t = 1.0)]
    latency: f64,
    /// Per-element transfer cost in model time units.
    #[arg(long, value_name = "COST", default_value_t = 0.01)]
    bandwidth_cost: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Number of simulated nodes.
    #[arg(long)]
    nodes: usize,
    /// Redundant copies (rho) for the plan checks.
    #[arg(long, default_value_t = 1)]
    redundancy: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 3,
        Error::Unrecoverable(_) => 2,
        _ => 1,
    }
}

fn write_output(path: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => println!("{content}"),
    }
    Ok(())
}

fn write_trace(path: &PathBuf, events: &[TraceEvent]) -> Result<(), Error> {
    let mut lines = String::new();
    for event in events {
        lines.push_str(
            &serde_json::to_string(event)
                .map_err(|e| Error::Config(format!("trace serialization: {e}")))?,
        );
        lines.push('\n');
    }
    std::fs::write(path, lines)?;
    Ok(())
}

/// Parses `NF@FRACTION:LOCATION`.
fn parse_fail_spec(text: &str) -> Result<(usize, f64, FailureLocation), Error> {
    let usage = || {
        Error::Config(format!(
            "bad --fail spec '{text}', expected NF@FRACTION:LOCATION (e.g. 1@0.5:center)"
        ))
    };
    let (nf, rest) = text.split_once('@').ok_or_else(usage)?;
    let (frac, loc) = rest.split_once(':').ok_or_else(usage)?;
    Ok((
        nf.parse().map_err(|_| usage())?,
        frac.parse().map_err(|_| usage())?,
        FailureLocation::from_str(loc)?,
    ))
}

fn cmd_solve(args: SolveArgs) -> Result<u8, Error> {
    let started = Instant::now();
    let source = args.matrix.source()?;
    let (failures, spec) = match (&args.fail, args.fail_at.is_empty()) {
        (Some(text), true) => {
            let (nf, fraction, location) = parse_fail_spec(text)?;
            (nf, SolveFailureSpec::AtProgress { fraction, location })
        }
        (None, false) => (
            args.failures,
            SolveFailureSpec::AtIterations {
                iterations: args.fail_at.clone(),
                location: FailureLocation::from_str(&args.fail_location)?,
            },
        ),
        (None, true) => (0, SolveFailureSpec::None),
        (Some(_), false) => {
            return Err(Error::Config(
                "--fail and --fail-at are mutually exclusive".into(),
            ));
        }
    };
    let config = args.common.base_config(source, failures)?;
    let output = run_solve(&config, &spec, args.trace.is_some())?;
    if let Some(path) = &args.trace {
        write_trace(path, &output.trace)?;
    }
    let text = emit_report(&output.report, args.common.format()?)?;
    write_output(&args.common.output, &text)?;
    eprintln!(
        "solve finished in {:.3}s (wall clock, informational only)",
        started.elapsed().as_secs_f64()
    );
    if output.unrecoverable {
        return Ok(2);
    }
    if !output.converged {
        return Ok(1);
    }
    Ok(0)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<u8, Error> {
    let started = Instant::now();
    // config file first, explicit flags override
    let mut config = if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str::<ExperimentConfig>(&text)
            .map_err(|e| Error::Config(format!("config file: {e}")))?
    } else {
        args.common.base_config(args.matrix.source()?, args.failures)?
    };
    if args.config.is_some() {
        // flags that were given explicitly win over the file
        if args.matrix.matrix.is_some() || args.matrix.gen.is_some() {
            config.matrix = args.matrix.source()?;
        }
        config.node_count = args.common.nodes;
        config.redundancy = args.common.redundancy;
        if args.failures > 0 {
            config.failures = args.failures;
        }
    }
    if let Some(fractions) = args.progress {
        config.progress_fractions = fractions;
    }
    if let Some(loc) = &args.fail_location {
        config.failure_locations = vec![FailureLocation::from_str(loc)?];
    }
    config.repetitions = args.reps;
    let report = run_experiment(&config)?;
    let text = emit_report(&report, args.common.format()?)?;
    write_output(&args.common.output, &text)?;
    eprintln!(
        "experiment with {} runs finished in {:.3}s (wall clock, informational only)",
        report.runs.len(),
        started.elapsed().as_secs_f64()
    );
    let any_unrecoverable = report.runs.iter().any(|r| r.error.is_some());
    let all_converged = report
        .runs
        .iter()
        .filter(|r| r.error.is_none())
        .all(|r| r.converged);
    if any_unrecoverable {
        return Ok(2);
    }
    if !all_converged {
        return Ok(1);
    }
    Ok(0)
}

fn load_matrix(source: &MatrixSource) -> Result<SparseMatrix, Error> {
    match source {
        MatrixSource::File { path } => parse_matrix_market(&std::fs::read_to_string(path)?),
        MatrixSource::Generate { spec } => esr_pcg::generate_matrix(*spec),
    }
}

fn cmd_plan(args: PlanArgs) -> Result<u8, Error> {
    let a = load_matrix(&args.matrix.source()?)?;
    let part = partition_rows(a.n_rows(), args.nodes)?;
    let pattern = compute_send_sets(&a, &part)?;
    let plan = compute_redundancy_plan(&pattern, args.redundancy)?;
    let latency = LatencyModel::constant(args.latency)?;
    let overhead = estimate_overhead(&plan, &pattern, &latency, args.bandwidth_cost)?;
    let verification = verify_plan(&plan, &pattern);
    let zero_latency = zero_latency_condition(&a, &part, args.redundancy)?;
    let mut doc = plan.to_json();
    doc["overhead"] = serde_json::to_value(&overhead)
        .map_err(|e| Error::Config(format!("serialization: {e}")))?;
    doc["coverage_ok"] = serde_json::Value::Bool(verification.ok);
    doc["zero_latency"] = serde_json::to_value(&zero_latency)
        .map_err(|e| Error::Config(format!("serialization: {e}")))?;
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("serialization: {e}")))?;
    write_output(&args.output, &text)?;
    Ok(if verification.ok { 0 } else { 1 })
}

fn run_check(failures: &mut usize, name: &str, f: impl FnOnce() -> Result<(), String>) {
    match f() {
        Ok(()) => println!("PASS {name}"),
        Err(detail) => {
            *failures += 1;
            println!("FAIL {name}: {detail}");
        }
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, Error> {
    let a = load_matrix(&args.matrix.source()?)?;
    let part = partition_rows(a.n_rows(), args.nodes)?;
    let pattern = compute_send_sets(&a, &part)?;
    let plan = compute_redundancy_plan(&pattern, args.redundancy)?;
    let mut failures = 0usize;

    run_check(&mut failures, "spd-structure", || {
        a.check_spd_structure().map_err(|e| e.to_string())
    });

    run_check(&mut failures, "partition-covers-rows", || {
        let mut next = 0;
        for i in 0..part.node_count() {
            let r = part.range(i);
            if r.start != next {
                return Err(format!("gap before node {i}"));
            }
            next = r.end;
        }
        if next != a.n_rows() {
            return Err("ranges do not cover all rows".into());
        }
        Ok(())
    });

    run_check(&mut failures, "spmv-matches-triplet-oracle", || {
        let x: Vec<f64> = (0..a.n_cols()).map(|i| ((i % 17) as f64) - 8.0).collect();
        let y = a.spmv(&x).map_err(|e| e.to_string())?;
        let mut oracle = vec![0.0; a.n_rows()];
        for (r, c, v) in a.iter_triplets() {
            oracle[r] += v * x[c];
        }
        if y.iter().zip(&oracle).all(|(u, v)| u.to_bits() == v.to_bits()) {
            Ok(())
        } else {
            Err("bitwise mismatch".into())
        }
    });

    run_check(&mut failures, "plan-coverage", || {
        let v = verify_plan(&plan, &pattern);
        if v.ok {
            Ok(())
        } else {
            Err(format!("{} coverage violations", v.violations.len()))
        }
    });

    run_check(&mut failures, "direct-solve-round-trip", || {
        let m = a.n_rows().min(128);
        let rows: Vec<usize> = (0..m).collect();
        let block = a.extract_submatrix(&rows, &rows).map_err(|e| e.to_string())?;
        let b: Vec<f64> = (0..m).map(|i| 1.0 + (i % 5) as f64).collect();
        let x = esr_pcg::direct_solve(&block, &b)
            .map_err(|e| format!("leading block not SPD: {e}"))?;
        let bb = block.spmv(&x).map_err(|e| e.to_string())?;
        let num: f64 = bb
            .iter()
            .zip(&b)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if num / den <= 1e-12 {
            Ok(())
        } else {
            Err(format!("relative residual {:e}", num / den))
        }
    });

    run_check(&mut failures, "redundancy-live-invariant", || {
        let b = a.spmv(&vec![1.0; a.n_cols()]).map_err(|e| e.to_string())?;
        let mut cluster = build_cluster(
            a.clone(),
            b,
            part.clone(),
            plan.clone(),
            PreconditionerKind::BlockJacobiExact,
            CostModel::default(),
        )
        .map_err(|e| e.to_string())?;
        let config = SolverConfig {
            redundancy: args.redundancy,
            max_iterations: 3,
            ..Default::default()
        };
        pcg_run(
            &mut cluster,
            &config,
            &FailureSchedule::empty(),
            &RunOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        for owner in 0..part.node_count() {
            for s in part.range(owner) {
                let holders = cluster.live_copy_holders(owner, s, esr_pcg::BackupAge::Current);
                if holders.len() < args.redundancy + 1 {
                    return Err(format!(
                        "element {s} of node {owner} has {} copies, needs {}",
                        holders.len(),
                        args.redundancy + 1
                    ));
                }
            }
        }
        Ok(())
    });

    run_check(&mut failures, "redundancy-neutrality", || {
        let b = a.spmv(&vec![1.0; a.n_cols()]).map_err(|e| e.to_string())?;
        let run = |rho: usize| -> Result<Vec<u64>, String> {
            let plan = compute_redundancy_plan(&pattern, rho).map_err(|e| e.to_string())?;
            let mut cluster = build_cluster(
                a.clone(),
                b.clone(),
                part.clone(),
                plan,
                PreconditionerKind::BlockJacobiExact,
                CostModel::default(),
            )
            .map_err(|e| e.to_string())?;
            let config = SolverConfig {
                redundancy: rho,
                max_iterations: 5,
                ..Default::default()
            };
            let outcome = pcg_run(
                &mut cluster,
                &config,
                &FailureSchedule::empty(),
                &RunOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            Ok(outcome.x.iter().map(|v| v.to_bits()).collect())
        };
        if run(0)? == run(args.redundancy)? {
            Ok(())
        } else {
            Err("iterates differ between redundancy levels".into())
        }
    });

    if failures == 0 {
        println!("verify: all checks passed");
        Ok(0)
    } else {
        println!("verify: {failures} check(s) failed");
        Ok(1)
    }
}
