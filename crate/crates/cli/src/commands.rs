use std::fmt::Write as _;
use std::time::Instant;

use sni_core::baselines::{matched_power_sweeps, power_iteration, randomized_svd};
use sni_core::datasets::{
    load_ratings, make_synthetic, read_observations, split, write_observations, RatingsFileSpec,
    SyntheticProblem, SyntheticSpec,
};
use sni_core::matcore::seeded_rng;
use sni_core::{
    dlra_run, evaluate_rmse, run_with_trace, select_iterations, sni_complete, sni_run, DenseTarget,
    Error, LowRankFactors, Method, ObservationMode, ObservationSet, SolverConfig, StopReason,
    SvdResult,
};
use toml::{Table, Value};

use crate::args::{
    parse_spectrum, ApproxArgs, ApproxMethod, BenchArgs, CompleteArgs, GenerateArgs, ProblemArgs,
    SolverArgs,
};
use crate::report::{
    finite, stop_reason_name, trace_csv, write_file, RunReport, REPORT_FILE, TRACE_FILE,
};
use crate::CliError;

/// Exit status of a successful command: 0 when it converged, 2 when it ran
/// out of iterations.
pub struct Outcome {
    pub exit_code: u8,
}

impl Outcome {
    fn from_converged(converged: bool) -> Self {
        Self {
            exit_code: if converged { 0 } else { 2 },
        }
    }
}

/// Initial factors and randomized baselines draw from a stream independent
/// of the one that generated the problem.
fn method_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Seed of the train/validation split, distinct from the train/test split.
fn validation_seed(seed: u64) -> u64 {
    seed ^ 0xD1B5_4A32_D192_ED03
}

fn run_error(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

/// Configuration mistakes are usage errors; anything else is a run failure.
fn classify(e: Error) -> CliError {
    match e {
        Error::InvalidConfig(msg) => CliError::Usage(msg),
        other => CliError::Run(other.to_string()),
    }
}

fn check_rank(rank: usize, m: usize, n: usize) -> Result<(), CliError> {
    if rank == 0 || rank > m.min(n) {
        return Err(CliError::Usage(format!(
            "--rank {rank} must lie in 1..={} for a {m}x{n} problem",
            m.min(n)
        )));
    }
    Ok(())
}

fn build_problem(p: &ProblemArgs, fraction: f64, seed: u64) -> Result<SyntheticProblem, CliError> {
    check_rank(p.rank, p.m, p.n)?;
    let spectrum = parse_spectrum(&p.spectrum, p.rank, p.m, p.n).map_err(CliError::Usage)?;
    let spec = SyntheticSpec {
        m: p.m,
        n: p.n,
        spectrum,
        noise: p.noise,
        observed_fraction: fraction,
        seed,
    };
    make_synthetic(&spec).map_err(classify)
}

fn problem_table(p: &ProblemArgs, seed: u64) -> Table {
    let mut t = Table::new();
    t.insert("m".into(), Value::Integer(p.m as i64));
    t.insert("n".into(), Value::Integer(p.n as i64));
    t.insert("rank".into(), Value::Integer(p.rank as i64));
    t.insert("spectrum".into(), Value::String(p.spectrum.clone()));
    t.insert("noise".into(), Value::Float(p.noise));
    t.insert("seed".into(), Value::Integer(seed as i64));
    t
}

fn solver_table(t: &mut Table, method: ApproxMethod, s: &SolverArgs, rank: usize) {
    match method {
        ApproxMethod::Sni | ApproxMethod::Dlra => {
            t.insert("tolerance".into(), Value::Float(s.tol));
            t.insert("max_iterations".into(), Value::Integer(s.max_iters as i64));
            if method == ApproxMethod::Dlra {
                t.insert("stepsize".into(), Value::Float(s.stepsize));
            }
        }
        ApproxMethod::Power => {
            t.insert(
                "sweeps".into(),
                Value::Integer(power_sweeps(s, rank) as i64),
            );
        }
        ApproxMethod::Rsvd => {
            t.insert("oversample".into(), Value::Integer(s.oversample as i64));
            t.insert("power_iters".into(), Value::Integer(s.power_iters as i64));
        }
    }
}

fn power_sweeps(s: &SolverArgs, rank: usize) -> usize {
    s.sweeps
        .unwrap_or_else(|| matched_power_sweeps(rank, s.oversample, s.power_iters))
}

fn solver_config(s: &SolverArgs, rank: usize, seed: u64) -> Result<SolverConfig, CliError> {
    let cfg = SolverConfig {
        rank,
        tolerance: s.tol,
        max_iterations: s.max_iters,
        seed,
        stepsize: s.stepsize,
        mode: ObservationMode::FullObservation,
        ..SolverConfig::default()
    };
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

/// Runs one approximation method on `problem`. `detailed` adds the subspace
/// errors to the trace of the integrators.
fn run_method(
    method: ApproxMethod,
    problem: &SyntheticProblem,
    rank: usize,
    s: &SolverArgs,
    seed: u64,
    detailed: bool,
) -> Result<SvdResult, CliError> {
    let m = &problem.matrix;
    let seed = method_seed(seed);
    match method {
        ApproxMethod::Sni | ApproxMethod::Dlra => {
            let cfg = solver_config(s, rank, seed)?;
            let f0 = LowRankFactors::random(m.nrows(), m.ncols(), rank, &mut seeded_rng(seed))
                .map_err(run_error)?;
            let target = DenseTarget::new(m);
            let kind = if method == ApproxMethod::Sni {
                Method::Sni
            } else {
                Method::Dlra
            };
            let result = match (kind, detailed) {
                (_, true) => run_with_trace(kind, &target, f0, &cfg).map(|(r, _)| r),
                (Method::Sni, false) => sni_run(&target, f0, &cfg),
                (Method::Dlra, false) => dlra_run(&target, f0, &cfg),
            };
            result.map_err(run_error)
        }
        ApproxMethod::Power => {
            let sweeps = power_sweeps(s, rank);
            if sweeps == 0 {
                return Err(CliError::Usage("--sweeps must be at least 1".into()));
            }
            power_iteration(m, rank, sweeps, seed).map_err(classify)
        }
        ApproxMethod::Rsvd => {
            randomized_svd(m, rank, s.oversample, s.power_iters, seed).map_err(classify)
        }
    }
}

fn emit(
    report: &RunReport,
    trace: Option<String>,
    out: Option<&std::path::Path>,
) -> Result<(), CliError> {
    let text = report.to_toml()?;
    if let Some(dir) = out {
        write_file(dir, REPORT_FILE, &text)?;
        if let Some(trace) = trace {
            write_file(dir, TRACE_FILE, &trace)?;
        }
    }
    print!("{text}");
    Ok(())
}

pub fn approx(a: &ApproxArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let problem = build_problem(&a.problem, 1.0, a.seed)?;
    let result = run_method(a.method, &problem, a.problem.rank, &a.solver, a.seed, true)?;
    let oracle = problem.oracle(a.problem.rank);
    let rel = result.relative_error(&oracle);
    let wall = start.elapsed().as_secs_f64();
    eprintln!("wall time: {wall:.3} s");

    let mut config = problem_table(&a.problem, a.seed);
    solver_table(&mut config, a.method, &a.solver, a.problem.rank);
    let mut metrics = Table::new();
    metrics.insert("relative_error".into(), finite("relative_error", rel)?);
    metrics.insert(
        "final_objective".into(),
        finite(
            "final_objective",
            *result.trace.objectives().last().expect("initial record"),
        )?,
    );
    let report = RunReport {
        command: "approx".into(),
        method: a.method.name().into(),
        converged: result.converged,
        stop_reason: stop_reason_name(result.stop_reason).into(),
        iterations: result.iterations,
        wall_time_seconds: a.timing.then_some(wall),
        trace_file: a.out.as_ref().map(|_| TRACE_FILE.to_string()),
        config,
        metrics,
    };
    let trace = trace_csv(&result.trace, a.timing)?;
    emit(&report, Some(trace), a.out.as_deref())?;
    Ok(Outcome::from_converged(result.converged))
}

fn load_split(c: &CompleteArgs) -> Result<(ObservationSet, ObservationSet), CliError> {
    let needs_split = c.test.is_none();
    if needs_split && !(c.test_fraction > 0.0 && c.test_fraction < 1.0) {
        return Err(CliError::Usage(format!(
            "--test-fraction {} must lie in (0, 1)",
            c.test_fraction
        )));
    }
    let all = if let Some(path) = &c.ratings {
        let spec = RatingsFileSpec {
            path: path.clone(),
            delimiter: c.delimiter.into(),
            strict: !c.lenient,
        };
        let data = load_ratings(&spec).map_err(run_error)?;
        if !data.malformed_lines.is_empty() {
            eprintln!(
                "skipped {} malformed line(s), first at line {}",
                data.malformed_lines.len(),
                data.malformed_lines[0]
            );
        }
        data.observations
    } else {
        let path = c
            .train
            .as_ref()
            .expect("clap requires --ratings or --train");
        read_observations(path).map_err(run_error)?
    };
    match &c.test {
        Some(path) => {
            let test = read_observations(path).map_err(run_error)?;
            if test.shape() != all.shape() {
                return Err(CliError::Run(format!(
                    "test set shape {:?} differs from training shape {:?}",
                    test.shape(),
                    all.shape()
                )));
            }
            Ok((all, test))
        }
        None => split(&all, c.test_fraction, c.seed).map_err(classify),
    }
}

pub fn complete(c: &CompleteArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let (train, test) = load_split(c)?;
    let (rows, cols) = train.shape();
    check_rank(c.rank, rows, cols)?;
    if train.is_empty() {
        return Err(CliError::Run("training set is empty".into()));
    }
    let offset = if c.center {
        train.mean().expect("non-empty training set")
    } else {
        0.0
    };
    let train_c = train.shifted(offset);
    let test_c = test.shifted(offset);
    let clamp = c.clamp.map(|(lo, hi)| (lo - offset, hi - offset));

    let seed = method_seed(c.seed);
    let cfg = SolverConfig {
        rank: c.rank,
        tolerance: c.tol,
        max_iterations: c.max_iters,
        seed,
        objective_floor: c.objective_floor,
        mode: ObservationMode::PartialObservation,
        ..SolverConfig::default()
    };
    cfg.validate().map_err(classify)?;
    let f0 =
        LowRankFactors::random(rows, cols, c.rank, &mut seeded_rng(seed)).map_err(run_error)?;
    let mut selection = None;
    let cfg = if c.validation_fraction > 0.0 {
        if c.validation_fraction >= 1.0 {
            return Err(CliError::Usage(format!(
                "--validation-fraction {} must lie in [0, 1)",
                c.validation_fraction
            )));
        }
        let (fit, validation) =
            split(&train_c, c.validation_fraction, validation_seed(c.seed)).map_err(classify)?;
        let choice = select_iterations(&fit, &validation, f0.clone(), &cfg, clamp, c.patience)
            .map_err(run_error)?;
        selection = Some(choice);
        SolverConfig {
            max_iterations: choice.iterations,
            ..cfg
        }
    } else if c.validation_fraction == 0.0 {
        cfg
    } else {
        return Err(CliError::Usage(
            "--validation-fraction must be nonnegative".into(),
        ));
    };
    let result = sni_complete(&train_c, f0, &cfg).map_err(run_error)?;
    let factors = result.factors().map_err(run_error)?;
    let score = evaluate_rmse(&test_c, &factors, clamp).map_err(run_error)?;
    let train_score = evaluate_rmse(&train_c, &factors, clamp).map_err(run_error)?;
    let wall = start.elapsed().as_secs_f64();
    eprintln!("wall time: {wall:.3} s");

    let mut config = Table::new();
    let source = c.ratings.as_ref().or(c.train.as_ref()).expect("input path");
    config.insert("input".into(), Value::String(source.display().to_string()));
    if let Some(test) = &c.test {
        config.insert("test".into(), Value::String(test.display().to_string()));
    } else {
        config.insert("test_fraction".into(), Value::Float(c.test_fraction));
    }
    config.insert("rows".into(), Value::Integer(rows as i64));
    config.insert("cols".into(), Value::Integer(cols as i64));
    config.insert("rank".into(), Value::Integer(c.rank as i64));
    config.insert("seed".into(), Value::Integer(c.seed as i64));
    config.insert("tolerance".into(), Value::Float(c.tol));
    config.insert("max_iterations".into(), Value::Integer(c.max_iters as i64));
    config.insert("objective_floor".into(), Value::Float(c.objective_floor));
    config.insert("center".into(), Value::Boolean(c.center));
    if c.validation_fraction > 0.0 {
        config.insert(
            "validation_fraction".into(),
            Value::Float(c.validation_fraction),
        );
        config.insert("patience".into(), Value::Integer(c.patience as i64));
    }
    if let Some((lo, hi)) = c.clamp {
        config.insert(
            "clamp".into(),
            Value::Array(vec![Value::Float(lo), Value::Float(hi)]),
        );
    }

    let mut metrics = Table::new();
    metrics.insert("test_rmse".into(), finite("test_rmse", score.rmse)?);
    metrics.insert("train_rmse".into(), finite("train_rmse", train_score.rmse)?);
    metrics.insert(
        "train_objective".into(),
        finite(
            "train_objective",
            *result.trace.objectives().last().expect("initial record"),
        )?,
    );
    metrics.insert("test_count".into(), Value::Integer(score.count as i64));
    metrics.insert("train_count".into(), Value::Integer(train.len() as i64));
    metrics.insert("offset".into(), finite("offset", offset)?);
    if let Some(choice) = selection {
        metrics.insert(
            "validation_rmse".into(),
            finite("validation_rmse", choice.validation_rmse)?,
        );
        metrics.insert(
            "selected_iterations".into(),
            Value::Integer(choice.iterations as i64),
        );
        metrics.insert(
            "explored_iterations".into(),
            Value::Integer(choice.explored as i64),
        );
    }

    // A refit that spends exactly the validated budget stopped where intended.
    let (converged, stop_reason) = match (selection, result.stop_reason) {
        (Some(_), StopReason::MaxIterations) => (true, "selected_budget"),
        (_, reason) => (result.converged, stop_reason_name(reason)),
    };
    let report = RunReport {
        command: "complete".into(),
        method: "sni".into(),
        converged,
        stop_reason: stop_reason.into(),
        iterations: result.iterations,
        wall_time_seconds: c.timing.then_some(wall),
        trace_file: c.out.as_ref().map(|_| TRACE_FILE.to_string()),
        config,
        metrics,
    };
    let trace = trace_csv(&result.trace, c.timing)?;
    emit(&report, Some(trace), c.out.as_deref())?;
    Ok(Outcome::from_converged(converged))
}

struct TrialRow {
    method: ApproxMethod,
    trial: usize,
    seed: u64,
    relative_error: f64,
    iterations: usize,
    converged: bool,
    seconds: f64,
}

pub fn bench(b: &BenchArgs) -> Result<Outcome, CliError> {
    if b.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    if b.methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    let mut methods = b.methods.clone();
    methods.dedup();
    let start = Instant::now();
    let mut rows = Vec::new();
    for trial in 0..b.trials {
        let seed = b.seed + trial as u64;
        let problem = build_problem(&b.problem, 1.0, seed)?;
        let oracle = problem.oracle(b.problem.rank);
        for &method in &methods {
            let t0 = Instant::now();
            let result = run_method(method, &problem, b.problem.rank, &b.solver, seed, false)?;
            let relative_error = result.relative_error(&oracle);
            finite("relative_error", relative_error)?;
            rows.push(TrialRow {
                method,
                trial,
                seed,
                relative_error,
                iterations: result.iterations,
                converged: result.converged,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
    }
    let wall = start.elapsed().as_secs_f64();

    let mut trials_csv = String::from("method,trial,seed,relative_error,iterations,converged");
    trials_csv.push_str(if b.timing { ",seconds\n" } else { "\n" });
    for r in &rows {
        let _ = write!(
            trials_csv,
            "{},{},{},{:e},{},{}",
            r.method.name(),
            r.trial,
            r.seed,
            r.relative_error,
            r.iterations,
            r.converged
        );
        if b.timing {
            let _ = write!(trials_csv, ",{:.6}", r.seconds);
        }
        trials_csv.push('\n');
    }

    let mut table = String::from("method,trials,mean_relative_error,mean_iterations");
    table.push_str(if b.timing { ",mean_seconds\n" } else { "\n" });
    let mut metrics = Table::new();
    for &method in &methods {
        let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.method == method).collect();
        let k = mine.len() as f64;
        let mean_err = mine.iter().map(|r| r.relative_error).sum::<f64>() / k;
        let mean_iters = mine.iter().map(|r| r.iterations as f64).sum::<f64>() / k;
        let mean_secs = mine.iter().map(|r| r.seconds).sum::<f64>() / k;
        eprintln!("{}: mean {:.3} s per trial", method.name(), mean_secs);
        let _ = write!(
            table,
            "{},{},{:e},{}",
            method.name(),
            mine.len(),
            mean_err,
            mean_iters
        );
        if b.timing {
            let _ = write!(table, ",{mean_secs:.6}");
        }
        table.push('\n');
        metrics.insert(
            format!("{}_mean_relative_error", method.name()),
            finite("mean_relative_error", mean_err)?,
        );
    }
    eprintln!("wall time: {wall:.3} s");

    let mut config = problem_table(&b.problem, b.seed);
    config.insert("trials".into(), Value::Integer(b.trials as i64));
    for &method in &methods {
        let mut t = Table::new();
        solver_table(&mut t, method, &b.solver, b.problem.rank);
        config.insert(method.name().into(), Value::Table(t));
    }
    let report = RunReport {
        command: "bench".into(),
        method: methods
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(","),
        converged: rows.iter().all(|r| r.converged),
        stop_reason: "trials_completed".into(),
        iterations: rows.iter().map(|r| r.iterations).sum(),
        wall_time_seconds: b.timing.then_some(wall),
        trace_file: None,
        config,
        metrics,
    };
    if let Some(dir) = &b.out {
        write_file(dir, REPORT_FILE, &report.to_toml()?)?;
        write_file(dir, "bench.csv", &table)?;
        write_file(dir, "trials.csv", &trials_csv)?;
    }
    print!("{table}");
    // The comparison itself succeeded even if a baseline ran out of budget;
    // per-trial convergence is in trials.csv.
    Ok(Outcome { exit_code: 0 })
}

pub fn generate(g: &GenerateArgs) -> Result<Outcome, CliError> {
    if !(g.fraction > 0.0 && g.fraction <= 1.0) {
        return Err(CliError::Usage(format!(
            "--fraction {} must lie in (0, 1]",
            g.fraction
        )));
    }
    let problem = build_problem(&g.problem, g.fraction, g.seed)?;
    write_observations(&g.out, &problem.observations).map_err(run_error)?;
    eprintln!(
        "wrote {} of {} entries to {}",
        problem.observations.len(),
        g.problem.m * g.problem.n,
        g.out.display()
    );
    Ok(Outcome { exit_code: 0 })
}
