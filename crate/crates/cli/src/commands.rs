//! The `run`, `compare` and `diagnose` subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wgflow::diagnostics::{self, DiagnoseOptions, DiagnosticEntry, DiagnosticsReport, Location};
use wgflow::reference::empirical_order;
use wgflow::stepper::{self, tau_threshold, Scheme, StepperConfig, Trajectory};
use wgflow::{EnergySpec, Error, QuantileMeasure};

use crate::catalog::{self, Reference};
use crate::config::{RunConfig, SchemeChoice};
use crate::error::{invalid, CliError};
use crate::output::{self, Constants, Manifest, RunStatus, MANIFEST};

/// Command-line switches shared by `run` and `compare`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub override_tau_guard: bool,
    pub quiet: bool,
}

/// Problem data built from a config.
pub struct Problem {
    pub spec: EnergySpec,
    pub initial: QuantileMeasure,
}

impl Problem {
    pub fn build(cfg: &RunConfig) -> Result<Self, CliError> {
        let initial = catalog::initial_measure(&cfg.problem, cfg.discretization.n)?;
        let spec = catalog::energy_spec(&cfg.problem, &initial)?;
        Ok(Self { spec, initial })
    }
}

pub fn schemes(choice: SchemeChoice) -> Vec<Scheme> {
    match choice {
        SchemeChoice::Jko => vec![Scheme::Jko],
        SchemeChoice::Bdf2 => vec![Scheme::Bdf2],
        SchemeChoice::Both => vec![Scheme::Jko, Scheme::Bdf2],
    }
}

fn scheme_name(scheme: Scheme) -> &'static str {
    match scheme {
        Scheme::Jko => "jko",
        Scheme::Bdf2 => "bdf2",
    }
}

pub fn stepper_config(
    cfg: &RunConfig,
    spec: &EnergySpec,
    tau: f64,
    override_guard: bool,
) -> Result<StepperConfig, CliError> {
    let o = &cfg.optimizer;
    let mut sc = StepperConfig::new(tau, spec).map_err(invalid)?;
    sc.d2 = o.d2;
    sc.tau_star = tau_threshold(sc.d1, sc.d2).map_err(invalid)?;
    sc.grad_tol = o.grad_tol;
    sc.max_iters = o.max_iters;
    sc.min_gap = o.min_gap;
    sc.override_tau_guard = o.override_tau_guard || override_guard;
    sc.monitor_lower_bound = o.monitor_lower_bound;
    sc.initializer = cfg.discretization.initializer;
    sc.validate().map_err(invalid)?;
    Ok(sc)
}

fn constants(sc: &StepperConfig, d3: f64, d4: f64) -> Constants {
    Constants {
        d1: sc.d1,
        d2: sc.d2,
        d3,
        d4,
        tau_star: sc.tau_star.is_finite().then_some(sc.tau_star),
    }
}

/// Outcome of one scheme of a run.
#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub dir: PathBuf,
    pub trajectory: Trajectory,
    pub manifest: Manifest,
}

/// Runs one scheme at step `tau` and writes its artifacts to `dir`. A solver
/// failure persists the partial trajectory before returning the error.
fn execute(
    cfg: &RunConfig,
    problem: &Problem,
    scheme: Scheme,
    tau: f64,
    dir: &Path,
    opts: &RunOptions,
) -> Result<SchemeOutcome, CliError> {
    let sc = stepper_config(cfg, &problem.spec, tau, opts.override_tau_guard)?;
    if scheme == Scheme::Bdf2 {
        sc.check_tau_guard().map_err(invalid)?;
    }
    let (traj, failure) = match stepper::run(&problem.initial, cfg.discretization.t_end, scheme, &problem.spec, &sc) {
        Ok(traj) => (traj, None),
        Err(Error::RunFailed {
            trajectory,
            source,
            completed,
        }) => (*trajectory, Some(format!("stopped after {completed} steps: {source}"))),
        Err(e) => return Err(invalid(e)),
    };

    let (d3, d4) = diagnostics::initial_data_constants(&traj, &problem.spec).unwrap_or((f64::NAN, f64::NAN));
    let mut error = failure.clone();
    let report = if cfg.diagnostics.enabled && failure.is_none() {
        match diagnostics::diagnose(&traj, &problem.spec, &diagnose_options(cfg, &traj)) {
            Ok(r) => Some(r),
            Err(e) => {
                error = Some(format!("diagnostics: {e}"));
                None
            }
        }
    } else {
        None
    };

    let (states_file, scalars_file) = output::write_series_files(dir, &traj, &problem.spec, cfg.output.format)?;
    let manifest = Manifest {
        status: if failure.is_some() {
            RunStatus::SolverFailure
        } else {
            RunStatus::Completed
        },
        scheme,
        initializer: traj.initializer,
        tau,
        grad_tol: traj.grad_tol,
        completed_steps: traj.records.len(),
        final_time: traj.final_time(),
        constants: constants(&sc, d3, d4),
        states_file,
        scalars_file,
        error,
        config: cfg.clone(),
        diagnostics: report,
    };
    output::write_json(&dir.join(MANIFEST), &manifest)?;
    if let Some(msg) = failure {
        return Err(CliError::Solver(format!(
            "{} (partial trajectory in {})",
            msg,
            dir.display()
        )));
    }
    Ok(SchemeOutcome {
        scheme,
        dir: dir.to_path_buf(),
        trajectory: traj,
        manifest,
    })
}

fn diagnose_options(cfg: &RunConfig, traj: &Trajectory) -> DiagnoseOptions {
    let mut options = DiagnoseOptions::for_trajectory(traj);
    options.el_tolerance = cfg.diagnostics.el_tolerance;
    options.d2 = cfg.optimizer.d2;
    options
}

fn out_dir(cfg: &RunConfig, opts: &RunOptions) -> PathBuf {
    opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

/// `run`: one directory per scheme (the output directory itself when a
/// single scheme is selected).
pub fn cmd_run(cfg: &RunConfig, opts: &RunOptions) -> Result<Vec<SchemeOutcome>, CliError> {
    let problem = Problem::build(cfg)?;
    let root = out_dir(cfg, opts);
    let selected = schemes(cfg.discretization.scheme);
    let mut outcomes = Vec::new();
    for &scheme in &selected {
        let dir = if selected.len() == 1 {
            root.clone()
        } else {
            root.join(scheme_name(scheme))
        };
        let outcome = execute(cfg, &problem, scheme, cfg.discretization.tau, &dir, opts)?;
        if !opts.quiet {
            let m = &outcome.manifest;
            let failed = m.diagnostics.as_ref().map_or(0, |r| r.failures().count());
            println!(
                "{}: {} steps to t = {}, F = {:.12e}, {} failed checks -> {}",
                scheme_name(scheme),
                m.completed_steps,
                m.final_time,
                outcome.trajectory.records.last().map_or(f64::NAN, |r| r.energy.total()),
                failed,
                outcome.dir.display()
            );
        }
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheme: Scheme,
    pub tau: f64,
    pub steps: usize,
    pub final_time: f64,
    pub l1_error: Option<f64>,
    pub w2_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub scheme: Scheme,
    pub l1_order: Option<f64>,
    pub w2_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub orders: Vec<OrderRow>,
}

impl CompareReport {
    pub fn row(&self, scheme: Scheme, tau: f64) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.tau == tau)
    }

    pub fn order(&self, scheme: Scheme) -> Option<&OrderRow> {
        self.orders.iter().find(|o| o.scheme == scheme)
    }
}

/// `compare`: every (scheme, τ) pair of the sweep, scored against the
/// reference solution at the final time.
pub fn cmd_compare(cfg: &RunConfig, opts: &RunOptions) -> Result<CompareReport, CliError> {
    let name = cfg
        .problem
        .reference
        .ok_or_else(|| CliError::Validation("compare needs problem.reference".into()))?;
    catalog::reference_at(&cfg.problem, name, cfg.discretization.t_end)?;
    let problem = Problem::build(cfg)?;
    let root = out_dir(cfg, opts);
    let taus = cfg.sweep();
    let grid: Vec<(Scheme, usize, f64)> = schemes(cfg.discretization.scheme)
        .into_iter()
        .flat_map(|s| taus.iter().enumerate().map(move |(j, &t)| (s, j, t)))
        .collect();
    for &(scheme, _, tau) in &grid {
        if scheme == Scheme::Bdf2 {
            stepper_config(cfg, &problem.spec, tau, opts.override_tau_guard)?
                .check_tau_guard()
                .map_err(invalid)?;
        }
    }

    let results: Vec<Result<CompareRow, CliError>> = grid
        .par_iter()
        .map(|&(scheme, j, tau)| {
            let dir = root.join(format!("{}_tau{}", scheme_name(scheme), j));
            let outcome = execute(cfg, &problem, scheme, tau, &dir, opts)?;
            let traj = &outcome.trajectory;
            let exact: Reference = catalog::reference_at(&cfg.problem, name, traj.final_time())?;
            Ok(CompareRow {
                scheme,
                tau,
                steps: traj.records.len(),
                final_time: traj.final_time(),
                l1_error: exact.l1_error(traj.last()),
                w2_error: exact.w2_error(traj.last()),
            })
        })
        .collect();
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let orders = schemes(cfg.discretization.scheme)
        .into_iter()
        .map(|scheme| {
            let mine: Vec<&CompareRow> = rows.iter().filter(|r| r.scheme == scheme).collect();
            let ts: Vec<f64> = mine.iter().map(|r| r.tau).collect();
            let w2: Vec<f64> = mine.iter().map(|r| r.w2_error).collect();
            let l1: Option<Vec<f64>> = mine.iter().map(|r| r.l1_error).collect();
            OrderRow {
                scheme,
                l1_order: l1.and_then(|e| empirical_order(&ts, &e).ok()),
                w2_order: empirical_order(&ts, &w2).ok(),
            }
        })
        .collect();
    let report = CompareReport { rows, orders };

    std::fs::create_dir_all(&root)?;
    let mut w = csv::Writer::from_path(root.join("compare.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    for row in &report.rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    output::write_json(&root.join("compare.json"), &report)?;
    if !opts.quiet {
        print!("{}", format_table(&report));
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>, width: usize) -> String {
    match v {
        Some(v) => format!("{v:>width$.4e}"),
        None => format!("{:>width$}", "-"),
    }
}

pub fn format_table(report: &CompareReport) -> String {
    let mut s = format!(
        "{:<6} {:>12} {:>7} {:>12} {:>12}\n",
        "scheme", "tau", "steps", "L1 error", "W2 error"
    );
    for r in &report.rows {
        s += &format!(
            "{:<6} {:>12.4e} {:>7} {} {:>12.4e}\n",
            scheme_name(r.scheme),
            r.tau,
            r.steps,
            fmt_opt(r.l1_error, 12),
            r.w2_error
        );
    }
    for o in &report.orders {
        s += &format!(
            "order {:<5} L1 {}  W2 {}\n",
            scheme_name(o.scheme),
            fmt_opt(o.l1_order, 8).trim_start(),
            fmt_opt(o.w2_order, 8).trim_start()
        );
    }
    s
}

fn describe(entry: &DiagnosticEntry) -> String {
    let at = match entry.location {
        Location::Step(k) => format!("step {k}"),
        Location::Time(t) => format!("t = {t}"),
        Location::Run => "run".to_string(),
    };
    format!(
        "{} ({}) at {}: margin {:e} below tolerance {:e}",
        entry.name, entry.formula, at, entry.margin, -entry.tolerance
    )
}

/// Directories under `path` that hold a run manifest.
fn run_dirs(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.join(MANIFEST).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dirs: Vec<PathBuf> = ["jko", "bdf2"]
        .iter()
        .map(|s| path.join(s))
        .filter(|d| d.join(MANIFEST).is_file())
        .collect();
    if dirs.is_empty() {
        return Err(CliError::Validation(format!("no {MANIFEST} under {}", path.display())));
    }
    Ok(dirs)
}

/// `diagnose`: rebuilds each recorded trajectory, replays every check and
/// writes `diagnostics.json` next to the artifacts.
pub fn cmd_diagnose(path: &Path, quiet: bool) -> Result<Vec<DiagnosticsReport>, CliError> {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for dir in run_dirs(path)? {
        let manifest = output::read_manifest(&dir)?;
        let cfg = &manifest.config;
        cfg.validate()?;
        let domain = catalog::domain(&cfg.problem.domain)?;
        let traj = output::read_trajectory(&dir, &manifest, domain)?;
        let spec = catalog::energy_spec(&cfg.problem, &traj.states[0])?;
        let report = diagnostics::diagnose(&traj, &spec, &diagnose_options(cfg, &traj)).map_err(invalid)?;
        output::write_json(&dir.join("diagnostics.json"), &report)?;
        if !quiet {
            let asserted = report.entries.iter().filter(|e| e.asserted).count();
            println!(
                "{}: {} checks, {} failed",
                dir.display(),
                asserted,
                report.failures().count()
            );
        }
        failures.extend(report.failures().map(|e| format!("{}: {}", dir.display(), describe(e))));
        reports.push(report);
    }
    if let Some(first) = failures.first() {
        let more = failures.len() - 1;
        let tail = if more > 0 {
            format!(" (and {more} more)")
        } else {
            String::new()
        };
        return Err(CliError::Assertion(format!("{first}{tail}")));
    }
    Ok(reports)
}
