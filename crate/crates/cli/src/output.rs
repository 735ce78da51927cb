//! Run artifacts: states series, scalars series and the JSON manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wgflow::diagnostics::DiagnosticsReport;
use wgflow::stepper::{Initializer, Scheme, StepRecord, Trajectory};
use wgflow::{DomainSpec, EnergyParts, EnergySpec, QuantileMeasure};

use crate::config::{OutputFormat, RunConfig};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// One sample `X_i` of `ρ^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub k: i64,
    pub t: f64,
    pub i: usize,
    pub s: f64,
    pub x: f64,
}

/// Per-state scalars; step quantities are empty for the initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarRow {
    pub k: i64,
    pub t: f64,
    pub energy: f64,
    pub internal: f64,
    pub external: f64,
    pub interaction: f64,
    pub second_moment: f64,
    pub w2_increment: Option<f64>,
    pub dissipation_margin: Option<f64>,
    pub iterations: Option<usize>,
    pub grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    /// `None` when no finite threshold applies.
    pub tau_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub scheme: Scheme,
    pub initializer: Initializer,
    pub tau: f64,
    pub grad_tol: f64,
    pub completed_steps: usize,
    pub final_time: f64,
    pub constants: Constants,
    pub states_file: String,
    pub scalars_file: String,
    pub error: Option<String>,
    pub config: RunConfig,
    pub diagnostics: Option<DiagnosticsReport>,
}

pub fn state_rows(traj: &Trajectory) -> Vec<StateRow> {
    let first = traj.last_step() + 1 - traj.states.len() as i64;
    let mut rows = Vec::new();
    for (j, mu) in traj.states.iter().enumerate() {
        let k = first + j as i64;
        let t = traj.time(k);
        rows.extend(mu.positions().iter().enumerate().map(|(i, &x)| StateRow {
            k,
            t,
            i,
            s: mu.level(i),
            x,
        }));
    }
    rows
}

pub fn scalar_rows(traj: &Trajectory, spec: &EnergySpec) -> Result<Vec<ScalarRow>, CliError> {
    let first = traj.last_step() + 1 - traj.states.len() as i64;
    let mut rows = Vec::with_capacity(traj.states.len());
    for (j, mu) in traj.states.iter().enumerate() {
        let k = first + j as i64;
        let record = usize::try_from(k)
            .ok()
            .filter(|k| *k >= 1)
            .map(|k| &traj.records[k - 1]);
        let parts = match record {
            Some(r) => r.energy,
            None => wgflow::energy::parts(mu, spec).map_err(|e| CliError::Solver(e.to_string()))?,
        };
        rows.push(ScalarRow {
            k,
            t: traj.time(k),
            energy: parts.total(),
            internal: parts.internal,
            external: parts.external,
            interaction: parts.interaction,
            second_moment: mu.second_moment(),
            w2_increment: record.map(|r| r.w2_increment),
            dissipation_margin: record.map(|r| r.dissipation_margin),
            iterations: record.map(|r| r.iterations),
            grad_norm: record.map(|r| r.grad_norm),
        });
    }
    Ok(rows)
}

fn file_name(stem: &str, format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => format!("{stem}.csv"),
        OutputFormat::Json => format!("{stem}.json"),
    }
}

fn write_series<T: Serialize>(path: &Path, rows: &[T], format: OutputFormat) -> Result<(), CliError> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
            for row in rows {
                w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        OutputFormat::Json => write_json(path, &rows)?,
    }
    Ok(())
}

fn read_series<T: for<'de> Deserialize<'de>>(path: &Path, format: OutputFormat) -> Result<Vec<T>, CliError> {
    let bad = |e: String| CliError::Validation(format!("{}: {e}", path.display()));
    match format {
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
            r.deserialize()
                .collect::<Result<_, _>>()
                .map_err(|e| bad(e.to_string()))
        }
        OutputFormat::Json => {
            let f = File::open(path).map_err(|e| bad(e.to_string()))?;
            serde_json::from_reader(BufReader::new(f)).map_err(|e| bad(e.to_string()))
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes the states and scalars series of `traj` into `dir`; returns the
/// two file names.
pub fn write_series_files(
    dir: &Path,
    traj: &Trajectory,
    spec: &EnergySpec,
    format: OutputFormat,
) -> Result<(String, String), CliError> {
    std::fs::create_dir_all(dir)?;
    let states = file_name("states", format);
    let scalars = file_name("scalars", format);
    write_series(&dir.join(&states), &state_rows(traj), format)?;
    write_series(&dir.join(&scalars), &scalar_rows(traj, spec)?, format)?;
    Ok((states, scalars))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST);
    let f = File::open(&path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn format_of(name: &str) -> OutputFormat {
    if name.ends_with(".json") {
        OutputFormat::Json
    } else {
        OutputFormat::Csv
    }
}

/// Rebuilds the trajectory recorded in `dir`. States are validated as
/// quantile measures on `domain`.
pub fn read_trajectory(dir: &Path, manifest: &Manifest, domain: DomainSpec) -> Result<Trajectory, CliError> {
    let states_path: PathBuf = dir.join(&manifest.states_file);
    let rows: Vec<StateRow> = read_series(&states_path, format_of(&manifest.states_file))?;
    let first = match manifest.scheme {
        Scheme::Jko => 0,
        Scheme::Bdf2 => -1,
    };
    let mut states: Vec<Vec<f64>> = Vec::new();
    for (line, row) in rows.iter().enumerate() {
        let j = usize::try_from(row.k - first)
            .map_err(|_| CliError::Validation(format!("state row {line}: step index {} out of range", row.k)))?;
        if j == states.len() {
            states.push(Vec::new());
        }
        if j + 1 != states.len() || row.i != states[j].len() {
            return Err(CliError::Validation(format!(
                "state row {line}: rows must be ordered by (k, i), got (k = {}, i = {})",
                row.k, row.i
            )));
        }
        states[j].push(row.x);
    }
    let states = states
        .into_iter()
        .enumerate()
        .map(|(j, x)| {
            QuantileMeasure::from_quantiles(x, domain).map_err(|e| {
                CliError::Validation(format!(
                    "{}: state k = {}: {e}",
                    states_path.display(),
                    j as i64 + first
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let scalars: Vec<ScalarRow> = read_series(&dir.join(&manifest.scalars_file), format_of(&manifest.scalars_file))?;
    let records = scalars
        .iter()
        .filter(|r| r.k >= 1)
        .map(|r| {
            let missing = || CliError::Validation(format!("scalars row k = {} lacks step quantities", r.k));
            Ok(StepRecord {
                k: r.k as usize,
                time: r.t,
                w2_increment: r.w2_increment.ok_or_else(missing)?,
                energy: EnergyParts {
                    internal: r.internal,
                    external: r.external,
                    interaction: r.interaction,
                },
                second_moment: r.second_moment,
                iterations: r.iterations.ok_or_else(missing)?,
                grad_norm: r.grad_norm.ok_or_else(missing)?,
                dissipation_margin: r.dissipation_margin.ok_or_else(missing)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let traj = Trajectory {
        scheme: manifest.scheme,
        tau: manifest.tau,
        grad_tol: manifest.grad_tol,
        initializer: manifest.initializer,
        states,
        records,
    };
    if traj.states.is_empty() || traj.records.len() as i64 != traj.last_step() {
        return Err(CliError::Validation(format!(
            "{} states and {} step records do not form a trajectory",
            traj.states.len(),
            traj.records.len()
        )));
    }
    Ok(traj)
}
