//! CSV, JSON and SVG report files.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which parses
//! back to the identical value.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::{svg, ExperimentReport};
use crate::admm::AdmmStatus;

pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const DISTANCES_CSV: &str = "distances.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const RUN_JSON: &str = "run.json";
pub const FAN_SVG: &str = "trajectories.svg";
pub const SNAPSHOTS_SVG: &str = "snapshots.svg";
pub const DISTANCES_SVG: &str = "distances.svg";

const TRAJECTORY_HEADER: [&str; 9] = ["vehicle", "iteration", "tau", "p_x", "p_y", "theta", "v", "delta", "a"];
const DISTANCE_HEADER: [&str; 3] = ["tau", "pair", "distance"];
const SUMMARY_HEADER: [&str; 9] =
    ["backend", "scenario", "trials", "converged", "iterations", "median_iterations", "y_step_ms", "z_step_ms", "total_s"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// One row of the trajectory file. The last step of each trajectory has no
/// input and carries NaN there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub vehicle: usize,
    pub iteration: usize,
    pub tau: usize,
    pub state: [f64; 4],
    pub input: [f64; 2],
}

impl TrajectoryRow {
    /// Equality on bit patterns, so NaN inputs compare equal.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let bits = |r: &Self| -> Vec<u64> { r.state.iter().chain(&r.input).map(|v| v.to_bits()).collect() };
        (self.vehicle, self.iteration, self.tau) == (other.vehicle, other.iteration, other.tau) && bits(self) == bits(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRow {
    pub tau: usize,
    pub pair: (usize, usize),
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub backend: String,
    pub scenario: String,
    pub trials: usize,
    pub converged: usize,
    pub iterations: f64,
    pub median_iterations: f64,
    pub y_step_ms: f64,
    pub z_step_ms: f64,
    pub total_s: f64,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_rows(report: &ExperimentReport) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (k, iterate) in report.iterates.iter().enumerate() {
        for (i, traj) in iterate.iter().enumerate() {
            for (tau, x) in traj.states.iter().enumerate() {
                let input = traj.inputs.get(tau).map_or([f64::NAN; 2], |u| [u[0], u[1]]);
                rows.push(TrajectoryRow { vehicle: i, iteration: k, tau, state: [x[0], x[1], x[2], x[3]], input });
            }
        }
    }
    rows
}

pub fn distance_rows(report: &ExperimentReport) -> Vec<DistanceRow> {
    let steps = report.distances.first().map_or(0, |s| s.distances.len());
    let mut rows = Vec::new();
    for tau in 1..=steps {
        for s in &report.distances {
            rows.push(DistanceRow { tau, pair: s.pair, distance: s.distances[tau - 1] });
        }
    }
    rows
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, OutputError> {
    csv::Writer::from_path(path).map_err(|source| OutputError::Csv { path: path.to_owned(), source })
}

fn write_records<I, R>(path: &Path, header: &[&str], records: I) -> Result<(), OutputError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let wrap = |source| OutputError::Csv { path: path.to_owned(), source };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for r in records {
        w.write_record(r.into_iter().collect::<Vec<_>>()).map_err(wrap)?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_owned(), source })
}

pub fn write_trajectories(report: &ExperimentReport, path: &Path) -> Result<(), OutputError> {
    let rows = trajectory_rows(report);
    write_records(
        path,
        &TRAJECTORY_HEADER,
        rows.iter().map(|r| {
            [r.vehicle.to_string(), r.iteration.to_string(), r.tau.to_string()]
                .into_iter()
                .chain(r.state.iter().chain(&r.input).map(|&v| fmt(v)))
        }),
    )
}

pub fn write_distances(report: &ExperimentReport, path: &Path) -> Result<(), OutputError> {
    write_records(
        path,
        &DISTANCE_HEADER,
        distance_rows(report)
            .into_iter()
            .map(|r| [r.tau.to_string(), format!("{}-{}", r.pair.0, r.pair.1), fmt(r.distance)]),
    )
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<(), OutputError> {
    write_records(
        path,
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            [
                r.backend.clone(),
                r.scenario.clone(),
                r.trials.to_string(),
                r.converged.to_string(),
                r.iterations.to_string(),
                r.median_iterations.to_string(),
                format!("{:.3}", r.y_step_ms),
                format!("{:.3}", r.z_step_ms),
                format!("{:.3}", r.total_s),
            ]
        }),
    )
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, OutputError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|source| OutputError::Csv { path: path.to_owned(), source })?;
    let found = reader.headers().map_err(|source| OutputError::Csv { path: path.to_owned(), source })?;
    if found.iter().ne(header.iter().copied()) {
        return Err(OutputError::Format { path: path.to_owned(), message: format!("unexpected header {found:?}") });
    }
    reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| OutputError::Csv { path: path.to_owned(), source })
}

fn field<T: std::str::FromStr>(path: &Path, record: &csv::StringRecord, k: usize) -> Result<T, OutputError> {
    record.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| OutputError::Format {
        path: path.to_owned(),
        message: format!("bad field {k} in {record:?}"),
    })
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRow>, OutputError> {
    read_rows(path, &TRAJECTORY_HEADER)?
        .iter()
        .map(|r| {
            Ok(TrajectoryRow {
                vehicle: field(path, r, 0)?,
                iteration: field(path, r, 1)?,
                tau: field(path, r, 2)?,
                state: [field(path, r, 3)?, field(path, r, 4)?, field(path, r, 5)?, field(path, r, 6)?],
                input: [field(path, r, 7)?, field(path, r, 8)?],
            })
        })
        .collect()
}

pub fn read_distances(path: &Path) -> Result<Vec<DistanceRow>, OutputError> {
    read_rows(path, &DISTANCE_HEADER)?
        .iter()
        .map(|r| {
            let label: String = field(path, r, 1)?;
            let pair = label
                .split_once('-')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| OutputError::Format { path: path.to_owned(), message: format!("bad pair `{label}`") })?;
            Ok(DistanceRow { tau: field(path, r, 0)?, pair, distance: field(path, r, 2)? })
        })
        .collect()
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    scenario: &'a str,
    backend: &'a str,
    seed: u64,
    converged: bool,
    iterations: usize,
    final_iteration: usize,
    min_distance: Option<f64>,
    residuals: &'a [f64],
    y_step_ms: Vec<f64>,
    z_step_ms: Vec<f64>,
    total_s: f64,
}

fn write_text(path: &Path, text: &str) -> Result<(), OutputError> {
    std::fs::write(path, text).map_err(|source| OutputError::Io { path: path.to_owned(), source })
}

/// Writes every report file into `dir` and returns their paths. Wall-clock
/// figures go to the JSON file only, so the CSVs depend on inputs alone.
pub fn emit_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.to_owned(), source })?;
    let path = |name: &str| dir.join(name);
    write_trajectories(report, &path(TRAJECTORIES_CSV))?;
    write_distances(report, &path(DISTANCES_CSV))?;
    let meta = RunMetadata {
        scenario: &report.scenario,
        backend: report.backend.name(),
        seed: report.seed,
        converged: report.status == AdmmStatus::Converged,
        iterations: report.iterations,
        final_iteration: report.final_iteration,
        min_distance: report.min_distance(),
        residuals: &report.residuals,
        y_step_ms: report.timings.iter().map(|t| t.y_ms).collect(),
        z_step_ms: report.timings.iter().map(|t| t.z_ms).collect(),
        total_s: report.total_seconds,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_text(&path(RUN_JSON), &json)?;
    write_text(&path(FAN_SVG), &svg::trajectory_fan(report))?;
    write_text(&path(SNAPSHOTS_SVG), &svg::snapshots(report))?;
    write_text(&path(DISTANCES_SVG), &svg::distance_plot(report))?;
    Ok([TRAJECTORIES_CSV, DISTANCES_CSV, RUN_JSON, FAN_SVG, SNAPSHOTS_SVG, DISTANCES_SVG].map(path).to_vec())
}

/// Averages over trials of one backend on one scenario.
pub fn summarize(reports: &[ExperimentReport]) -> Option<SummaryRow> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let mut iterations: Vec<f64> = reports.iter().map(|r| r.iterations as f64).collect();
    iterations.sort_by(f64::total_cmp);
    let steps: usize = reports.iter().map(|r| r.timings.len()).sum::<usize>().max(1);
    let sum = |f: fn(&crate::admm::StepTiming) -> f64| {
        reports.iter().flat_map(|r| r.timings.iter().map(f)).sum::<f64>() / steps as f64
    };
    Some(SummaryRow {
        backend: first.backend.name().to_string(),
        scenario: first.scenario.clone(),
        trials: reports.len(),
        converged: reports.iter().filter(|r| r.converged()).count(),
        iterations: iterations.iter().sum::<f64>() / n,
        median_iterations: median(&iterations),
        y_step_ms: sum(|t| t.y_ms),
        z_step_ms: sum(|t| t.z_ms),
        total_s: reports.iter().map(|r| r.total_seconds).sum::<f64>() / n,
    })
}

/// Median of sorted values.
pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}
