//! CSV and JSON artifacts.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use seesaw_core::dynamics::RiskTrajectory;
use seesaw_core::equivalence::EquivalenceReport;
use seesaw_core::montecarlo::McTrajectory;

pub const TRAJECTORY_HEADER: [&str; 7] = [
    "step",
    "samples",
    "lr",
    "batch",
    "excess_risk",
    "bias_risk",
    "variance_risk",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum CsvReadError {
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("no data rows")]
    Empty,
    #[error("{0}")]
    Malformed(String),
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| OutputError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Exact trajectory as CSV. Keeps every `stride`-th step plus phase ends and
/// the final step; `with_dominance` appends the NSGD `dominance_ratio`
/// column.
pub fn trajectory_csv(traj: &RiskTrajectory, with_dominance: bool, stride: u64) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = TRAJECTORY_HEADER.to_vec();
    if with_dominance {
        header.push("dominance_ratio");
    }
    w.write_record(&header)?;
    let keep: BTreeSet<u64> = traj
        .phases
        .iter()
        .map(|p| p.end_step)
        .chain(std::iter::once(traj.final_record().step))
        .collect();
    for r in &traj.records {
        if r.step % stride.max(1) != 0 && !keep.contains(&r.step) {
            continue;
        }
        let mut row = vec![
            r.step.to_string(),
            num(r.samples),
            num(r.lr),
            num(r.batch),
            num(r.excess_risk),
            num(r.bias_risk),
            num(r.variance_risk),
        ];
        if with_dominance {
            row.push(opt(r.dominance_ratio));
        }
        w.write_record(&row)?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

/// Monte Carlo trajectory: the exact schema with empty bias/variance cells
/// (sampled runs only observe the total) plus `stderr`.
pub fn mc_csv(mc: &McTrajectory) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = TRAJECTORY_HEADER.to_vec();
    header.push("stderr");
    w.write_record(&header)?;
    for r in &mc.records {
        w.write_record([
            r.step.to_string(),
            num(r.samples),
            num(r.lr),
            num(r.batch),
            num(r.mean_excess_risk),
            String::new(),
            String::new(),
            num(r.stderr_excess_risk),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

pub fn comparison_csv(report: &EquivalenceReport) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["phase", "samples", "risk_a", "risk_b", "ratio"])?;
    for p in &report.phases {
        w.write_record([
            p.phase.to_string(),
            num(p.samples),
            num(p.risk_a),
            num(p.risk_b),
            num(p.ratio),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, OutputError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// One row of a trajectory CSV as read back for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub samples: f64,
    pub excess_risk: f64,
    pub stderr: Option<f64>,
}

/// Read a trajectory CSV written by this tool (exact or Monte Carlo).
/// Only `step`, `samples` and `excess_risk` are required; `stderr` is used
/// when present.
pub fn read_trajectory_csv(text: &str) -> Result<Vec<TrajectoryPoint>, CsvReadError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CsvReadError::Malformed(e.to_string()))?
        .clone();
    let column = |name: &'static str| headers.iter().position(|h| h.trim() == name);
    let step_col = column("step").ok_or(CsvReadError::MissingColumn("step"))?;
    let samples_col = column("samples").ok_or(CsvReadError::MissingColumn("samples"))?;
    let risk_col = column("excess_risk").ok_or(CsvReadError::MissingColumn("excess_risk"))?;
    let stderr_col = column("stderr");

    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CsvReadError::Malformed(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| CsvReadError::Row { line, message };
        let field = |i: usize, name: &str| {
            record
                .get(i)
                .map(str::trim)
                .ok_or_else(|| row_err(format!("missing `{name}`")))
        };
        let float = |i: usize, name: &str| -> Result<f64, CsvReadError> {
            let raw = field(i, name)?;
            raw.parse::<f64>()
                .map_err(|_| row_err(format!("`{name}` = {raw:?} is not a number")))
        };
        let raw_step = field(step_col, "step")?;
        let step = raw_step
            .parse::<u64>()
            .map_err(|_| row_err(format!("`step` = {raw_step:?} is not a step count")))?;
        let stderr = match stderr_col {
            Some(i) if record.get(i).is_some_and(|s| !s.trim().is_empty()) => Some(float(i, "stderr")?),
            _ => None,
        };
        points.push(TrajectoryPoint {
            step,
            samples: float(samples_col, "samples")?,
            excess_risk: float(risk_col, "excess_risk")?,
            stderr,
        });
    }
    if points.is_empty() {
        return Err(CsvReadError::Empty);
    }
    Ok(points)
}
