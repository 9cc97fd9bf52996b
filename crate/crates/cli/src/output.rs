//! File formats: trajectory CSVs, JSON reports and the run manifest.
//!
//! Every file is written to a sibling `*.tmp` path and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qsmooth::model::ExperimentSpec;
use qsmooth::smoother::SmootherPath;
use qsmooth::trajectory::{FilterPath, TrajectoryRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e15)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    file.write_all(bytes).and_then(|_| file.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Provenance of one output set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the configuration file bytes, lower-case hex.
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
    /// Output paths relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub tool_version: String,
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

pub fn tool_version() -> String {
    format!("qsmooth {}", env!("CARGO_PKG_VERSION"))
}

pub fn trajectory_file_name(traj_id: usize) -> String {
    format!("traj_{traj_id:04}.csv")
}

/// Column names for a trajectory CSV.
pub fn trajectory_header(exp: &ExperimentSpec, smoothed: bool) -> Vec<String> {
    let mut header = vec!["t".to_string(), "dy".to_string()];
    for o in &exp.observables {
        header.push(format!("filter.{}.re", o.name));
        header.push(format!("filter.{}.im", o.name));
    }
    if smoothed {
        for o in &exp.observables {
            header.push(format!("smooth.{}.plus", o.name));
            header.push(format!("smooth.{}.minus_im", o.name));
        }
    }
    header
}

/// One row per grid time; `dy` in row `k` is the increment over `[t_{k−1}, t_k]`
/// and is empty in row 0. Smoother fields are empty before `τ`.
pub fn trajectory_csv(
    exp: &ExperimentSpec,
    record: &TrajectoryRecord,
    filter: &FilterPath,
    smoother: Option<&SmootherPath>,
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(trajectory_header(exp, smoother.is_some())).map_err(csv_err)?;
    let n_obs = exp.observables.len();
    for k in 0..=record.len() {
        let mut row = Vec::with_capacity(2 + 4 * n_obs);
        row.push(format_float(k as f64 * record.dt));
        row.push(if k == 0 { String::new() } else { format_float(record.dy[k - 1]) });
        for e in &filter.estimates[k] {
            row.push(format_float(e.re));
            row.push(format_float(e.im));
        }
        if let Some(s) = smoother {
            match k.checked_sub(s.tau_step).and_then(|i| s.estimates.get(i)) {
                Some(est) => {
                    for q in est {
                        row.push(format_float(q.plus.re));
                        row.push(format_float(q.minus.im));
                    }
                }
                None => row.extend(std::iter::repeat_n(String::new(), 2 * n_obs)),
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Other(e.to_string()))
}

/// Reads the `t` and `dy` columns of a trajectory CSV back into a record on
/// the experiment grid.
pub fn read_record(path: &Path, exp: &ExperimentSpec, seed: u64) -> Result<TrajectoryRecord, CliError> {
    let invalid = |msg: String| CliError::Validation(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| invalid(e.to_string()))?;
    let headers = reader.headers().map_err(|e| invalid(e.to_string()))?.clone();
    let column =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| invalid(format!("missing column {name}")));
    let (t_col, dy_col) = (column("t")?, column("dy")?);
    let n = exp.n_steps();
    let mut dy = Vec::with_capacity(n);
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(|e| invalid(e.to_string()))?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let t: f64 = field(t_col).parse().map_err(|_| invalid(format!("row {}: bad t", k + 1)))?;
        let expected = k as f64 * exp.dt;
        if (t - expected).abs() > 1e-9 * expected.max(1.0) {
            return Err(invalid(format!("row {}: t = {t} is off the grid (expected {expected})", k + 1)));
        }
        if k == 0 {
            continue;
        }
        let v: f64 = field(dy_col).parse().map_err(|_| invalid(format!("row {}: bad dy", k + 1)))?;
        if !v.is_finite() {
            return Err(invalid(format!("row {}: non-finite dy", k + 1)));
        }
        dy.push(v);
    }
    if dy.len() != n {
        return Err(invalid(format!("{} increments, experiment needs {n}", dy.len())));
    }
    Ok(TrajectoryRecord { dt: exp.dt, dy, seed_used: seed })
}
