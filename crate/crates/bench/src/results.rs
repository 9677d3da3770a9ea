//! Result rows, CSV/JSON output and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use msrm::solver::{LevelRecord, SolutionReport};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Column names of the result CSV, in order.
pub const HEADER: [&str; 16] = [
    "experiment",
    "method",
    "seed",
    "budget",
    "eps_stat",
    "eps_rel",
    "wall_seconds",
    "m_star",
    "lambda_star",
    "total_risk",
    "iterations",
    "j_loc",
    "evals_value_grad",
    "evals_hessian",
    "refinements",
    "converged",
];

/// One line of a result table.
///
/// `budget` is `N · S` for the RQMC methods (points per shift times shifts),
/// `N` for SAA and the total number of draws for SA. `m_star` holds the
/// allocation as `;`-separated shortest round-trip decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Experiment name.
    pub experiment: String,
    /// Method label.
    pub method: String,
    /// Seed of the run.
    pub seed: u64,
    /// Sample budget.
    pub budget: u64,
    /// Statistical error `ε_stat` (max-diagonal, 95 %).
    pub eps_stat: f64,
    /// Relative error `ε_stat / ‖z_ref‖_∞`.
    pub eps_rel: f64,
    /// Wall-clock seconds.
    pub wall_seconds: f64,
    /// Optimal allocation.
    pub m_star: String,
    /// Optimal multiplier.
    pub lambda_star: f64,
    /// Total risk `Σ m*`.
    pub total_risk: f64,
    /// Optimiser iterations `J`.
    pub iterations: u64,
    /// Detected local-regime level (multilevel only).
    pub j_loc: Option<u64>,
    /// Value/gradient integrand (or sample) evaluations.
    pub evals_value_grad: u64,
    /// Hessian integrand (or sample) evaluations.
    pub evals_hessian: u64,
    /// Sample-size refinements performed.
    pub refinements: u64,
    /// Convergence flag of the optimiser.
    pub converged: bool,
}

impl ResultRow {
    /// Parses the `m_star` column.
    pub fn allocation(&self) -> Result<Vec<f64>> {
        self.m_star
            .split(';')
            .map(|s| {
                s.parse::<f64>().map_err(|e| BenchError::SchemaMismatch {
                    path: PathBuf::new(),
                    message: format!("bad m_star entry {s:?}: {e}"),
                })
            })
            .collect()
    }
}

/// Formats an allocation for the `m_star` column.
pub fn format_allocation(m: &[f64]) -> String {
    m.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";")
}

/// A row with the full solver diagnostics (JSON sidecar entry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Table row.
    pub row: ResultRow,
    /// Solver report.
    pub report: SolutionReport,
    /// Per-level diagnostics (multilevel runs).
    pub levels: Vec<LevelRecord>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(format!("creating {}", dir.display()), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| BenchError::io(format!("creating temporary file in {}", dir.display()), e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .map_err(|e| BenchError::io(format!("writing {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| BenchError::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(())
}

/// Encodes rows as CSV (header included).
pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| BenchError::io("flushing CSV buffer", e.into_error()))
}

/// Reads a result CSV, checking that its header matches [`HEADER`].
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(BenchError::SchemaMismatch {
            path: path.to_path_buf(),
            message: format!("expected columns {HEADER:?}, found {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: ResultRow = rec.map_err(|e| BenchError::SchemaMismatch {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `<dir>/<stem>.csv` and the `<dir>/<stem>.json` sidecar.
pub fn write_results(dir: &Path, stem: &str, records: &[RunRecord]) -> Result<(PathBuf, PathBuf)> {
    let rows: Vec<ResultRow> = records.iter().map(|r| r.row.clone()).collect();
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_atomic(&csv_path, &rows_to_csv(&rows)?)?;
    write_atomic(&json_path, &serde_json::to_vec_pretty(records)?)?;
    Ok((csv_path, json_path))
}
