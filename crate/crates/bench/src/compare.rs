//! Merging result tables into error-versus-work summaries.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::results::{read_rows, ResultRow};

/// Summary of the runs sharing an `(experiment, method, budget)` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Experiment name.
    pub experiment: String,
    /// Method label.
    pub method: String,
    /// Sample budget.
    pub budget: u64,
    /// Number of runs (seeds).
    pub runs: u64,
    /// Mean relative error.
    pub eps_rel_mean: f64,
    /// Sample standard deviation of the relative error (0 for one run).
    pub eps_rel_std: f64,
    /// Mean wall-clock seconds.
    pub wall_mean: f64,
    /// Sample standard deviation of the wall-clock seconds.
    pub wall_std: f64,
    /// Mean value/gradient evaluation count.
    pub evals_mean: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Groups rows by `(experiment, method, budget)` in sorted key order.
pub fn summarise(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.experiment.clone(), r.method.clone(), r.budget))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((experiment, method, budget), g)| {
            let eps: Vec<f64> = g.iter().map(|r| r.eps_rel).collect();
            let wall: Vec<f64> = g.iter().map(|r| r.wall_seconds).collect();
            let evals: Vec<f64> = g.iter().map(|r| r.evals_value_grad as f64).collect();
            let (eps_rel_mean, eps_rel_std) = mean_std(&eps);
            let (wall_mean, wall_std) = mean_std(&wall);
            SummaryRow {
                experiment,
                method,
                budget,
                runs: g.len() as u64,
                eps_rel_mean,
                eps_rel_std,
                wall_mean,
                wall_std,
                evals_mean: mean_std(&evals).0,
            }
        })
        .collect()
}

/// Least-squares slope and intercept of `ln ε_rel` on `ln budget`.
///
/// Returns `None` with fewer than two distinct budgets.
pub fn rate_fit(rows: &[SummaryRow]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.budget > 0 && r.eps_rel_mean > 0.0 && r.eps_rel_mean.is_finite())
        .map(|r| ((r.budget as f64).ln(), r.eps_rel_mean.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Budget at which the fitted rate line of each `(experiment, method)`
/// reaches `target` relative error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    /// Experiment name.
    pub experiment: String,
    /// Method label.
    pub method: String,
    /// Fitted slope of `ln ε_rel` against `ln budget`.
    pub slope: f64,
    /// Budget predicted to reach the target.
    pub budget_at_target: f64,
}

/// Predicted budgets at `target` for every `(experiment, method)` with at
/// least two budgets.
pub fn budgets_at_target(summary: &[SummaryRow], target: f64) -> Vec<TargetRow> {
    let mut groups: BTreeMap<(String, String), Vec<SummaryRow>> = BTreeMap::new();
    for r in summary {
        groups
            .entry((r.experiment.clone(), r.method.clone()))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_iter()
        .filter_map(|((experiment, method), g)| {
            let (slope, icpt) = rate_fit(&g)?;
            if slope >= 0.0 {
                return None;
            }
            Some(TargetRow {
                experiment,
                method,
                slope,
                budget_at_target: ((target.ln() - icpt) / slope).exp(),
            })
        })
        .collect()
}

/// Reads and merges result files.
pub fn load_all(paths: &[PathBuf]) -> Result<Vec<ResultRow>> {
    if paths.is_empty() {
        return Err(BenchError::SchemaMismatch {
            path: PathBuf::new(),
            message: "no result files given".into(),
        });
    }
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_rows(p)?);
    }
    Ok(rows)
}

/// Encodes a summary as CSV.
pub fn summary_to_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "experiment",
            "method",
            "budget",
            "runs",
            "eps_rel_mean",
            "eps_rel_std",
            "wall_mean",
            "wall_std",
            "evals_mean",
        ])?;
    }
    w.into_inner()
        .map_err(|e| BenchError::io("flushing CSV buffer", e.into_error()))
}
