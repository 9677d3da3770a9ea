//! Running configured experiments.

use std::path::PathBuf;

use msrm::baselines::{solve_sa, solve_saa};
use msrm::solver::{solve, Mode, SolutionReport};
use msrm::surrogate::SurrogateContext;

use crate::config::{ExperimentConfig, Method, Resolved};
use crate::error::{BenchError, Result};
use crate::results::{format_allocation, write_results, ResultRow, RunRecord};

/// Which dimension a `run` sweeps over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// One run per configured seed at the configured budget.
    Seeds,
    /// One run per configured budget, for every seed, without refinement.
    Budgets,
}

/// One cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    /// Seed.
    pub seed: u64,
    /// Budget override (points per shift, SAA sample size or SA iterations).
    pub budget: Option<usize>,
}

/// Cells of a sweep, in output order.
pub fn cells(cfg: &ExperimentConfig, sweep: Sweep) -> Result<Vec<Cell>> {
    let seeds = cfg.effective_seeds();
    match sweep {
        Sweep::Seeds => Ok(seeds.into_iter().map(|seed| Cell { seed, budget: None }).collect()),
        Sweep::Budgets => {
            if cfg.sweep.budgets.is_empty() {
                return Err(BenchError::Config {
                    path: PathBuf::from(&cfg.name),
                    message: "`--sweep budgets` needs a non-empty `sweep.budgets` list".into(),
                });
            }
            Ok(cfg
                .sweep
                .budgets
                .iter()
                .flat_map(|&b| seeds.iter().map(move |&seed| Cell { seed, budget: Some(b) }))
                .collect())
        }
    }
}

/// Runs one cell.
pub fn run_cell(cfg: &ExperimentConfig, resolved: &Resolved, cell: Cell) -> Result<RunRecord> {
    let mut solver = cfg.solver.clone();
    let (report, levels, budget) = match cfg.method {
        Method::RqmcSingle | Method::RqmcMulti => {
            let mut rq = cfg.rqmc.clone();
            rq.seed = cell.seed;
            if let Some(b) = cell.budget {
                rq.n = b;
                rq.n_min = rq.n_min.min(b);
                solver.max_refinements = 0;
            }
            let ctx = SurrogateContext::new(
                resolved.loss.clone(),
                resolved.factors.clone(),
                resolved.transform.clone(),
                resolved.damping.clone(),
            )?;
            let mode = if cfg.method == Method::RqmcSingle {
                Mode::SingleLevel
            } else {
                Mode::Multilevel
            };
            let (report, levels) = solve(&ctx, &solver, &rq, mode)?;
            let n1 = rq.n << report.refinements;
            (report, levels, (n1 * rq.shifts) as u64)
        }
        Method::Saa => {
            let mut saa = cfg.saa.clone();
            saa.seed = cell.seed;
            if let Some(b) = cell.budget {
                saa.n = b;
            }
            let report = solve_saa(&resolved.loss, &resolved.factors, &saa, &solver)?;
            (report, Vec::new(), saa.n as u64)
        }
        Method::Sa => {
            let mut sa = cfg.sa.clone();
            sa.seed = cell.seed;
            if let Some(b) = cell.budget {
                sa.iters = b;
            }
            let report = solve_sa(
                &resolved.loss,
                &resolved.factors,
                &sa,
                solver.init_m.as_deref(),
                solver.init_lambda,
            )?;
            (report, Vec::new(), (sa.iters * sa.replications) as u64)
        }
    };
    let row = make_row(cfg, cell.seed, budget, &report);
    Ok(RunRecord { row, report, levels })
}

fn make_row(cfg: &ExperimentConfig, seed: u64, budget: u64, r: &SolutionReport) -> ResultRow {
    let zref = match &cfg.reference {
        Some(z) => z.m.iter().chain(std::iter::once(&z.lambda)).fold(0.0f64, |a, v| a.max(v.abs())),
        None => r
            .m_star
            .iter()
            .chain(std::iter::once(&r.lambda_star))
            .fold(0.0f64, |a, v| a.max(v.abs())),
    };
    ResultRow {
        experiment: cfg.name.clone(),
        method: cfg.method.label().to_string(),
        seed,
        budget,
        eps_stat: r.eps_stat,
        eps_rel: if zref > 0.0 { r.eps_stat / zref } else { f64::INFINITY },
        wall_seconds: r.wall_seconds,
        m_star: format_allocation(&r.m_star),
        lambda_star: r.lambda_star,
        total_risk: r.total_risk,
        iterations: r.iterations as u64,
        j_loc: r.j_loc.map(|j| j as u64),
        evals_value_grad: r.work.value_grad,
        evals_hessian: r.work.hessian,
        refinements: r.refinements as u64,
        converged: r.converged,
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// All records in sweep order.
    pub records: Vec<RunRecord>,
    /// CSV path.
    pub csv: PathBuf,
    /// JSON sidecar path.
    pub json: PathBuf,
}

/// Runs every cell of a sweep and writes `<out>/<name>_<method>.{csv,json}`.
///
/// Files are written before convergence is checked; a run with any
/// non-converged cell returns [`BenchError::NonConvergence`] afterwards.
pub fn run(cfg: &ExperimentConfig, sweep: Sweep, out: Option<PathBuf>) -> Result<RunOutput> {
    let resolved = cfg.resolve()?;
    let records = cells(cfg, sweep)?
        .into_iter()
        .map(|c| run_cell(cfg, &resolved, c))
        .collect::<Result<Vec<_>>>()?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let stem = format!("{}_{}", cfg.name, cfg.method.label());
    let (csv, json) = write_results(&dir, &stem, &records)?;
    if let Some(bad) = records.iter().find(|r| !r.row.converged) {
        return Err(BenchError::NonConvergence {
            experiment: cfg.name.clone(),
            method: cfg.method.label().to_string(),
            detail: format!(
                "seed {} budget {} stopped after {} iterations; results written to {}",
                bad.row.seed,
                bad.row.budget,
                bad.row.iterations,
                csv.display()
            ),
        });
    }
    Ok(RunOutput { records, csv, json })
}
