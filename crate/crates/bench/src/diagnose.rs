//! Damping and transform diagnostics of a configuration.

use msrm::loss::Damping;
use msrm::solver::{solve, Mode};
use msrm::surrogate::SurrogateContext;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;

/// Diagnostics of one Fourier component at the reported allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    /// Component kind.
    pub kind: String,
    /// Coordinates of the block.
    pub indices: Vec<usize>,
    /// Damping parameters (`K`, or `lo` followed by `hi` for two-sided blocks).
    pub damping: Vec<f64>,
    /// Log-peak objective `υ` at the damping.
    pub peak: f64,
    /// Boundary-oscillation estimate.
    pub oscillations: f64,
}

/// Diagnostics of a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    /// Experiment name.
    pub experiment: String,
    /// Allocation at which the components are inspected.
    pub m: Vec<f64>,
    /// Multiplier at `m`.
    pub lambda: f64,
    /// Spectral condition number of the Lagrangian Hessian at `m`.
    pub hessian_condition: f64,
    /// Per-component diagnostics.
    pub components: Vec<ComponentReport>,
}

/// Solves the configuration with single-level Fourier–RQMC (no refinement)
/// and reports per-component damping, peaks and oscillation estimates at the
/// solution.
pub fn diagnose(cfg: &ExperimentConfig) -> Result<Diagnosis> {
    let r = cfg.resolve()?;
    let ctx = SurrogateContext::new(r.loss, r.factors, r.transform, r.damping)?;
    let mut solver = cfg.solver.clone();
    solver.max_refinements = 0;
    let (report, _) = solve(&ctx, &solver, &cfg.rqmc, Mode::SingleLevel)?;
    let damping = ctx.select_damping(&report.m_star, None)?;
    let components = ctx
        .components()
        .iter()
        .zip(&damping.entries)
        .enumerate()
        .map(|(c, (comp, d))| {
            Ok(ComponentReport {
                kind: format!("{:?}", comp.spec.kind),
                indices: comp.spec.indices.clone(),
                damping: match d {
                    Damping::OneSided(k) => k.clone(),
                    Damping::TwoSided { lo, hi } => lo.iter().chain(hi).copied().collect(),
                },
                peak: ctx.peak(c, &report.m_star, d)?,
                oscillations: ctx.oscillation_estimate(c, &report.m_star, d)?,
            })
        })
        .collect::<msrm::Result<Vec<_>>>()?;
    Ok(Diagnosis {
        experiment: cfg.name.clone(),
        m: report.m_star,
        lambda: report.lambda_star,
        hessian_condition: report.hessian_condition,
        components,
    })
}

impl std::fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "experiment        {}", self.experiment)?;
        writeln!(f, "allocation m      {:?}", self.m)?;
        writeln!(f, "multiplier        {:.6}", self.lambda)?;
        writeln!(f, "hessian condition {:.4e}", self.hessian_condition)?;
        writeln!(f, "{:<14} {:<12} {:>12} {:>12}  damping", "kind", "indices", "peak", "oscillations")?;
        for c in &self.components {
            writeln!(
                f,
                "{:<14} {:<12} {:>12.4} {:>12.4}  {:?}",
                c.kind,
                format!("{:?}", c.indices),
                c.peak,
                c.oscillations,
                c.damping
            )?;
        }
        Ok(())
    }
}
