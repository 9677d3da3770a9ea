//! Experiment configuration files.
//!
//! Configurations are TOML documents. Matrices are written as lists of rows:
//!
//! ```toml
//! name = "exp2d_neg"
//! method = "rqmc_single"
//! seeds = [2024]
//!
//! [risk_factors]
//! family = "gaussian"
//! mean = [0.0, 0.0]
//! covariance = [[1.0, -0.5], [-0.5, 1.0]]
//!
//! [loss]
//! family = "exponential"
//! alpha = 1.0
//! beta = 1.0
//!
//! [rqmc]
//! n = 2048
//! shifts = 32
//!
//! [solver]
//! eps_total = 1e-3
//!
//! [sweep]
//! budgets = [256, 512, 1024, 2048, 4096]
//! ```
//!
//! Sections `transform`, `damping`, `rqmc`, `solver`, `saa` and `sa` accept
//! every field of the corresponding core settings type and default missing
//! fields; `transform` and `damping` default to the family-specific values
//! (NIG factors use `c = 8` and a Tikhonov weight of `0.3`).

use std::path::{Path, PathBuf};

use msrm::baselines::{SaConfig, SaaConfig};
use msrm::damping::DampingConfig;
use msrm::loss::LossModel;
use msrm::risk_factors::{GaussianModel, NigModel, RiskFactorModel};
use msrm::rqmc::RqmcConfig;
use msrm::solver::SolverConfig;
use msrm::transform::TransformConfig;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Estimation method of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Single-level Fourier–RQMC.
    RqmcSingle,
    /// Multilevel Fourier–RQMC.
    RqmcMulti,
    /// Sample average approximation.
    Saa,
    /// Stochastic approximation.
    Sa,
}

impl Method {
    /// Label used in result files.
    pub fn label(self) -> &'static str {
        match self {
            Method::RqmcSingle => "rqmc_single",
            Method::RqmcMulti => "rqmc_multi",
            Method::Saa => "saa",
            Method::Sa => "sa",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Risk-factor block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum RiskFactorSpec {
    /// Multivariate Gaussian.
    Gaussian {
        /// Mean vector.
        mean: Vec<f64>,
        /// Covariance matrix (rows).
        covariance: Vec<Vec<f64>>,
    },
    /// Multivariate normal inverse Gaussian.
    Nig {
        /// Tail parameter `α`.
        alpha: f64,
        /// Skewness vector `β`.
        beta: Vec<f64>,
        /// Scale `δ`.
        delta: f64,
        /// Location `μ`.
        mu: Vec<f64>,
        /// Shape matrix `Γ` (rows).
        gamma: Vec<Vec<f64>>,
    },
}

impl RiskFactorSpec {
    /// Builds the model.
    pub fn build(&self) -> msrm::Result<RiskFactorModel> {
        Ok(match self {
            RiskFactorSpec::Gaussian { mean, covariance } => {
                RiskFactorModel::Gaussian(GaussianModel::from_rows(mean, covariance)?)
            }
            RiskFactorSpec::Nig {
                alpha,
                beta,
                delta,
                mu,
                gamma,
            } => RiskFactorModel::Nig(NigModel::from_rows(*alpha, beta, *delta, mu, gamma)?),
        })
    }

    /// Dimension implied by the mean/location vector.
    pub fn dim(&self) -> usize {
        match self {
            RiskFactorSpec::Gaussian { mean, .. } => mean.len(),
            RiskFactorSpec::Nig { mu, .. } => mu.len(),
        }
    }

    fn is_nig(&self) -> bool {
        matches!(self, RiskFactorSpec::Nig { .. })
    }
}

/// Loss block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum LossSpec {
    /// Exponential loss with coupling weight `alpha` and rate `beta`.
    Exponential {
        /// Coupling weight.
        alpha: f64,
        /// Exponential rate.
        beta: f64,
    },
    /// Quadratic pairwise-coupling loss with coupling weight `alpha`.
    Qpc {
        /// Coupling weight.
        alpha: f64,
    },
}

impl LossSpec {
    /// Builds the loss on `d` coordinates.
    pub fn build(&self, d: usize) -> msrm::Result<LossModel> {
        match self {
            LossSpec::Exponential { alpha, beta } => LossModel::exponential(d, *alpha, *beta),
            LossSpec::Qpc { alpha } => LossModel::qpc(d, *alpha),
        }
    }
}

/// Budget sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Budgets: points per shift (RQMC), sample size (SAA) or iterations (SA).
    pub budgets: Vec<usize>,
}

/// Output locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for result files.
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

/// Optional reference solution used for the relative error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    /// Reference allocation.
    pub m: Vec<f64>,
    /// Reference multiplier.
    pub lambda: f64,
}

/// A complete experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment name (used in result rows and file names).
    pub name: String,
    /// Estimation method.
    pub method: Method,
    /// Seeds; defaults to the seed of the relevant method section.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Risk factors.
    pub risk_factors: RiskFactorSpec,
    /// Loss.
    pub loss: LossSpec,
    /// Transform settings (family default when absent).
    #[serde(default)]
    pub transform: Option<TransformConfig>,
    /// Damping settings (family default when absent).
    #[serde(default)]
    pub damping: Option<DampingConfig>,
    /// RQMC design.
    #[serde(default)]
    pub rqmc: RqmcConfig,
    /// Solver settings.
    #[serde(default)]
    pub solver: SolverConfig,
    /// SAA settings.
    #[serde(default)]
    pub saa: SaaConfig,
    /// SA settings.
    #[serde(default)]
    pub sa: SaConfig,
    /// Budget sweep.
    #[serde(default)]
    pub sweep: SweepSpec,
    /// Output settings.
    #[serde(default)]
    pub output: OutputSpec,
    /// Reference solution for `ε_rel` (the run's own solution when absent).
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
}

/// Fully built models of a configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Risk factors.
    pub factors: RiskFactorModel,
    /// Loss.
    pub loss: LossModel,
    /// Transform settings.
    pub transform: TransformConfig,
    /// Damping settings.
    pub damping: DampingConfig,
}

impl ExperimentConfig {
    /// Parses a configuration from TOML text; `path` is used in diagnostics.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| BenchError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.check(path)?;
        Ok(cfg)
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text, path)
    }

    /// Serialises the configuration back to TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serialisable")
    }

    fn check(&self, path: &Path) -> Result<()> {
        let fail = |message: String| BenchError::Config {
            path: path.to_path_buf(),
            message,
        };
        if self.name.trim().is_empty() {
            return Err(fail("field `name` must not be empty".into()));
        }
        if self
            .name
            .chars()
            .any(|c| !(c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' || c == '+'))
        {
            return Err(fail(format!(
                "field `name` = {:?} may only contain ASCII letters, digits and `_-.+`",
                self.name
            )));
        }
        let d = self.risk_factors.dim();
        if let Some(r) = &self.reference {
            if r.m.len() != d {
                return Err(fail(format!(
                    "field `reference.m` has {} entries, risk factors have dimension {d}",
                    r.m.len()
                )));
            }
        }
        if self.sweep.budgets.contains(&0) {
            return Err(fail("field `sweep.budgets` must be positive".into()));
        }
        Ok(())
    }

    /// Builds the models, filling in family defaults.
    pub fn resolve(&self) -> Result<Resolved> {
        let factors = self.risk_factors.build()?;
        let loss = self.loss.build(factors.dim())?;
        let nig = self.risk_factors.is_nig();
        let transform = self.transform.clone().unwrap_or_else(|| {
            if nig {
                TransformConfig::nig()
            } else {
                TransformConfig::gaussian()
            }
        });
        let damping = self.damping.clone().unwrap_or_else(|| {
            if nig {
                DampingConfig::nig()
            } else {
                DampingConfig::gaussian()
            }
        });
        transform.validate()?;
        damping.validate()?;
        self.rqmc.validate()?;
        self.solver.validate()?;
        Ok(Resolved {
            factors,
            loss,
            transform,
            damping,
        })
    }

    /// Seeds to run: the configured list, or the default seed of the method.
    pub fn effective_seeds(&self) -> Vec<u64> {
        if !self.seeds.is_empty() {
            return self.seeds.clone();
        }
        vec![match self.method {
            Method::RqmcSingle | Method::RqmcMulti => self.rqmc.seed,
            Method::Saa => self.saa.seed,
            Method::Sa => self.sa.seed,
        }]
    }

    /// Configuration of one of the bundled experiments.
    pub fn preset(name: &str, method: Method) -> Result<Self> {
        let p = msrm::presets::by_name(name)?;
        let risk_factors = match &p.factors {
            RiskFactorModel::Gaussian(g) => RiskFactorSpec::Gaussian {
                mean: g.mu().iter().copied().collect(),
                covariance: rows(g.sigma()),
            },
            RiskFactorModel::Nig(n) => RiskFactorSpec::Nig {
                alpha: n.alpha(),
                beta: n.beta().iter().copied().collect(),
                delta: n.delta(),
                mu: n.mu().iter().copied().collect(),
                gamma: rows(n.gamma_matrix()),
            },
        };
        let loss = match p.loss.family() {
            msrm::loss::LossFamily::Exponential => LossSpec::Exponential {
                alpha: p.loss.alpha(),
                beta: p.loss.beta(),
            },
            msrm::loss::LossFamily::Qpc => LossSpec::Qpc { alpha: p.loss.alpha() },
        };
        Ok(Self {
            name: name.to_string(),
            method,
            seeds: Vec::new(),
            risk_factors,
            loss,
            transform: Some(p.transform),
            damping: Some(p.damping),
            rqmc: p.rqmc,
            solver: p.solver,
            saa: SaaConfig::default(),
            sa: SaConfig::default(),
            sweep: SweepSpec::default(),
            output: OutputSpec::default(),
            reference: None,
        })
    }
}

fn rows(m: &msrm::Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
