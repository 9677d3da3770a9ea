//! Physical-space baselines: sample-average approximation (SAA) and
//! stochastic approximation (SA).
//!
//! **SAA** draws `X_1..X_N` once and runs the SQP solver on
//!
//! ```text
//! ĝ(m) = (1/N) Σ ℓ(X_i − m),   ∇ĝ(m) = −(1/N) Σ ∇ℓ(X_i − m),
//! ∇²ĝ(m) = (1/N) Σ ∇²ℓ(X_i − m),
//! ```
//!
//! (for QPC the almost-everywhere second derivative). Its error is the
//! sandwich estimate with the per-sample covariance of `(−λ∇ℓ_i, ℓ_i)`.
//!
//! **SA** is a projected Robbins–Monro iteration on the Lagrangian,
//!
//! ```text
//! m ← m − a_j (1 − λ ∇ℓ(X_j − m)),   λ ← Π_[λ_lo, λ_hi](λ + a_j ℓ(X_j − m)),
//! a_j = c / (j + t)^γ,
//! ```
//!
//! with Polyak–Ruppert averaging over the last half of the iterates. Its
//! error is estimated from independent replications.

use crate::loss::LossModel;
use crate::risk_factors::RiskFactorModel;
use crate::rqmc::{splitmix64, C_ALPHA};
use crate::solver::{
    solve_with_oracle, Evaluation, FinalEstimate, KktOracle, SolutionReport, SolverConfig, WorkCounters,
};
use crate::{Error, Matrix, Result, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// SAA settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaaConfig {
    /// Sample size `N ≥ 2`.
    pub n: usize,
    /// Sampling seed.
    pub seed: u64,
}

impl Default for SaaConfig {
    fn default() -> Self {
        Self {
            n: 1 << 16,
            seed: 7,
        }
    }
}

/// SA settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaConfig {
    /// Step constant `c`.
    pub c: f64,
    /// Step offset `t`.
    pub t: f64,
    /// Step exponent `γ ∈ (1/2, 1]`.
    pub gamma: f64,
    /// Iterations per replication.
    pub iters: usize,
    /// Independent replications.
    pub replications: usize,
    /// Multiplier projection interval.
    pub lambda_bounds: (f64, f64),
    /// Base seed.
    pub seed: u64,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            c: 2.0,
            t: 10.0,
            gamma: 0.7,
            iters: 100_000,
            replications: 20,
            lambda_bounds: (1e-6, 1e6),
            seed: 11,
        }
    }
}

impl SaConfig {
    /// Validates the settings.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.5 && self.gamma <= 1.0) || !(self.c > 0.0) || !(self.t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "SA needs gamma in (0.5, 1], c > 0, t > 0 (got {}, {}, {})",
                self.gamma, self.c, self.t
            )));
        }
        if self.iters < 2 || self.replications < 2 {
            return Err(Error::InvalidParameter("SA needs >= 2 iterations and replications".into()));
        }
        Ok(())
    }
}

/// Draws `n` samples row-major (`n × d`) from a seeded stream.
pub fn draw_samples(factors: &RiskFactorModel, n: usize, seed: u64) -> Vec<f64> {
    let d = factors.dim();
    let sampler = factors.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n * d];
    for row in out.chunks_exact_mut(d) {
        sampler.draw(&mut rng, row);
    }
    out
}

const CHUNK: usize = 1 << 14;

/// Fixed-sample SAA oracle.
#[derive(Debug)]
pub struct SaaOracle<'a> {
    loss: &'a LossModel,
    samples: Vec<f64>,
    n: usize,
    work: WorkCounters,
}

impl<'a> SaaOracle<'a> {
    /// Draws the fixed sample.
    pub fn new(loss: &'a LossModel, factors: &RiskFactorModel, cfg: &SaaConfig) -> Result<Self> {
        if cfg.n < 2 {
            return Err(Error::InvalidParameter("SAA needs at least two samples".into()));
        }
        if loss.dim() != factors.dim() {
            return Err(Error::DimensionMismatch {
                expected: factors.dim(),
                got: loss.dim(),
            });
        }
        Ok(Self {
            loss,
            samples: draw_samples(factors, cfg.n, cfg.seed),
            n: cfg.n,
            work: WorkCounters::default(),
        })
    }

    /// Sample mean of `(−∇ℓ, ℓ)` at `m`; optionally also `∇²ℓ` and the
    /// covariance of `(−λ∇ℓ_i, ℓ_i)`.
    fn moments(&self, m: &Vector, lambda: Option<f64>, want_hess: bool) -> (Vector, Option<Matrix>, Option<Matrix>) {
        let d = self.loss.dim();
        let parts: Vec<(Vector, Matrix, Matrix)> = self
            .samples
            .par_chunks(CHUNK * d)
            .map(|chunk| {
                let mut x = vec![0.0; d];
                let mut gx = vec![0.0; d];
                let mut hx = vec![0.0; d * d];
                let mut s1 = Vector::zeros(d + 1);
                let mut hs = Matrix::zeros(if want_hess { d } else { 0 }, if want_hess { d } else { 0 });
                let mut s2 = Matrix::zeros(if lambda.is_some() { d + 1 } else { 0 }, if lambda.is_some() { d + 1 } else { 0 });
                let mut z = Vector::zeros(d + 1);
                for row in chunk.chunks_exact(d) {
                    for j in 0..d {
                        x[j] = row[j] - m[j];
                    }
                    let l = self.loss.value(&x);
                    self.loss.grad_x(&x, &mut gx);
                    for j in 0..d {
                        s1[j] -= gx[j];
                    }
                    s1[d] += l;
                    if want_hess {
                        self.loss.hess_x(&x, &mut hx);
                        for a in 0..d {
                            for b in 0..d {
                                hs[(a, b)] += hx[a * d + b];
                            }
                        }
                    }
                    if let Some(lam) = lambda {
                        for j in 0..d {
                            z[j] = -lam * gx[j];
                        }
                        z[d] = l;
                        s2.ger(1.0, &z, &z, 1.0);
                    }
                }
                (s1, hs, s2)
            })
            .collect();
        let n = self.n as f64;
        let mut s1 = Vector::zeros(d + 1);
        let mut hs = Matrix::zeros(d, d);
        let mut s2 = Matrix::zeros(d + 1, d + 1);
        for (a, b, c) in parts {
            s1 += a;
            if want_hess {
                hs += b;
            }
            if lambda.is_some() {
                s2 += c;
            }
        }
        let mean = s1 / n;
        let hess = want_hess.then(|| hs / n);
        let cov = lambda.map(|lam| {
            let mut mu = mean.clone();
            for j in 0..d {
                mu[j] *= lam;
            }
            // unbiased covariance of the per-sample residuals, divided by N
            (s2 / n - &mu * mu.transpose()) * (n / (n - 1.0)) / n
        });
        (mean, hess, cov)
    }
}

impl KktOracle for SaaOracle<'_> {
    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn evaluate(&mut self, m: &Vector) -> Result<Evaluation> {
        let d = self.loss.dim();
        let (mean, _, _) = self.moments(m, None, false);
        self.work.value_grad += self.n as u64;
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("SAA estimate".into()));
        }
        Ok(Evaluation {
            g: mean[d],
            grad: Vector::from_iterator(d, (0..d).map(|i| mean[i])),
            noise: 0.0,
        })
    }

    fn commit(&mut self, _m: &Vector, _step_norm: f64) {}

    fn final_estimate(&mut self, m: &Vector, lambda: f64) -> Result<FinalEstimate> {
        let d = self.loss.dim();
        let (mean, hess, cov) = self.moments(m, Some(lambda), true);
        self.work.hessian += self.n as u64;
        Ok(FinalEstimate {
            g: mean[d],
            grad: Vector::from_iterator(d, (0..d).map(|i| mean[i])),
            hess: hess.expect("requested"),
            residual_cov: cov.expect("requested"),
        })
    }

    fn work(&self) -> WorkCounters {
        self.work
    }

    fn last_level_size(&self) -> usize {
        self.n
    }
}

/// SAA solve with the SQP core on a fixed sample.
pub fn solve_saa(
    loss: &LossModel,
    factors: &RiskFactorModel,
    cfg: &SaaConfig,
    solver: &SolverConfig,
) -> Result<SolutionReport> {
    let start = Instant::now();
    let mut oracle = SaaOracle::new(loss, factors, cfg)?;
    let m0 = match &solver.init_m {
        Some(v) => Vector::from_column_slice(v),
        None => factors.mean().add_scalar(1.0),
    };
    let mut report = solve_with_oracle(&mut oracle, solver, m0, solver.init_lambda)?;
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Plain Monte Carlo estimates of `g(m)` and `∇g(m)` at several allocations
/// with `n` samples shared across allocations, streamed in chunks.
///
/// Returns, per allocation, the `(∇g, g)` estimate and its standard error.
pub fn monte_carlo_estimates(
    loss: &LossModel,
    factors: &RiskFactorModel,
    ms: &[Vector],
    n: usize,
    seed: u64,
) -> Vec<(Vector, Vector)> {
    let d = loss.dim();
    let nchunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<(Vector, Vector)>> = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            let samples = draw_samples(factors, len, splitmix64(seed ^ splitmix64(c as u64)));
            let mut x = vec![0.0; d];
            let mut gx = vec![0.0; d];
            ms.iter()
                .map(|m| {
                    let mut s1 = Vector::zeros(d + 1);
                    let mut s2 = Vector::zeros(d + 1);
                    for row in samples.chunks_exact(d) {
                        for j in 0..d {
                            x[j] = row[j] - m[j];
                        }
                        let l = loss.value(&x);
                        loss.grad_x(&x, &mut gx);
                        for j in 0..d {
                            s1[j] -= gx[j];
                            s2[j] += gx[j] * gx[j];
                        }
                        s1[d] += l;
                        s2[d] += l * l;
                    }
                    (s1, s2)
                })
                .collect()
        })
        .collect();
    let nf = n as f64;
    (0..ms.len())
        .map(|i| {
            let mut s1 = Vector::zeros(d + 1);
            let mut s2 = Vector::zeros(d + 1);
            for p in &parts {
                s1 += &p[i].0;
                s2 += &p[i].1;
            }
            let mean = s1 / nf;
            let se = Vector::from_iterator(
                d + 1,
                (0..=d).map(|j| ((s2[j] / nf - mean[j] * mean[j]).max(0.0) / (nf - 1.0)).sqrt()),
            );
            (mean, se)
        })
        .collect()
}

/// One SA replication; returns the Polyak–Ruppert average of `(m, λ)`.
fn sa_replication(
    loss: &LossModel,
    factors: &RiskFactorModel,
    cfg: &SaConfig,
    m0: &Vector,
    lambda0: f64,
    seed: u64,
) -> Result<Vector> {
    let d = loss.dim();
    let sampler = factors.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m: Vec<f64> = m0.iter().copied().collect();
    let mut lambda = lambda0;
    let mut x = vec![0.0; d];
    let mut xs = vec![0.0; d];
    let mut gx = vec![0.0; d];
    let burn = cfg.iters / 2;
    let mut avg = vec![0.0; d + 1];
    let (lo, hi) = cfg.lambda_bounds;
    for j in 0..cfg.iters {
        sampler.draw(&mut rng, &mut xs);
        for k in 0..d {
            x[k] = xs[k] - m[k];
        }
        let l = loss.value(&x);
        loss.grad_x(&x, &mut gx);
        let a = cfg.c / (j as f64 + cfg.t).powf(cfg.gamma);
        for k in 0..d {
            m[k] -= a * (1.0 - lambda * gx[k]);
        }
        lambda = (lambda + a * l).clamp(lo, hi);
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > 1e6 {
            return Err(Error::DivergenceDetected(format!(
                "SA iterate norm {norm} at step {j}"
            )));
        }
        if j >= burn {
            for k in 0..d {
                avg[k] += m[k];
            }
            avg[d] += lambda;
        }
    }
    let cnt = (cfg.iters - burn) as f64;
    Ok(Vector::from_iterator(d + 1, avg.into_iter().map(|v| v / cnt)))
}

/// SA solve: independent replications, reported as their mean with a
/// replication-based error.
pub fn solve_sa(
    loss: &LossModel,
    factors: &RiskFactorModel,
    cfg: &SaConfig,
    init_m: Option<&[f64]>,
    init_lambda: f64,
) -> Result<SolutionReport> {
    cfg.validate()?;
    let start = Instant::now();
    let d = loss.dim();
    let m0 = match init_m {
        Some(v) => Vector::from_column_slice(v),
        None => factors.mean().add_scalar(1.0),
    };
    let reps: Vec<Vector> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| sa_replication(loss, factors, cfg, &m0, init_lambda, splitmix64(cfg.seed ^ (r as u64 + 1))))
        .collect::<Result<_>>()?;
    let mean = crate::rqmc::mean(&reps);
    let cov = crate::rqmc::covariance(&reps) / cfg.replications as f64;
    let md = (0..=d).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    let eps = C_ALPHA * md.sqrt();
    let m_star: Vec<f64> = (0..d).map(|i| mean[i]).collect();
    Ok(SolutionReport {
        total_risk: m_star.iter().sum(),
        ci_lower: m_star.iter().map(|v| v - eps).collect(),
        ci_upper: m_star.iter().map(|v| v + eps).collect(),
        m_star,
        lambda_star: mean[d],
        eps_stat: eps,
        variance_diag: (0..=d).map(|i| cov[(i, i)] * cfg.replications as f64).collect(),
        iterations: cfg.iters,
        j_loc: None,
        converged: true,
        kkt_residual: f64::NAN,
        hessian_condition: f64::NAN,
        refinements: 0,
        final_size: cfg.iters,
        work: WorkCounters {
            value_grad: (cfg.iters * cfg.replications) as u64,
            hessian: 0,
        },
        wall_seconds: start.elapsed().as_secs_f64(),
        history: Vec::new(),
    })
}
