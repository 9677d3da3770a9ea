//! Equality-constrained SQP for the allocation problem.
//!
//! The allocation minimises `Σ_k m_k` subject to `g(m) = 0`. With the
//! Lagrangian `L(m, λ) = 1ᵀm + λ g(m)`, each iteration solves the quadratic
//! subproblem
//!
//! ```text
//! [ B   ∇g ] [ d ]   [ −(1 + λ∇g) ]
//! [ ∇gᵀ  0 ] [ p ] = [     −g     ]
//! ```
//!
//! where `B` is a BFGS approximation of `λ∇²g`. The step is globalised by an
//! ℓ1 merit function `φ(m) = 1ᵀm + ρ|g(m)|` with Armijo backtracking, and the
//! multiplier is updated as `λ ← λ + αp`. The iteration stops once
//! `‖(αd, αp)‖ ≤ ε_opt`.
//!
//! The statistical error of the final iterate is the sandwich estimate
//! `V = J⁻¹ Cov(F̂) J⁻¹` with `F̂ = (1 + λ∇ĝ; ĝ)` and `J` the bordered
//! Hessian, reported as `ε_stat = C_α √(max_i V_ii)`. If `ε_stat` exceeds half
//! the total tolerance, the sample size is doubled and the solve is restarted
//! from the current iterate (at most `max_refinements` times).
//!
//! The optimiser is written against [`KktOracle`], which is implemented by
//! the single-level and multilevel Fourier–RQMC surrogates here and by the
//! sample-average baseline in [`crate::baselines`].

use crate::damping::DampingAssignment;
use crate::linalg::condition_number_sym;
use crate::rqmc::{assemble_solution_covariance, LevelDesign, LevelSchedule, RqmcConfig, RqmcDesign};
use crate::surrogate::{lagrangian_hessian, KktBlocks, SurrogateContext};
use crate::{Error, Matrix, Result, Vector};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Curvature pair used in the BFGS update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfgsRule {
    /// `y = λ_{j+1}∇g(m_{j+1}) − λ_j∇g(m_j)`.
    MultiplierWeighted,
    /// `y = λ_{j+1}(∇g(m_{j+1}) − ∇g(m_j))`, the Lagrangian-gradient difference.
    Lagrangian,
}

/// Estimator used by the Fourier–RQMC solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Frozen shifts, one estimate per iterate.
    SingleLevel,
    /// Telescoping differences across iterates with fresh shifts per level.
    Multilevel,
}

/// Optimiser settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Total error target `ε`.
    pub eps_total: f64,
    /// Optimisation tolerance on `‖Δz‖` (defaults to `ε/2`).
    pub eps_opt: Option<f64>,
    /// Iteration cap.
    pub max_iters: usize,
    /// Initial allocation (defaults to `E[X] + 1`).
    pub init_m: Option<Vec<f64>>,
    /// Initial multiplier.
    pub init_lambda: f64,
    /// Armijo constant.
    pub armijo: f64,
    /// Backtracking factor.
    pub backtrack: f64,
    /// Smallest line-search step.
    pub min_step: f64,
    /// Maximum number of sample-size doublings.
    pub max_refinements: usize,
    /// BFGS curvature pair.
    pub bfgs_rule: BfgsRule,
    /// Largest allocation step `‖d‖` per iteration; longer QP steps are
    /// scaled back (together with the multiplier step).
    pub max_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_total: 1e-3,
            eps_opt: None,
            max_iters: 50,
            init_m: None,
            init_lambda: 1.0,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1.0 / (1u64 << 20) as f64,
            max_refinements: 3,
            bfgs_rule: BfgsRule::MultiplierWeighted,
            max_step: 1.0,
        }
    }
}

impl SolverConfig {
    /// Effective optimisation tolerance.
    pub fn eps_opt(&self) -> f64 {
        self.eps_opt.unwrap_or(0.5 * self.eps_total)
    }

    /// Validates the settings.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_total > 0.0) || self.max_iters == 0 || !(self.init_lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "solver needs eps_total > 0, max_iters >= 1, init_lambda > 0 (got {}, {}, {})",
                self.eps_total, self.max_iters, self.init_lambda
            )));
        }
        if self.eps_opt() > 0.5 * self.eps_total + 1e-15 || !(self.eps_opt() > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_opt = {} must lie in (0, eps_total/2]",
                self.eps_opt()
            )));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(Error::InvalidParameter("invalid line-search parameters".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter(format!("max_step must be positive (got {})", self.max_step)));
        }
        Ok(())
    }
}

/// Value and gradient estimate returned by an oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `ĝ(m)`.
    pub g: f64,
    /// `∇ĝ(m)`.
    pub grad: Vector,
    /// Standard error of `ĝ(m)` that is not shared with the previous
    /// evaluations (zero for estimators on frozen samples). Used to relax the
    /// line search to the noise floor.
    pub noise: f64,
}

/// Final-iterate estimates for the error analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalEstimate {
    /// `ĝ` at the final iterate.
    pub g: f64,
    /// `∇ĝ` at the final iterate.
    pub grad: Vector,
    /// `∇²ĝ` at the final iterate.
    pub hess: Matrix,
    /// Covariance of the estimated KKT residual `(λ∇ĝ, ĝ)`.
    pub residual_cov: Matrix,
}

/// Integrand-evaluation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorkCounters {
    /// Evaluations spent on values and gradients.
    pub value_grad: u64,
    /// Evaluations spent on the final Hessian.
    pub hessian: u64,
}

impl WorkCounters {
    /// Total evaluations.
    pub fn total(&self) -> u64 {
        self.value_grad + self.hessian
    }
}

/// Source of surrogate KKT blocks for the optimiser.
pub trait KktOracle {
    /// Problem dimension.
    fn dim(&self) -> usize;
    /// Estimates `(g, ∇g)` at a trial point.
    fn evaluate(&mut self, m: &Vector) -> Result<Evaluation>;
    /// Accepts the most recently evaluated point as the next iterate.
    fn commit(&mut self, m: &Vector, step_norm: f64);
    /// Estimates the Hessian and the residual covariance at the final iterate.
    fn final_estimate(&mut self, m: &Vector, lambda: f64) -> Result<FinalEstimate>;
    /// Work spent so far.
    fn work(&self) -> WorkCounters;
    /// Detected local-regime index (multilevel only).
    fn j_loc(&self) -> Option<usize> {
        None
    }
    /// Points per shift (or samples) of the most recent level.
    fn last_level_size(&self) -> usize {
        0
    }
}

/// One accepted SQP iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Iteration index (1-based).
    pub j: usize,
    /// Allocation after the step.
    pub m: Vec<f64>,
    /// Multiplier after the step.
    pub lambda: f64,
    /// `ĝ` after the step.
    pub g: f64,
    /// Accepted step length.
    pub alpha: f64,
    /// `‖(αd, αp)‖`.
    pub step_norm: f64,
    /// Level size used for the accepted estimate.
    pub level_size: usize,
    /// The QP step fell back to a restoration direction.
    pub qp_fallback: bool,
}

/// Result of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    /// Optimal allocation `m*`.
    pub m_star: Vec<f64>,
    /// Multiplier `λ*`.
    pub lambda_star: f64,
    /// Total risk `R = Σ m*_k`.
    pub total_risk: f64,
    /// Statistical error `ε_stat`.
    pub eps_stat: f64,
    /// Lower CI bounds `m* − ε_stat`.
    pub ci_lower: Vec<f64>,
    /// Upper CI bounds `m* + ε_stat`.
    pub ci_upper: Vec<f64>,
    /// Sandwich covariance diagonal for `(m, λ)`.
    pub variance_diag: Vec<f64>,
    /// Iterations of the last solve.
    pub iterations: usize,
    /// Detected local-regime index.
    pub j_loc: Option<usize>,
    /// The last solve met `ε_opt` before the iteration cap.
    pub converged: bool,
    /// Norm of the KKT residual at the final iterate.
    pub kkt_residual: f64,
    /// Spectral condition number of the final bordered Hessian.
    pub hessian_condition: f64,
    /// Sample-size refinements performed.
    pub refinements: usize,
    /// Points per shift (or samples) of the final solve.
    pub final_size: usize,
    /// Integrand/sample evaluations over all refinements.
    pub work: WorkCounters,
    /// Wall-clock seconds over all refinements.
    pub wall_seconds: f64,
    /// Accepted iterations of the last solve.
    pub history: Vec<IterationRecord>,
}

/// Solution of the QP subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct QpStep {
    /// Allocation step `d`.
    pub d: Vector,
    /// Multiplier step `p` (new multiplier estimate `λ + p`).
    pub p: f64,
    /// A restoration step was used because the KKT system was singular.
    pub fallback: bool,
}

/// Solves the bordered QP system for `(d, p)` by range-space elimination.
///
/// With `μ = λ + p`, `B d + μ ∇g = −1` and `∇gᵀ d = −g` give
/// `μ = (g − ∇gᵀB⁻¹1) / (∇gᵀB⁻¹∇g)` and `d = −B⁻¹(1 + μ∇g)`. If `B` is not
/// positive definite a minimum-norm restoration step `d = −g ∇g/|∇g|²` is used.
pub fn qp_step(b: &Matrix, grad: &Vector, g: f64, lambda: f64) -> Result<QpStep> {
    let d = grad.len();
    if b.nrows() != d || b.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: b.nrows() });
    }
    let gn2 = grad.norm_squared();
    if !(gn2 > 0.0) || !g.is_finite() {
        return Err(Error::SingularKkt("constraint gradient vanishes".into()));
    }
    let ones = Vector::from_element(d, 1.0);
    if let Some(ch) = nalgebra::Cholesky::new(b.clone()) {
        let b1 = ch.solve(&ones);
        let bg = ch.solve(grad);
        let gbg = grad.dot(&bg);
        if gbg > 1e-300 {
            let mu = (g - grad.dot(&b1)) / gbg;
            let step = -(b1 + bg * mu);
            if step.iter().all(|v| v.is_finite()) {
                return Ok(QpStep {
                    d: step,
                    p: mu - lambda,
                    fallback: false,
                });
            }
        }
    }
    Ok(QpStep {
        d: grad * (-g / gn2),
        p: 0.0,
        fallback: true,
    })
}

/// BFGS update of `B`; returns `None` when the curvature condition
/// `yᵀs > 1e−10 |s||y|` fails (the update is skipped).
pub fn bfgs_update(b: &Matrix, s: &Vector, y: &Vector) -> Option<Matrix> {
    let sy = s.dot(y);
    if !(sy > 1e-10 * s.norm() * y.norm()) {
        return None;
    }
    let bs = b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return None;
    }
    let nb = b - (&bs * bs.transpose()) / sbs + (y * y.transpose()) / sy;
    Some(crate::linalg::symmetrize(&nb))
}

/// Outcome of [`sqp`] before the error analysis of the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct SqpOutcome {
    /// Final allocation.
    pub m: Vector,
    /// Final multiplier.
    pub lambda: f64,
    /// Last accepted evaluation.
    pub last: Evaluation,
    /// Iterations performed.
    pub iterations: usize,
    /// Whether `ε_opt` was met.
    pub converged: bool,
    /// Accepted iterations.
    pub history: Vec<IterationRecord>,
}

/// Runs the SQP iteration from `(m0, λ0)` against an oracle.
pub fn sqp<O: KktOracle + ?Sized>(oracle: &mut O, config: &SolverConfig, m0: Vector, lambda0: f64) -> Result<SqpOutcome> {
    config.validate()?;
    let d = oracle.dim();
    if m0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: m0.len() });
    }
    let eps_opt = config.eps_opt();
    let mut m = m0;
    let mut lambda = lambda0.max(1e-8);
    let mut ev = oracle.evaluate(&m)?;
    oracle.commit(&m, f64::INFINITY);
    let mut b = Matrix::identity(d, d);
    let mut scaled = false;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut failures = 0usize;
    for j in 1..=config.max_iters {
        iterations = j;
        let mut qp = qp_step(&b, &ev.grad, ev.g, lambda)?;
        let dn = qp.d.norm();
        if dn > config.max_step {
            let f = config.max_step / dn;
            qp.d *= f;
            qp.p *= f;
        }
        let mu = lambda + qp.p;
        let rho = 2.0 * mu.abs().max(lambda).max(1.0);
        let phi0 = m.sum() + rho * ev.g.abs();
        let slope = qp.d.sum() - rho * ev.g.abs();
        let mut alpha = 1.0;
        let (m_new, ev_new, accepted) = loop {
            let trial = &m + &qp.d * alpha;
            let et = match oracle.evaluate(&trial) {
                Ok(et) => et,
                // A trial outside the region where the estimator is usable
                // is rejected like any other non-decrease.
                Err(Error::NonFinite(_) | Error::StripEmpty(_) | Error::StripViolation(_))
                    if alpha * config.backtrack >= config.min_step =>
                {
                    alpha *= config.backtrack;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let phi = trial.sum() + rho * et.g.abs();
            // Relaxed Armijo test: independent randomisations of the trial
            // estimate (multilevel mode) make the merit noisy, so decreases
            // below twice its noise level are not required.
            let slack = 2.0 * rho * ev.noise.max(et.noise);
            let ok = phi.is_finite() && phi <= phi0 + config.armijo * alpha * slope.min(0.0) + slack;
            if !ok && alpha == 1.0 && config.backtrack >= config.min_step {
                // Second-order correction: a full step rejected only because
                // the constraint curvature raised |g| (Maratos effect) is
                // pulled back onto the linearised constraint at the trial.
                let gn2 = et.grad.norm_squared();
                if gn2 > 0.0 && et.g.is_finite() {
                    let corrected = &trial - &et.grad * (et.g / gn2);
                    if let Ok(ec) = oracle.evaluate(&corrected) {
                        let phi_c = corrected.sum() + rho * ec.g.abs();
                        let slack_c = 2.0 * rho * ev.noise.max(ec.noise);
                        if phi_c.is_finite() && phi_c <= phi0 + config.armijo * slope.min(0.0) + slack_c {
                            break (corrected, ec, true);
                        }
                    }
                }
            }
            if ok || alpha * config.backtrack < config.min_step {
                break (trial, et, ok);
            }
            alpha *= config.backtrack;
        };
        let lambda_new = (lambda + alpha * qp.p).max(1e-8);
        let s = &m_new - &m;
        let y = match config.bfgs_rule {
            BfgsRule::MultiplierWeighted => &ev_new.grad * lambda_new - &ev.grad * lambda,
            BfgsRule::Lagrangian => (&ev_new.grad - &ev.grad) * lambda_new,
        };
        if !scaled {
            let sy = s.dot(&y);
            if sy > 0.0 {
                b = Matrix::identity(d, d) * (y.norm_squared() / sy);
                scaled = true;
            }
        }
        if accepted {
            failures = 0;
            if let Some(nb) = bfgs_update(&b, &s, &y) {
                b = nb;
            }
        } else {
            // The model direction was not a descent direction for the merit
            // function: discard the curvature pairs and restart from scaled
            // identity.
            failures += 1;
            b = Matrix::identity(d, d);
            scaled = false;
        }
        let step_norm = (s.norm_squared() + (lambda_new - lambda).powi(2)).sqrt();
        if !m_new.iter().all(|v| v.is_finite()) || m_new.norm() > 1e6 {
            return Err(Error::DivergenceDetected(format!("iterate norm {}", m_new.norm())));
        }
        oracle.commit(&m_new, step_norm);
        m = m_new;
        lambda = lambda_new;
        ev = ev_new;
        history.push(IterationRecord {
            j,
            m: m.iter().copied().collect(),
            lambda,
            g: ev.g,
            alpha,
            step_norm,
            level_size: oracle.last_level_size(),
            qp_fallback: qp.fallback,
        });
        // A step shortened to the minimum length is small because the line
        // search failed, not because the iterates settled; only accepted
        // steps (or a vanishing full QP step) count towards convergence.
        let full = (qp.d.norm_squared() + qp.p * qp.p).sqrt();
        if (accepted && step_norm <= eps_opt) || full <= eps_opt {
            converged = true;
            break;
        }
        if failures >= 3 {
            break;
        }
    }
    Ok(SqpOutcome {
        m,
        lambda,
        last: ev,
        iterations,
        converged,
        history,
    })
}

/// Runs [`sqp`] followed by the sandwich error analysis.
pub fn solve_with_oracle<O: KktOracle + ?Sized>(
    oracle: &mut O,
    config: &SolverConfig,
    m0: Vector,
    lambda0: f64,
) -> Result<SolutionReport> {
    let start = Instant::now();
    let out = sqp(oracle, config, m0, lambda0)?;
    let fin = oracle.final_estimate(&out.m, out.lambda)?;
    let j = lagrangian_hessian(&fin.grad, &fin.hess, out.lambda)?;
    let (v, eps) = assemble_solution_covariance(&j, &fin.residual_cov)?;
    let d = out.m.len();
    let kkt = {
        let mut r = 0.0;
        for i in 0..d {
            r += (1.0 + out.lambda * out.last.grad[i]).powi(2);
        }
        (r + out.last.g * out.last.g).sqrt()
    };
    Ok(SolutionReport {
        m_star: out.m.iter().copied().collect(),
        lambda_star: out.lambda,
        total_risk: out.m.sum(),
        eps_stat: eps,
        ci_lower: out.m.iter().map(|v| v - eps).collect(),
        ci_upper: out.m.iter().map(|v| v + eps).collect(),
        variance_diag: (0..=d).map(|i| v[(i, i)]).collect(),
        iterations: out.iterations,
        j_loc: oracle.j_loc(),
        converged: out.converged,
        kkt_residual: kkt,
        hessian_condition: condition_number_sym(&j),
        refinements: 0,
        final_size: oracle.last_level_size(),
        work: oracle.work(),
        wall_seconds: start.elapsed().as_secs_f64(),
        history: out.history,
    })
}

/// Step norm below which the single-level oracle stops re-selecting damping.
const DAMPING_FREEZE_STEP: f64 = 1e-3;

/// Single-level Fourier–RQMC oracle: shifts drawn once and frozen.
///
/// Damping is re-selected at every trial point (warm-started from the last
/// accepted iterate) until an accepted step is shorter than
/// `DAMPING_FREEZE_STEP`; from then on the damping of that iterate is kept.
/// Every admissible damping gives the same integral, but the estimate on a
/// finite net moves slightly with `K`, and near the solution that jitter
/// would exceed the merit decrease the line search has to detect.
#[derive(Debug)]
pub struct SingleLevelOracle<'a> {
    ctx: &'a SurrogateContext,
    level: LevelDesign,
    damping: Option<DampingAssignment>,
    trial: Option<DampingAssignment>,
    frozen: bool,
    work: WorkCounters,
    stalled: usize,
}

impl<'a> SingleLevelOracle<'a> {
    /// Oracle on the design's level-0 shifts with `N` points per shift.
    pub fn new(ctx: &'a SurrogateContext, design: &RqmcDesign) -> Result<Self> {
        Ok(Self {
            ctx,
            level: design.level(0, design.config().n)?,
            damping: None,
            trial: None,
            frozen: false,
            work: WorkCounters::default(),
            stalled: 0,
        })
    }

    /// Damping of the last accepted iterate.
    pub fn damping(&self) -> Option<&DampingAssignment> {
        self.damping.as_ref()
    }

    /// Number of damping solves that stalled.
    pub fn stalled_damping(&self) -> usize {
        self.stalled
    }

    fn blocks(&mut self, m: &Vector, want_hess: bool) -> Result<KktBlocks> {
        let ms = m.as_slice();
        let damping = match &self.damping {
            Some(d) if self.frozen => d.clone(),
            warm => {
                let d = self.ctx.select_damping(ms, warm.as_ref())?;
                self.stalled += d.stalled;
                d
            }
        };
        let blocks = self.ctx.evaluate(ms, &damping, &self.level, want_hess)?;
        self.trial = Some(damping);
        Ok(blocks)
    }
}

impl KktOracle for SingleLevelOracle<'_> {
    fn dim(&self) -> usize {
        self.ctx.dim()
    }

    fn evaluate(&mut self, m: &Vector) -> Result<Evaluation> {
        let b = self.blocks(m, false)?;
        self.work.value_grad += b.evaluations;
        Ok(Evaluation {
            g: b.g,
            grad: b.grad,
            noise: 0.0,
        })
    }

    fn commit(&mut self, _m: &Vector, step_norm: f64) {
        if let Some(d) = self.trial.take() {
            self.damping = Some(d);
        }
        if step_norm <= DAMPING_FREEZE_STEP {
            self.frozen = true;
        }
    }

    fn final_estimate(&mut self, m: &Vector, lambda: f64) -> Result<FinalEstimate> {
        let b = self.blocks(m, true)?;
        self.work.hessian += b.evaluations;
        let residual_cov = b.residual_covariance(lambda);
        Ok(FinalEstimate {
            g: b.g,
            grad: b.grad.clone(),
            hess: b.hess.clone().expect("Hessian requested"),
            residual_cov,
        })
    }

    fn work(&self) -> WorkCounters {
        self.work
    }

    fn last_level_size(&self) -> usize {
        self.level.n
    }
}

/// Per-level diagnostics of the multilevel estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    /// 1-based level index.
    pub level: usize,
    /// Points per shift.
    pub n: usize,
    /// Largest per-shift variance of the gradient entries of this level.
    pub grad_variance: f64,
    /// `grad_variance · N^{2r}`: the level's variance constant under the
    /// schedule's `N^{−2r}` convergence model, comparable across levels of
    /// different sizes.
    pub variance_constant: f64,
    /// Components whose difference damping fell back to the single rule.
    pub fallbacks: usize,
}

/// Multilevel Fourier–RQMC oracle.
///
/// Level 1 estimates `F(m_1)` with `N_1` points; level `l ≥ 2` estimates the
/// difference `F(m_l) − F(m_{l−1})` on the first `N_l` points of the same
/// base nets with fresh shifts. The estimate at the current iterate is the
/// running telescoping sum. Line-search trials are evaluated as tentative
/// levels and the accepted one is committed.
#[derive(Debug)]
pub struct MultilevelOracle<'a> {
    ctx: &'a SurrogateContext,
    design: &'a RqmcDesign,
    schedule: LevelSchedule,
    levels: Vec<KktBlocks>,
    records: Vec<LevelRecord>,
    iterates: Vec<Vector>,
    sum: Option<KktBlocks>,
    trial: Option<(Vector, KktBlocks, DampingAssignment, usize)>,
    damping: Option<DampingAssignment>,
    work: WorkCounters,
}

impl<'a> MultilevelOracle<'a> {
    /// Oracle with the schedule derived from the design configuration.
    pub fn new(ctx: &'a SurrogateContext, design: &'a RqmcDesign) -> Self {
        Self::with_schedule(ctx, design, LevelSchedule::new(design.config()))
    }

    /// Oracle with an explicit schedule.
    pub fn with_schedule(ctx: &'a SurrogateContext, design: &'a RqmcDesign, schedule: LevelSchedule) -> Self {
        Self {
            ctx,
            design,
            schedule,
            levels: Vec::new(),
            records: Vec::new(),
            iterates: Vec::new(),
            sum: None,
            trial: None,
            damping: None,
            work: WorkCounters::default(),
        }
    }

    /// Per-level diagnostics of the committed levels.
    pub fn level_records(&self) -> &[LevelRecord] {
        &self.records
    }

    /// The level schedule.
    pub fn schedule(&self) -> &LevelSchedule {
        &self.schedule
    }
}

fn max_grad_variance(b: &KktBlocks) -> f64 {
    let d = b.grad.len();
    let c = crate::rqmc::covariance(&b.per_shift);
    (0..d).map(|i| c[(i, i)]).fold(0.0, f64::max)
}

impl KktOracle for MultilevelOracle<'_> {
    fn dim(&self) -> usize {
        self.ctx.dim()
    }

    fn evaluate(&mut self, m: &Vector) -> Result<Evaluation> {
        let ms = m.as_slice();
        let (blocks, damping, n) = match (self.iterates.last(), &self.sum) {
            (Some(prev), Some(_)) => {
                let j = self.levels.len() + 1;
                let n = self.schedule.level_size(j);
                let level = self.design.level(j as u64, n)?;
                let damping = self.ctx.select_damping_difference(ms, prev.as_slice(), self.damping.as_ref())?;
                let b = self.ctx.evaluate_difference(ms, prev.as_slice(), &damping, &level, false)?;
                (b, damping, n)
            }
            _ => {
                let n = self.schedule.n1;
                let level = self.design.level(1, n)?;
                let damping = self.ctx.select_damping(ms, self.damping.as_ref())?;
                let b = self.ctx.evaluate(ms, &damping, &level, false)?;
                (b, damping, n)
            }
        };
        self.work.value_grad += blocks.evaluations;
        let total = match &self.sum {
            Some(s) if !self.iterates.is_empty() => s.add(&blocks),
            _ => blocks.clone(),
        };
        let d = self.ctx.dim();
        let var_g: f64 = self
            .levels
            .iter()
            .chain(std::iter::once(&blocks))
            .map(|l| l.residual_covariance(1.0)[(d, d)])
            .sum();
        let ev = Evaluation {
            g: total.g,
            grad: total.grad.clone(),
            noise: var_g.max(0.0).sqrt(),
        };
        self.trial = Some((m.clone(), blocks, damping, n));
        Ok(ev)
    }

    fn commit(&mut self, m: &Vector, step_norm: f64) {
        let Some((tm, blocks, damping, n)) = self.trial.take() else {
            return;
        };
        debug_assert_eq!(&tm, m);
        if step_norm.is_finite() {
            self.schedule.record_step(step_norm);
        }
        self.records.push(LevelRecord {
            level: self.levels.len() + 1,
            n,
            grad_variance: max_grad_variance(&blocks),
            variance_constant: max_grad_variance(&blocks) * (n as f64).powf(2.0 * self.schedule.rate),
            fallbacks: damping.fallbacks,
        });
        self.sum = Some(match &self.sum {
            Some(s) => s.add(&blocks),
            None => blocks.clone(),
        });
        self.levels.push(blocks);
        self.iterates.push(m.clone());
        self.damping = Some(damping);
    }

    fn final_estimate(&mut self, m: &Vector, lambda: f64) -> Result<FinalEstimate> {
        let sum = self
            .sum
            .clone()
            .ok_or_else(|| Error::InvalidDesign("no committed level".into()))?;
        let level = self.design.level(u64::MAX, self.schedule.n1)?;
        let damping = self.ctx.select_damping(m.as_slice(), self.damping.as_ref())?;
        let hb = self.ctx.evaluate(m.as_slice(), &damping, &level, true)?;
        self.work.hessian += hb.evaluations;
        let d = self.ctx.dim();
        let mut cov = Matrix::zeros(d + 1, d + 1);
        for l in &self.levels {
            cov += l.residual_covariance(lambda);
        }
        Ok(FinalEstimate {
            g: sum.g,
            grad: sum.grad,
            hess: hb.hess.expect("Hessian requested"),
            residual_cov: cov,
        })
    }

    fn work(&self) -> WorkCounters {
        self.work
    }

    fn j_loc(&self) -> Option<usize> {
        self.schedule.j_loc
    }

    fn last_level_size(&self) -> usize {
        self.records.last().map_or(self.schedule.n1, |r| r.n)
    }
}

/// Default starting allocation `E[X] + 1`.
pub fn default_start(ctx: &SurrogateContext, config: &SolverConfig) -> Result<Vector> {
    let d = ctx.dim();
    match &config.init_m {
        Some(v) if v.len() == d => Ok(Vector::from_column_slice(v)),
        Some(v) => Err(Error::DimensionMismatch { expected: d, got: v.len() }),
        None => Ok(ctx.factors().mean().add_scalar(1.0)),
    }
}

/// Fourier–RQMC solve with sample-size refinement.
///
/// Returns the report and, in multilevel mode, the per-level diagnostics of
/// the last solve.
pub fn solve(
    ctx: &SurrogateContext,
    config: &SolverConfig,
    rqmc: &RqmcConfig,
    mode: Mode,
) -> Result<(SolutionReport, Vec<LevelRecord>)> {
    let start = Instant::now();
    let mut rq = rqmc.clone();
    let mut m0 = default_start(ctx, config)?;
    let mut lambda0 = config.init_lambda;
    let mut work = WorkCounters::default();
    let mut refinements = 0;
    loop {
        let design = RqmcDesign::new(rq.clone(), &ctx.cube_dims())?;
        let (mut report, levels) = match mode {
            Mode::SingleLevel => {
                let mut oracle = SingleLevelOracle::new(ctx, &design)?;
                (solve_with_oracle(&mut oracle, config, m0.clone(), lambda0)?, Vec::new())
            }
            Mode::Multilevel => {
                let mut oracle = MultilevelOracle::new(ctx, &design);
                let r = solve_with_oracle(&mut oracle, config, m0.clone(), lambda0)?;
                (r, oracle.level_records().to_vec())
            }
        };
        work.value_grad += report.work.value_grad;
        work.hessian += report.work.hessian;
        if report.eps_stat <= 0.5 * config.eps_total || refinements >= config.max_refinements {
            report.work = work;
            report.refinements = refinements;
            report.wall_seconds = start.elapsed().as_secs_f64();
            return Ok((report, levels));
        }
        refinements += 1;
        rq.n *= 2;
        rq.n_min = rq.n_min.min(rq.n);
        m0 = Vector::from_column_slice(&report.m_star);
        lambda0 = report.lambda_star;
    }
}
