//! Contour-shift (damping) selection.
//!
//! For a block with marginal `X_p` and damping `K` the Fourier integrand at
//! the origin has log-magnitude
//!
//! ```text
//! υ(m, K) = −k ln(2π) + ⟨K, m⟩ + ln Φ(iK) + ln |ℓ̂(iK)|.
//! ```
//!
//! Since `|h(u)| ≤ |h(0)|` on the whole real line, `υ` bounds the integrand
//! and minimising it over the admissible strip yields a flat, weakly
//! oscillating integrand. An optional Tikhonov term `(λ/2) Kᵀ W K` keeps the
//! optimum away from the boundary of the characteristic-function strip,
//! where the NIG objective flattens out.
//!
//! Two-sided (exponential) blocks carry `2^k` contour terms; their peak is
//! the log of the summed term magnitudes at the origin (a log-sum-exp over
//! terms), optimised jointly in `(K⁻, K⁺)`.
//!
//! For multilevel differences a single damping is chosen for
//! `h(·; m_j) − h(·; m_{j−1})` by minimising `ln |Δh(0)|`, which for a single
//! contour term equals `υ(m_j, K) + ln |1 − e^{⟨K, m_{j−1} − m_j⟩}|`.

use crate::loss::{ComponentSpec, Damping};
use crate::risk_factors::{MarginalModel, RiskFactorModel};
use crate::special::LN_2PI;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Weighting matrix for the Tikhonov penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightRule {
    /// Identity weighting.
    Identity,
    /// The marginal dispersion matrix (`Σ` for Gaussian, `Γ` for NIG).
    Dispersion,
}

/// Damping-selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DampingConfig {
    /// Tikhonov weight `λ ≥ 0`.
    pub penalty_lambda: f64,
    /// Weighting matrix of the penalty.
    pub weight: WeightRule,
    /// Absolute distance kept from the loss strip boundary.
    pub strip_margin: f64,
    /// NIG radicand floor, relative to `α²` of the marginal.
    pub radicand_margin: f64,
    /// Gradient-norm tolerance of the inner quasi-Newton solve.
    pub tol: f64,
    /// Iteration cap of the inner solve.
    pub max_iters: usize,
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self {
            penalty_lambda: 0.0,
            weight: WeightRule::Dispersion,
            strip_margin: 1e-3,
            radicand_margin: 1e-6,
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

impl DampingConfig {
    /// Defaults for Gaussian risk factors (no penalty).
    pub fn gaussian() -> Self {
        Self::default()
    }

    /// Defaults for NIG risk factors (`λ = 0.3`, `W = Γ`).
    pub fn nig() -> Self {
        Self {
            penalty_lambda: 0.3,
            ..Self::default()
        }
    }

    /// Validates the settings.
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_lambda >= 0.0) || !(self.strip_margin > 0.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "damping config needs lambda >= 0, margin > 0, tol > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Outcome of a damping selection.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingSolution {
    /// Selected damping.
    pub damping: Damping,
    /// Objective value (peak plus penalty) at the selection.
    pub objective: f64,
    /// Gradient norm at the selection.
    pub grad_norm: f64,
    /// Inner iterations used.
    pub iterations: usize,
    /// The inner solve stopped before reaching the tolerance.
    pub stalled: bool,
    /// A difference selection fell back to the single-iterate rule.
    pub fallback: bool,
}

/// Per-component damping for one evaluation point (or one difference level).
///
/// Entry `i` belongs to the `i`-th Fourier component of the surrogate; the
/// same contour is used for the value, gradient and Hessian integrands,
/// whose admissible domains coincide for both loss families.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DampingAssignment {
    /// One entry per Fourier component.
    pub entries: Vec<Damping>,
    /// Number of components whose inner solve stalled.
    pub stalled: usize,
    /// Number of difference selections that fell back to the single rule.
    pub fallbacks: usize,
}

fn penalty(cfg: &DampingConfig, marginal: &MarginalModel, theta: &[f64], k: usize) -> (f64, Vec<f64>) {
    let lam = cfg.penalty_lambda;
    let mut grad = vec![0.0; theta.len()];
    if lam == 0.0 {
        return (0.0, grad);
    }
    let w = marginal.model.dispersion();
    let mut val = 0.0;
    for block in 0..theta.len() / k {
        let t = &theta[block * k..(block + 1) * k];
        for a in 0..k {
            let mut row = 0.0;
            for b in 0..k {
                let wab = match cfg.weight {
                    WeightRule::Dispersion => w[(a, b)],
                    WeightRule::Identity => f64::from(u8::from(a == b)),
                };
                row += wab * t[b];
            }
            val += 0.5 * lam * t[a] * row;
            grad[block * k + a] = lam * row;
        }
    }
    (val, grad)
}

/// Whether `damping` is admissible for the block and its marginal, with margins.
pub fn is_admissible(
    spec: &ComponentSpec,
    marginal: &MarginalModel,
    damping: &Damping,
    cfg: &DampingConfig,
) -> bool {
    if !spec.in_loss_strip(damping, cfg.strip_margin) {
        return false;
    }
    let Ok(terms) = spec.contour_terms(damping) else {
        return false;
    };
    terms.iter().all(|t| cf_strip_ok(&marginal.model, &t.shift, cfg))
}

fn cf_strip_ok(model: &RiskFactorModel, shift: &[f64], cfg: &DampingConfig) -> bool {
    match model {
        RiskFactorModel::Gaussian(_) => shift.iter().all(|v| v.is_finite()),
        RiskFactorModel::Nig(n) => {
            n.strip_radicand(shift) >= cfg.radicand_margin * n.alpha() * n.alpha()
        }
    }
}

/// Per-term log peaks `υ_s` and their gradients with respect to the
/// flattened damping parameters.
fn term_peaks(
    spec: &ComponentSpec,
    marginal: &MarginalModel,
    damping: &Damping,
    m: &[f64],
) -> Result<Vec<(f64, Vec<f64>)>> {
    let k = spec.k();
    let terms = spec.contour_terms(damping)?;
    let two_sided = matches!(damping, Damping::TwoSided { .. });
    let mut out = Vec::with_capacity(terms.len());
    for t in &terms {
        let (lncf, dcf) = marginal.model.ln_cf_on_imaginary_axis(&t.shift)?;
        let (lnl, dl) = t.ln_abs_at_origin();
        let mut val = -(k as f64) * LN_2PI + lncf + lnl;
        let mut grad = vec![0.0; damping.len()];
        for j in 0..k {
            val += t.shift[j] * m[j];
            let dk = m[j] + dcf[j] + dl[j];
            if two_sided {
                // shift_j = −K⁻_j (lower) or −K⁺_j (upper)
                let slot = if t.upper[j] { k + j } else { j };
                grad[slot] -= dk;
            } else {
                grad[j] += dk;
            }
        }
        out.push((val, grad));
    }
    Ok(out)
}

fn log_sum_exp_with_grad(parts: &[(f64, Vec<f64>)]) -> (f64, Vec<f64>) {
    let mx = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let n = parts[0].1.len();
    let mut grad = vec![0.0; n];
    for (v, g) in parts {
        let w = (v - mx).exp();
        total += w;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += w * b;
        }
    }
    for a in &mut grad {
        *a /= total;
    }
    (mx + total.ln(), grad)
}

/// Log-peak `υ(m, K) = ln |h(0; m, K)|` of the block integrand (value order).
///
/// For two-sided blocks this is the log of the summed contour-term peaks.
pub fn peak_objective(
    spec: &ComponentSpec,
    marginal: &MarginalModel,
    damping: &Damping,
    m: &[f64],
) -> Result<f64> {
    Ok(peak_objective_with_grad(spec, marginal, damping, m)?.0)
}

/// [`peak_objective`] and its gradient in the flattened damping parameters.
pub fn peak_objective_with_grad(
    spec: &ComponentSpec,
    marginal: &MarginalModel,
    damping: &Damping,
    m: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if m.len() != spec.k() {
        return Err(Error::DimensionMismatch {
            expected: spec.k(),
            got: m.len(),
        });
    }
    let parts = term_peaks(spec, marginal, damping, m)?;
    Ok(log_sum_exp_with_grad(&parts))
}

/// Log-magnitude of the difference peak `ln |h(0; m_new) − h(0; m_old)|`
/// with its gradient, and the log of the summed term magnitudes (used to
/// detect cancellation between contour terms).
fn difference_peak_with_grad(
    spec: &ComponentSpec,
    marginal: &MarginalModel,
    damping: &Damping,
    m_new: &[f64],
    m_old: &[f64],
) -> Result<(f64, Vec<f64>, f64)> {
    let parts = term_peaks(spec, marginal, damping, m_new)?;
    let terms = spec.contour_terms(damping)?;
    let k = spec.k();
    let two_sided = matches!(damping, Damping::TwoSided { .. });
    let mx = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let n = damping.len();
    let mut total = 0.0;
    let mut abs_total = 0.0;
    let mut dtotal = vec![0.0; n];
    for ((v, g), t) in parts.iter().zip(&terms) {
        // term_s = e^{υ_s} (1 − e^{τ_s}),  τ_s = ⟨K^s, m_old − m_new⟩
        let tau: f64 = (0..k).map(|j| t.shift[j] * (m_old[j] - m_new[j])).sum();
        let w = (v - mx).exp();
        let factor = -tau.exp_m1();
        total += w * factor;
        abs_total += (w * factor).abs();
        for (slot, gs) in g.iter().enumerate() {
            dtotal[slot] += w * factor * gs;
        }
        let et = tau.exp();
        for j in 0..k {
            let dtau = m_old[j] - m_new[j];
            let slot = if two_sided {
                if t.upper[j] {
                    k + j
                } else {
                    j
                }
            } else {
                j
            };
            let sign = if two_sided { -1.0 } else { 1.0 };
            dtotal[slot] += w * (-et) * dtau * sign;
        }
    }
    let val = mx + total.abs().ln();
    let grad = dtotal.iter().map(|d| d / total).collect();
    Ok((val, grad, mx + abs_total.ln()))
}

/// Finds an admissible starting point, moving toward the strip centre if needed.
fn feasible_start(
    spec: &ComponentSpec,
    marginal: &MarginalModel,
    cfg: &DampingConfig,
    warm: Option<&Damping>,
) -> Result<Damping> {
    if let Some(w) = warm {
        if is_admissible(spec, marginal, w, cfg) {
            return Ok(w.clone());
        }
    }
    let start = spec.default_damping();
    if is_admissible(spec, marginal, &start, cfg) {
        return Ok(start);
    }
    // Centre of the characteristic-function strip intersected with the loss strip.
    let centre = match (&marginal.model, &start) {
        (RiskFactorModel::Nig(n), Damping::OneSided(_)) => Damping::OneSided(
            n.beta()
                .iter()
                .map(|&b| b.min(-2.0 * cfg.strip_margin))
                .collect(),
        ),
        (RiskFactorModel::Nig(n), Damping::TwoSided { .. }) => Damping::TwoSided {
            lo: n.beta().iter().map(|&b| b.min(spec.beta - 2.0 * cfg.strip_margin)).collect(),
            hi: n.beta().iter().map(|&b| b.max(spec.beta + 2.0 * cfg.strip_margin)).collect(),
        },
        (_, Damping::OneSided(k)) => Damping::OneSided(vec![-2.0 * cfg.strip_margin; k.len()]),
        (_, Damping::TwoSided { lo, .. }) => Damping::TwoSided {
            lo: vec![spec.beta - 2.0 * cfg.strip_margin; lo.len()],
            hi: vec![spec.beta + 2.0 * cfg.strip_margin; lo.len()],
        },
    };
    let a = start.to_params();
    let c = centre.to_params();
    let mut t = 0.5;
    for _ in 0..60 {
        let p: Vec<f64> = a.iter().zip(&c).map(|(x, y)| (1.0 - t) * x + t * y).collect();
        let cand = start.with_params(&p);
        if is_admissible(spec, marginal, &cand, cfg) {
            return Ok(cand);
        }
        t = 0.5 * (1.0 + t);
    }
    if is_admissible(spec, marginal, &centre, cfg) {
        return Ok(centre);
    }
    Err(Error::StripEmpty(format!(
        "{:?} block on coordinates {:?}",
        spec.kind, spec.indices
    )))
}

/// Minimises `f` over admissible parameters by BFGS with feasibility-preserving
/// Armijo backtracking. Returns `(θ, f, ‖∇f‖, iterations, stalled)`.
fn minimise<F>(
    start: Vec<f64>,
    admissible: impl Fn(&[f64]) -> bool,
    f: F,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, f64, f64, usize, bool)>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = start.len();
    let mut x = start;
    let (mut fx, mut gx) = f(&x)?;
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut first = true;
    for it in 0..max_iters {
        let gn = norm(&gx);
        if !gn.is_finite() || !fx.is_finite() {
            return Err(Error::NonFinite("damping objective".into()));
        }
        if gn <= tol {
            return Ok((x, fx, gn, it, false));
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h[i * n + j] * gx[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&gx).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            dir = gx.iter().map(|g| -g).collect();
            slope = -gn * gn;
            h.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                h[i * n + i] = 1.0;
            }
        }
        if first {
            // keep the first trial step of moderate length
            let dn = norm(&dir);
            if dn > 1.0 {
                dir.iter_mut().for_each(|v| *v /= dn);
                slope /= dn;
            }
            first = false;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if admissible(&trial) {
                if let Ok((ft, gt)) = f(&trial) {
                    if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            return Ok((x, fx, gn, it, true));
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) {
            // inverse BFGS update
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let small_move = norm(&s) <= 1e-15 * (1.0 + norm(&xn));
        x = xn;
        fx = fnew;
        gx = gnew;
        if small_move {
            let gn = norm(&gx);
            return Ok((x, fx, gn, it + 1, gn > tol));
        }
    }
    let gn = norm(&gx);
    Ok((x, fx, gn, max_iters, gn > tol))
}

/// Selects the damping of one block at the allocation `m` (restricted to the
/// block's coordinates) by minimising the penalised log-peak objective.
pub fn select_damping(
    spec: &ComponentSpec,
    marginal: &MarginalModel,
    m: &[f64],
    cfg: &DampingConfig,
    warm: Option<&Damping>,
) -> Result<DampingSolution> {
    let start = feasible_start(spec, marginal, cfg, warm)?;
    let k = spec.k();
    let template = start.clone();
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let d = template.with_params(theta);
        let (v, mut g) = peak_objective_with_grad(spec, marginal, &d, m)?;
        let (pv, pg) = penalty(cfg, marginal, theta, k);
        g.iter_mut().zip(&pg).for_each(|(a, b)| *a += b);
        Ok((v + pv, g))
    };
    let admissible = |theta: &[f64]| is_admissible(spec, marginal, &template.with_params(theta), cfg);
    let (theta, f, gn, it, stalled) =
        minimise(start.to_params(), admissible, objective, cfg.tol, cfg.max_iters)?;
    Ok(DampingSolution {
        damping: template.with_params(&theta),
        objective: f,
        grad_norm: gn,
        iterations: it,
        stalled,
        fallback: false,
    })
}

/// Selects a single damping for the difference integrand
/// `h(·; m_new) − h(·; m_old)` by minimising `ln |Δh(0)|` plus the penalty.
///
/// Falls back to [`select_damping`] at `m_new` (flagging `fallback`) when the
/// difference vanishes at the start (`|Δh(0)| < 1e−300`), when the shift is
/// nearly orthogonal to `m_new − m_old` (the objective then has no minimum),
/// when contour terms cancel each other, or when the inner solve stalls.
pub fn select_damping_for_difference(
    spec: &ComponentSpec,
    marginal: &MarginalModel,
    m_new: &[f64],
    m_old: &[f64],
    cfg: &DampingConfig,
    warm: Option<&Damping>,
) -> Result<DampingSolution> {
    let fallback = || -> Result<DampingSolution> {
        let mut s = select_damping(spec, marginal, m_new, cfg, warm)?;
        s.fallback = true;
        Ok(s)
    };
    let k = spec.k();
    let dm: Vec<f64> = m_old.iter().zip(m_new).map(|(a, b)| a - b).collect();
    let dn = dm.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dn == 0.0 {
        return fallback();
    }
    let start = feasible_start(spec, marginal, cfg, warm)?;
    let (v0, _, _) = difference_peak_with_grad(spec, marginal, &start, m_new, m_old)?;
    if !v0.is_finite() || v0 < (1e-300f64).ln() {
        return fallback();
    }
    let template = start.clone();
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let d = template.with_params(theta);
        let (v, mut g, _) = difference_peak_with_grad(spec, marginal, &d, m_new, m_old)?;
        let (pv, pg) = penalty(cfg, marginal, theta, k);
        g.iter_mut().zip(&pg).for_each(|(a, b)| *a += b);
        Ok((v + pv, g))
    };
    let admissible = |theta: &[f64]| is_admissible(spec, marginal, &template.with_params(theta), cfg);
    let Ok((theta, f, gn, it, stalled)) =
        minimise(start.to_params(), admissible, objective, cfg.tol, cfg.max_iters)
    else {
        return fallback();
    };
    let chosen = template.with_params(&theta);
    if stalled {
        return fallback();
    }
    let (v, _, v_abs) = difference_peak_with_grad(spec, marginal, &chosen, m_new, m_old)?;
    if v < v_abs - 4f64.ln() {
        return fallback();
    }
    for t in spec.contour_terms(&chosen)? {
        let kn = t.shift.iter().map(|v| v * v).sum::<f64>().sqrt();
        let proj: f64 = t.shift.iter().zip(&dm).map(|(a, b)| a * b).sum();
        if proj.abs() < 1e-3 * kn * dn {
            return fallback();
        }
    }
    Ok(DampingSolution {
        damping: chosen,
        objective: f,
        grad_norm: gn,
        iterations: it,
        stalled: false,
        fallback: false,
    })
}
