//! Fourier surrogates of `g`, `∇g` and `∇²g`.
//!
//! For a block `ℓ_p` with marginal `X_p`, damping `K` and allocation `m`,
//!
//! ```text
//! E[ℓ_p(X_p − m_p)] = Re ∫_{R^k} h(u) du,
//! h(u) = (2π)^{−k} e^{⟨K − iu, m_p⟩} Φ_{X_p}(u + iK) ℓ̂_p(u + iK).
//! ```
//!
//! Differentiating under the integral in `m` multiplies `h` by `(K − iu)`
//! (gradient) and `(K − iu)(K − iu)ᵀ` (Hessian), so all three orders share
//! one integrand evaluation. Two-sided blocks sum their contour terms, each
//! with its own shift in the prefactor and in the characteristic function.
//!
//! Multilevel differences `h(·; m_new) − h(·; m_old)` share everything but
//! the prefactor, which is evaluated as `e^{A_new}(−expm1(A_old − A_new))`
//! to avoid cancellation.
//!
//! Block estimates are scattered into `R^d` and combined with the closed-form
//! parts: the QPC linear term contributes `Σ_k (E[X_k] − m_k)` to `g` and `−1`
//! to every gradient entry; constants only shift `g`.

use crate::damping::{
    peak_objective, select_damping, select_damping_for_difference, DampingAssignment, DampingConfig,
};
use crate::loss::{ComponentKind, ComponentSpec, ContourTerm, Damping, LossModel};
use crate::risk_factors::{MarginalModel, RiskFactorModel};
use crate::rqmc::LevelDesign;
use crate::special::LN_2PI;
use crate::transform::{oscillation_diagnostic, DomainTransform, TransformConfig};
use crate::{Complex, Error, Matrix, Result, Vector};
use rayon::prelude::*;

/// A Fourier-integrated block with its marginal law and cube transform.
#[derive(Debug, Clone)]
pub struct FourierComponent {
    /// Block description.
    pub spec: ComponentSpec,
    /// Marginal law of the block coordinates.
    pub marginal: MarginalModel,
    /// Cube-to-Fourier-domain map.
    pub transform: DomainTransform,
}

impl FourierComponent {
    fn restrict(&self, m: &[f64]) -> Vec<f64> {
        self.spec.indices.iter().map(|&i| m[i]).collect()
    }
}

/// Loss, risk factors and the precomputed block structure.
#[derive(Debug, Clone)]
pub struct SurrogateContext {
    loss: LossModel,
    factors: RiskFactorModel,
    mean: Vector,
    components: Vec<FourierComponent>,
    linear_coeff: f64,
    constant: f64,
    transform_config: TransformConfig,
    damping_config: DampingConfig,
}

/// Per-component, per-shift block means at one level.
#[derive(Debug, Clone)]
pub struct ComponentEstimates {
    /// `values[c][s]`: block value mean of component `c` under shift `s`.
    pub values: Vec<Vec<f64>>,
    /// `grads[c][s]`: block gradient mean (length `k`).
    pub grads: Vec<Vec<Vec<f64>>>,
    /// `hessians[c][s]`: block Hessian mean (row-major `k × k`), if requested.
    pub hessians: Option<Vec<Vec<Vec<f64>>>>,
    /// Largest absolute imaginary part of a block mean (numerical health).
    pub imag_residual: f64,
    /// Integrand evaluations (component × point × shift).
    pub evaluations: u64,
}

/// Surrogate KKT blocks at one allocation (or one difference level).
#[derive(Debug, Clone)]
pub struct KktBlocks {
    /// `ĝ`.
    pub g: f64,
    /// `∇_m ĝ`.
    pub grad: Vector,
    /// `∇²_m ĝ` (symmetrised), if requested.
    pub hess: Option<Matrix>,
    /// Per-shift `(∇_m ĝ, ĝ)` vectors of length `d + 1`.
    pub per_shift: Vec<Vector>,
    /// Largest imaginary residual of any block mean.
    pub imag_residual: f64,
    /// Integrand evaluations spent.
    pub evaluations: u64,
}

impl KktBlocks {
    /// Per-shift covariance of `(λ ∇ĝ, ĝ)` divided by the number of shifts,
    /// i.e. the covariance of the estimated KKT residual.
    pub fn residual_covariance(&self, lambda: f64) -> Matrix {
        let d = self.grad.len();
        let scaled: Vec<Vector> = self
            .per_shift
            .iter()
            .map(|v| {
                let mut w = v.clone();
                for i in 0..d {
                    w[i] *= lambda;
                }
                w
            })
            .collect();
        crate::rqmc::covariance(&scaled) / self.per_shift.len() as f64
    }

    /// Elementwise sum of two estimates on independent randomisations.
    pub fn add(&self, other: &KktBlocks) -> KktBlocks {
        KktBlocks {
            g: self.g + other.g,
            grad: &self.grad + &other.grad,
            hess: match (&self.hess, &other.hess) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            },
            per_shift: self
                .per_shift
                .iter()
                .zip(&other.per_shift)
                .map(|(a, b)| a + b)
                .collect(),
            imag_residual: self.imag_residual.max(other.imag_residual),
            evaluations: self.evaluations + other.evaluations,
        }
    }
}

/// Per-term data reused across the points of one shift.
struct TermPlan {
    term: ContourTerm,
    /// `−k ln 2π + ⟨K^s, m_new⟩`.
    c_new: f64,
    /// `⟨K^s, m_old − m_new⟩` for differences.
    c_diff: f64,
}

#[inline]
fn complex_expm1(z: Complex) -> Complex {
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    let em1 = z.re.exp_m1();
    Complex::new(em1 * c - 2.0 * half * half, (em1 + 1.0) * s)
}

impl SurrogateContext {
    /// Decomposes the loss and prepares marginals and transforms.
    pub fn new(
        loss: LossModel,
        factors: RiskFactorModel,
        transform_config: TransformConfig,
        damping_config: DampingConfig,
    ) -> Result<Self> {
        if loss.dim() != factors.dim() {
            return Err(Error::DimensionMismatch {
                expected: factors.dim(),
                got: loss.dim(),
            });
        }
        transform_config.validate()?;
        damping_config.validate()?;
        let mut components = Vec::new();
        let mut linear_coeff = 0.0;
        let mut constant = 0.0;
        for spec in loss.components() {
            match spec.kind {
                ComponentKind::LinearClosedForm => linear_coeff += spec.coeff,
                ComponentKind::ConstantClosedForm => constant += spec.coeff,
                _ => {
                    let marginal = factors.marginal(&spec.indices)?;
                    let transform = DomainTransform::for_marginal(&marginal, &transform_config)?;
                    components.push(FourierComponent {
                        spec,
                        marginal,
                        transform,
                    });
                }
            }
        }
        Ok(Self {
            mean: factors.mean(),
            loss,
            factors,
            components,
            linear_coeff,
            constant,
            transform_config,
            damping_config,
        })
    }

    /// Problem dimension `d`.
    pub fn dim(&self) -> usize {
        self.loss.dim()
    }
    /// Loss model.
    pub fn loss(&self) -> &LossModel {
        &self.loss
    }
    /// Risk-factor model.
    pub fn factors(&self) -> &RiskFactorModel {
        &self.factors
    }
    /// Fourier components.
    pub fn components(&self) -> &[FourierComponent] {
        &self.components
    }
    /// Damping settings.
    pub fn damping_config(&self) -> &DampingConfig {
        &self.damping_config
    }
    /// Transform settings.
    pub fn transform_config(&self) -> &TransformConfig {
        &self.transform_config
    }

    /// Distinct cube dimensions used by the components.
    pub fn cube_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.components.iter().map(|c| c.transform.cube_dim()).collect();
        dims.sort_unstable();
        dims.dedup();
        dims
    }

    /// Component indices grouped by cube dimension (components sharing shifts).
    pub fn shift_groups(&self) -> Vec<Vec<usize>> {
        self.cube_dims()
            .into_iter()
            .map(|d| {
                (0..self.components.len())
                    .filter(|&c| self.components[c].transform.cube_dim() == d)
                    .collect()
            })
            .collect()
    }

    /// Closed-form contribution to `g` at `m`.
    fn closed_form_value(&self, m: &[f64]) -> f64 {
        let lin: f64 = m.iter().zip(self.mean.iter()).map(|(mk, ek)| ek - mk).sum();
        self.linear_coeff * lin + self.constant
    }

    /// Selects damping for every component at `m`.
    pub fn select_damping(&self, m: &[f64], warm: Option<&DampingAssignment>) -> Result<DampingAssignment> {
        self.check_dim(m)?;
        let sols: Vec<_> = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let w = warm.and_then(|a| a.entries.get(i));
                select_damping(&c.spec, &c.marginal, &c.restrict(m), &self.damping_config, w)
            })
            .collect::<Result<_>>()?;
        Ok(DampingAssignment {
            stalled: sols.iter().filter(|s| s.stalled).count(),
            fallbacks: 0,
            entries: sols.into_iter().map(|s| s.damping).collect(),
        })
    }

    /// Selects one damping per component for the difference `m_old → m_new`.
    pub fn select_damping_difference(
        &self,
        m_new: &[f64],
        m_old: &[f64],
        warm: Option<&DampingAssignment>,
    ) -> Result<DampingAssignment> {
        self.check_dim(m_new)?;
        self.check_dim(m_old)?;
        let sols: Vec<_> = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let w = warm.and_then(|a| a.entries.get(i));
                select_damping_for_difference(
                    &c.spec,
                    &c.marginal,
                    &c.restrict(m_new),
                    &c.restrict(m_old),
                    &self.damping_config,
                    w,
                )
            })
            .collect::<Result<_>>()?;
        Ok(DampingAssignment {
            stalled: sols.iter().filter(|s| s.stalled).count(),
            fallbacks: sols.iter().filter(|s| s.fallback).count(),
            entries: sols.into_iter().map(|s| s.damping).collect(),
        })
    }

    fn check_dim(&self, m: &[f64]) -> Result<()> {
        if m.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: m.len(),
            });
        }
        Ok(())
    }

    /// Log peak `υ` of component `c` at `m` (full-dimensional allocation).
    pub fn peak(&self, c: usize, m: &[f64], damping: &Damping) -> Result<f64> {
        let comp = &self.components[c];
        peak_objective(&comp.spec, &comp.marginal, damping, &comp.restrict(m))
    }

    /// Boundary-oscillation estimate of component `c` at `m`.
    pub fn oscillation_estimate(&self, c: usize, m: &[f64], damping: &Damping) -> Result<f64> {
        let comp = &self.components[c];
        let mp = comp.restrict(m);
        let peak = peak_objective(&comp.spec, &comp.marginal, damping, &mp)?;
        // amplitude of the transformed integrand at the origin; the mixture
        // reference has an integrable singular density there, so both
        // families use the Gaussian normalisation as the scale
        let amplitude = (peak + comp.transform.ln_scale()).exp();
        oscillation_diagnostic(&comp.marginal, &mp, amplitude, &self.transform_config)
    }

    /// Component integrand `h^{(ν)}(u)` at `m`, summed over contour terms.
    ///
    /// Returns one value (`ν = 0`), `k` values (`ν = 1`) or `k²` row-major
    /// values (`ν = 2`).
    pub fn component_integrand(
        &self,
        c: usize,
        nu: u8,
        m: &[f64],
        damping: &Damping,
        u: &[f64],
    ) -> Result<Vec<Complex>> {
        let comp = &self.components[c];
        let k = comp.spec.k();
        if u.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: u.len() });
        }
        if nu > 2 {
            return Err(Error::InvalidParameter(format!("derivative order {nu} not supported")));
        }
        let mp = comp.restrict(m);
        let terms = comp.spec.contour_terms(damping)?;
        let len = [1, k, k * k][nu as usize];
        let mut out = vec![Complex::new(0.0, 0.0); len];
        let mut z = vec![Complex::new(0.0, 0.0); k];
        for t in &terms {
            let mut e = Complex::new(-(k as f64) * LN_2PI, 0.0);
            for j in 0..k {
                z[j] = Complex::new(u[j], t.shift[j]);
                e += Complex::new(t.shift[j], -u[j]) * mp[j];
            }
            e += comp.marginal.model.ln_extended_cf(&z)?;
            let h = e.exp() * t.value(u);
            let f: Vec<Complex> = (0..k).map(|j| Complex::new(t.shift[j], -u[j])).collect();
            match nu {
                0 => out[0] += h,
                1 => (0..k).for_each(|j| out[j] += h * f[j]),
                _ => {
                    for a in 0..k {
                        for b in 0..k {
                            out[a * k + b] += h * f[a] * f[b];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Per-component, per-shift block means for the value and gradient (and
    /// optionally Hessian) at `m_new`, or of the difference `m_new − m_old`.
    pub fn estimate_components(
        &self,
        m_new: &[f64],
        m_old: Option<&[f64]>,
        damping: &DampingAssignment,
        level: &LevelDesign,
        want_hess: bool,
    ) -> Result<ComponentEstimates> {
        self.check_dim(m_new)?;
        if let Some(mo) = m_old {
            self.check_dim(mo)?;
        }
        if damping.entries.len() != self.components.len() {
            return Err(Error::DimensionMismatch {
                expected: self.components.len(),
                got: damping.entries.len(),
            });
        }
        let mut plans = Vec::with_capacity(self.components.len());
        for (comp, dmp) in self.components.iter().zip(&damping.entries) {
            let terms = comp.spec.contour_terms(dmp)?;
            let k = comp.spec.k();
            let mp = comp.restrict(m_new);
            let mo = m_old.map(|mo| comp.restrict(mo));
            let plan: Vec<TermPlan> = terms
                .into_iter()
                .map(|t| {
                    let c_new =
                        -(k as f64) * LN_2PI + (0..k).map(|j| t.shift[j] * mp[j]).sum::<f64>();
                    let c_diff = mo
                        .as_ref()
                        .map(|mo| (0..k).map(|j| t.shift[j] * (mo[j] - mp[j])).sum())
                        .unwrap_or(0.0);
                    TermPlan { term: t, c_new, c_diff }
                })
                .collect();
            plans.push((mp, mo, plan));
        }
        let n = level.n;
        let per_shift: Vec<Vec<(Complex, Vec<Complex>, Vec<Complex>)>> = (0..level.shifts)
            .into_par_iter()
            .map(|s| {
                self.components
                    .iter()
                    .zip(&plans)
                    .map(|(comp, (mp, mo, plan))| {
                        let k = comp.spec.k();
                        let cube = comp.transform.cube_dim();
                        let net = level.net(cube);
                        let shift = level.shift(cube, s);
                        let mut v = vec![0.0; cube];
                        let mut u = vec![0.0; k];
                        let mut y = vec![0.0; k];
                        let mut z = vec![Complex::new(0.0, 0.0); k];
                        let mut f = vec![Complex::new(0.0, 0.0); k];
                        let mut val = Complex::new(0.0, 0.0);
                        let mut grad = vec![Complex::new(0.0, 0.0); k];
                        let mut hess = vec![Complex::new(0.0, 0.0); if want_hess { k * k } else { 0 }];
                        for i in 0..n {
                            net.shifted_point(i, shift, &mut v);
                            let lnw = comp.transform.map(&v, &mut u, &mut y);
                            for p in plan {
                                let t = &p.term;
                                let mut phase = 0.0;
                                for j in 0..k {
                                    z[j] = Complex::new(u[j], t.shift[j]);
                                    f[j] = Complex::new(t.shift[j], -u[j]);
                                    phase -= u[j] * mp[j];
                                }
                                let lncf = comp.marginal.model.ln_cf_unchecked(&z);
                                let e = Complex::new(p.c_new + lnw, phase) + lncf;
                                let mut h = e.exp() * t.value(&u);
                                if let Some(mo) = mo {
                                    let mut dphase = 0.0;
                                    for j in 0..k {
                                        dphase -= u[j] * (mo[j] - mp[j]);
                                    }
                                    h *= -complex_expm1(Complex::new(p.c_diff, dphase));
                                }
                                val += h;
                                for a in 0..k {
                                    let ha = h * f[a];
                                    grad[a] += ha;
                                    if want_hess {
                                        for b in 0..k {
                                            hess[a * k + b] += ha * f[b];
                                        }
                                    }
                                }
                            }
                        }
                        let inv = 1.0 / n as f64;
                        (
                            val * inv,
                            grad.into_iter().map(|g| g * inv).collect(),
                            hess.into_iter().map(|h| h * inv).collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        let nc = self.components.len();
        let ns = level.shifts;
        let mut imag: f64 = 0.0;
        let mut values = vec![vec![0.0; ns]; nc];
        let mut grads = vec![vec![Vec::new(); ns]; nc];
        let mut hessians = if want_hess { Some(vec![vec![Vec::new(); ns]; nc]) } else { None };
        for (s, comps) in per_shift.into_iter().enumerate() {
            for (c, (val, grad, hess)) in comps.into_iter().enumerate() {
                imag = imag.max(val.im.abs());
                values[c][s] = val.re;
                grads[c][s] = grad.iter().map(|g| g.re).collect();
                if let Some(h) = hessians.as_mut() {
                    h[c][s] = hess.iter().map(|x| x.re).collect();
                }
            }
        }
        let evaluations = (nc * ns * n) as u64;
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Fourier integrand estimate".into()));
        }
        Ok(ComponentEstimates {
            values,
            grads,
            hessians,
            imag_residual: imag,
            evaluations,
        })
    }

    /// Scatters per-component per-shift means into `(∇g, g)` vectors of length `d + 1`.
    pub fn scatter_shift_means(&self, est: &ComponentEstimates) -> Vec<Vec<Vector>> {
        let d = self.dim();
        self.components
            .iter()
            .enumerate()
            .map(|(c, comp)| {
                (0..est.values[c].len())
                    .map(|s| {
                        let mut v = Vector::zeros(d + 1);
                        for (a, &i) in comp.spec.indices.iter().enumerate() {
                            v[i] += est.grads[c][s][a];
                        }
                        v[d] += est.values[c][s];
                        v
                    })
                    .collect()
            })
            .collect()
    }

    fn assemble(
        &self,
        est: ComponentEstimates,
        closed_g: f64,
        closed_grad: f64,
    ) -> KktBlocks {
        let d = self.dim();
        let scattered = self.scatter_shift_means(&est);
        let ns = est.values.first().map_or(0, Vec::len);
        let per_shift: Vec<Vector> = (0..ns)
            .map(|s| {
                let mut v = Vector::zeros(d + 1);
                for comp in &scattered {
                    v += &comp[s];
                }
                for i in 0..d {
                    v[i] += closed_grad;
                }
                v[d] += closed_g;
                v
            })
            .collect();
        let mean = crate::rqmc::mean(&per_shift);
        let hess = est.hessians.as_ref().map(|hs| {
            let mut h = Matrix::zeros(d, d);
            for (comp, hc) in self.components.iter().zip(hs) {
                let k = comp.spec.k();
                for hcs in hc {
                    for a in 0..k {
                        for b in 0..k {
                            h[(comp.spec.indices[a], comp.spec.indices[b])] += hcs[a * k + b];
                        }
                    }
                }
            }
            crate::linalg::symmetrize(&(h / ns as f64))
        });
        KktBlocks {
            g: mean[d],
            grad: Vector::from_iterator(d, (0..d).map(|i| mean[i])),
            hess,
            per_shift,
            imag_residual: est.imag_residual,
            evaluations: est.evaluations,
        }
    }

    /// Single-level surrogate blocks at `m`.
    pub fn evaluate(
        &self,
        m: &[f64],
        damping: &DampingAssignment,
        level: &LevelDesign,
        want_hess: bool,
    ) -> Result<KktBlocks> {
        let est = self.estimate_components(m, None, damping, level, want_hess)?;
        Ok(self.assemble(est, self.closed_form_value(m), -self.linear_coeff))
    }

    /// Difference blocks `F(m_new) − F(m_old)` on one level.
    pub fn evaluate_difference(
        &self,
        m_new: &[f64],
        m_old: &[f64],
        damping: &DampingAssignment,
        level: &LevelDesign,
        want_hess: bool,
    ) -> Result<KktBlocks> {
        let est = self.estimate_components(m_new, Some(m_old), damping, level, want_hess)?;
        let closed = self.closed_form_value(m_new) - self.closed_form_value(m_old);
        Ok(self.assemble(est, closed, 0.0))
    }
}

/// First-order KKT residual `(1 + λ∇g; g)` in the `m`-gradient convention.
pub fn lagrangian_gradient(blocks: &KktBlocks, lambda: f64) -> Result<Vector> {
    if !(lambda >= 0.0) {
        return Err(Error::NonPositiveMultiplier(lambda));
    }
    let d = blocks.grad.len();
    let mut r = Vector::zeros(d + 1);
    for i in 0..d {
        r[i] = 1.0 + lambda * blocks.grad[i];
    }
    r[d] = blocks.g;
    Ok(r)
}

/// Bordered Hessian `[[λ∇²g, ∇g], [∇gᵀ, 0]]`.
pub fn lagrangian_hessian(grad: &Vector, hess: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(lambda >= 0.0) {
        return Err(Error::NonPositiveMultiplier(lambda));
    }
    let d = grad.len();
    let mut j = Matrix::zeros(d + 1, d + 1);
    for a in 0..d {
        for b in 0..d {
            j[(a, b)] = lambda * hess[(a, b)];
        }
        j[(a, d)] = grad[a];
        j[(d, a)] = grad[a];
    }
    Ok(j)
}
