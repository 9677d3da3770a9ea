//! Multivariate loss functions and their blockwise Fourier transforms.
//!
//! Two families are supported:
//!
//! ```text
//! exponential:  ℓ(x) = (1/(1+α)) [Σ_k e^{βx_k} + α e^{β Σ_k x_k}] − (α+d)/(α+1)
//! QPC:          ℓ(x) = Σ_k x_k + ½ Σ_k (x_k⁺)² + α Σ_{j<k} x_j⁺ x_k⁺ − 1
//! ```
//!
//! Each loss splits into interaction blocks `c · f(x_p)` over coordinate
//! subsets `p` plus closed-form linear/constant parts. The blocks that need a
//! Fourier representation are
//!
//! * exponential: `d` singletons `e^{βx_k}/(1+α)` and one coupling block
//!   `α e^{β 1ᵀx}/(1+α)` over all coordinates;
//! * QPC: `d` squares `½ (x_k⁺)²` and `d(d−1)/2` pairs `α x_j⁺ x_k⁺`.
//!
//! # Transform convention
//!
//! The damped transform of a block is `ℓ̂(u + iK) = ∫ e^{−i⟨u,x⟩} e^{⟨K,x⟩} ℓ(x) dx`.
//! For QPC blocks a single shift `K < 0` works and, per coordinate,
//! `∫_0^∞ e^{−iux} e^{Kx} x^θ dx = θ!/(−K + iu)^{θ+1}`.
//!
//! `e^{βx}` is not integrable against any single exponential weight, so each
//! exponential coordinate is split at the origin. The positive half-line uses
//! decay rate `K⁺ > β` (shift `−K⁺`), the negative half-line uses `K⁻ < β`
//! (shift `−K⁻`):
//!
//! ```text
//! ∫_0^∞  e^{−iux} e^{−K⁺x} e^{βx} dx = 1/(K⁺ − β + iu)
//! ∫_−∞^0 e^{−iux} e^{−K⁻x} e^{βx} dx = 1/(β − K⁻ − iu)
//! ```
//!
//! A `k`-dimensional block therefore yields `2^k` *contour terms*, each with
//! its own shift vector `K^s`, which must be used consistently in the
//! prefactor `e^{⟨K^s, m⟩}` and in the characteristic-function argument.

use crate::{Complex, Error, Result};
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Loss family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    /// Entropic-type exponential loss.
    Exponential,
    /// Quadratic pairwise coupling loss.
    Qpc,
}

/// A multivariate loss `ℓ: R^d → R`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    family: LossFamily,
    d: usize,
    alpha: f64,
    beta: f64,
}

/// Role of one block in the loss decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentKind {
    /// `c · e^{β x_k}` (exponential family).
    ExpSingleton,
    /// `c · e^{β 1ᵀ x}` over all coordinates (exponential family).
    ExpCoupling,
    /// `c · (x_k⁺)²` (QPC).
    QpcSquare,
    /// `c · x_j⁺ x_k⁺` (QPC).
    QpcPair,
    /// `c · Σ_k x_k`, handled in closed form.
    LinearClosedForm,
    /// The constant `c`, handled in closed form.
    ConstantClosedForm,
}

/// One block `c · f(x_p)` of the loss decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    /// Block role.
    pub kind: ComponentKind,
    /// Coordinates the block depends on (0-based, strictly increasing).
    pub indices: Vec<usize>,
    /// Coefficient `c`.
    pub coeff: f64,
    /// Exponential risk-aversion `β` (zero for QPC blocks).
    pub beta: f64,
}

/// Contour-shift descriptor for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Damping {
    /// A single shift vector `K` (QPC blocks: `K < 0` componentwise).
    OneSided(Vec<f64>),
    /// Per-coordinate decay rates `K⁻ < β < K⁺` (exponential blocks).
    TwoSided {
        /// Decay rates `K⁻` of the negative half-lines.
        lo: Vec<f64>,
        /// Decay rates `K⁺` of the positive half-lines.
        hi: Vec<f64>,
    },
}

impl Damping {
    /// Number of free parameters.
    pub fn len(&self) -> usize {
        match self {
            Self::OneSided(k) => k.len(),
            Self::TwoSided { lo, hi } => lo.len() + hi.len(),
        }
    }

    /// Whether the descriptor has no parameters.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened parameters (`K`, or `K⁻` followed by `K⁺`).
    pub fn to_params(&self) -> Vec<f64> {
        match self {
            Self::OneSided(k) => k.clone(),
            Self::TwoSided { lo, hi } => lo.iter().chain(hi).copied().collect(),
        }
    }

    /// Inverse of [`Damping::to_params`] with the same layout as `self`.
    pub fn with_params(&self, theta: &[f64]) -> Self {
        match self {
            Self::OneSided(_) => Self::OneSided(theta.to_vec()),
            Self::TwoSided { lo, .. } => {
                let k = lo.len();
                Self::TwoSided {
                    lo: theta[..k].to_vec(),
                    hi: theta[k..].to_vec(),
                }
            }
        }
    }
}

/// Per-coordinate factor of a contour term.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Factor {
    /// `θ! / (−K + iu)^{θ+1}` with `K < 0`.
    Power { theta: u32, k: f64 },
    /// `1 / (a + iu)` with `a = K⁺ − β > 0` (shift `−K⁺`).
    Upper { a: f64 },
    /// `1 / (b − iu)` with `b = β − K⁻ > 0` (shift `−K⁻`).
    Lower { b: f64 },
}

/// One contour term `c · ∏_j f_j(u_j)` of a block transform, with its shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourTerm {
    /// Contour shift `K^s` used in the prefactor and the CF argument.
    pub shift: Vec<f64>,
    /// For each coordinate, `true` when the positive half-line (`K⁺`) is used.
    /// Always `true` for one-sided terms.
    pub upper: Vec<bool>,
    coeff: f64,
    factors: Vec<Factor>,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

impl ContourTerm {
    /// Block dimension `k`.
    pub fn k(&self) -> usize {
        self.factors.len()
    }

    /// `ℓ̂_s(u + iK^s)`.
    #[inline]
    pub fn value(&self, u: &[f64]) -> Complex {
        let mut acc = Complex::new(self.coeff, 0.0);
        for (f, &uj) in self.factors.iter().zip(u) {
            acc *= factor_value(*f, 0, uj);
        }
        acc
    }

    /// Value of the `order`-th derivative factor for coordinate `j` (QPC: E.2-type formula).
    fn factor_with_order(&self, j: usize, order: u32, u: f64) -> Complex {
        factor_value(self.factors[j], order, u)
    }

    /// `ln|ℓ̂_s(iK^s)|` and its gradient with respect to the shift `K^s`.
    pub fn ln_abs_at_origin(&self) -> (f64, Vec<f64>) {
        let mut val = self.coeff.abs().ln();
        let mut grad = Vec::with_capacity(self.k());
        for f in &self.factors {
            match *f {
                Factor::Power { theta, k } => {
                    let t1 = f64::from(theta + 1);
                    val += factorial(theta).ln() - t1 * (-k).ln();
                    grad.push(-t1 / k);
                }
                Factor::Upper { a } => {
                    // shift K = −K⁺, a = −K − β, d/dK ln(1/a) = 1/a
                    val -= a.ln();
                    grad.push(1.0 / a);
                }
                Factor::Lower { b } => {
                    // shift K = −K⁻, b = β + K, d/dK ln(1/b) = −1/b
                    val -= b.ln();
                    grad.push(-1.0 / b);
                }
            }
        }
        (val, grad)
    }
}

#[inline]
fn factor_value(f: Factor, order: u32, u: f64) -> Complex {
    match f {
        Factor::Power { theta, k } => {
            let z = Complex::new(-k, u);
            let e = theta as i32 + 1 - order as i32;
            if e <= 0 {
                // derivative of order θ+1 of x^θ⁺ is θ! δ₀, whose transform is θ!
                Complex::new(factorial(theta), 0.0)
            } else {
                Complex::new(factorial(theta), 0.0) / z.powi(e)
            }
        }
        Factor::Upper { a } => Complex::new(1.0, 0.0) / Complex::new(a, u),
        Factor::Lower { b } => Complex::new(1.0, 0.0) / Complex::new(b, -u),
    }
}

/// Derivative order requested from a block transform.
#[derive(Debug, Clone, PartialEq)]
pub enum Transformed {
    /// `ℓ̂^{(0)}`.
    Value(Complex),
    /// `ℓ̂^{(1)}`, length `k`.
    Gradient(Vec<Complex>),
    /// `ℓ̂^{(2)}`, row-major `k × k`.
    Hessian(Vec<Complex>),
}

/// One contour term of [`fourier_transform_component`].
#[derive(Debug, Clone, PartialEq)]
pub struct TermTransform {
    /// Contour shift `K^s`.
    pub shift: Vec<f64>,
    /// Transformed value.
    pub value: Transformed,
}

impl LossModel {
    /// Exponential loss with systemic weight `α ≥ 0` and risk aversion `β ≥ 0`.
    pub fn exponential(d: usize, alpha: f64, beta: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("loss dimension must be positive".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "exponential loss needs alpha, beta >= 0 (got {alpha}, {beta})"
            )));
        }
        Ok(Self {
            family: LossFamily::Exponential,
            d,
            alpha,
            beta,
        })
    }

    /// QPC loss with coupling weight `α ≥ 0`.
    pub fn qpc(d: usize, alpha: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("loss dimension must be positive".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("QPC loss needs alpha >= 0 (got {alpha})")));
        }
        Ok(Self {
            family: LossFamily::Qpc,
            d,
            alpha,
            beta: 0.0,
        })
    }

    /// Loss family.
    pub fn family(&self) -> LossFamily {
        self.family
    }
    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.d
    }
    /// Systemic weight `α`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    /// Risk aversion `β` (zero for QPC).
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `ℓ(x)`.
    pub fn value<F: Float>(&self, x: &[F]) -> F {
        debug_assert_eq!(x.len(), self.d);
        let a = F::from(self.alpha).unwrap();
        match self.family {
            LossFamily::Exponential => {
                let b = F::from(self.beta).unwrap();
                let mut sum = F::zero();
                let mut tot = F::zero();
                for &xi in x {
                    sum = sum + (b * xi).exp();
                    tot = tot + xi;
                }
                let d = F::from(self.d).unwrap();
                (sum + a * (b * tot).exp()) / (F::one() + a) - (a + d) / (a + F::one())
            }
            LossFamily::Qpc => {
                let mut lin = F::zero();
                let mut sp = F::zero();
                let mut sq = F::zero();
                for &xi in x {
                    lin = lin + xi;
                    let p = xi.max(F::zero());
                    sp = sp + p;
                    sq = sq + p * p;
                }
                let half = F::from(0.5).unwrap();
                lin + half * sq + a * half * (sp * sp - sq) - F::one()
            }
        }
    }

    /// `∇_x ℓ(x)` written into `out` (length `d`).
    pub fn grad_x<F: Float>(&self, x: &[F], out: &mut [F]) {
        let a = F::from(self.alpha).unwrap();
        match self.family {
            LossFamily::Exponential => {
                let b = F::from(self.beta).unwrap();
                let tot = x.iter().fold(F::zero(), |s, &v| s + v);
                let common = a * (b * tot).exp();
                let scale = b / (F::one() + a);
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = scale * ((b * xi).exp() + common);
                }
            }
            LossFamily::Qpc => {
                let sp = x.iter().fold(F::zero(), |s, &v| s + v.max(F::zero()));
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = if xi > F::zero() {
                        F::one() + xi + a * (sp - xi)
                    } else {
                        F::one()
                    };
                }
            }
        }
    }

    /// `∇²_x ℓ(x)` (almost-everywhere second derivative for QPC), row-major `d × d`.
    pub fn hess_x<F: Float>(&self, x: &[F], out: &mut [F]) {
        let d = self.d;
        let a = F::from(self.alpha).unwrap();
        match self.family {
            LossFamily::Exponential => {
                let b = F::from(self.beta).unwrap();
                let tot = x.iter().fold(F::zero(), |s, &v| s + v);
                let scale = b * b / (F::one() + a);
                let common = scale * a * (b * tot).exp();
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = common;
                    }
                    out[i * d + i] = out[i * d + i] + scale * (b * x[i]).exp();
                }
            }
            LossFamily::Qpc => {
                for i in 0..d {
                    let pi = x[i] > F::zero();
                    for j in 0..d {
                        let pj = x[j] > F::zero();
                        out[i * d + j] = if i == j {
                            if pi {
                                F::one()
                            } else {
                                F::zero()
                            }
                        } else if pi && pj {
                            a
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
    }

    /// Block decomposition, including the closed-form linear and constant parts.
    pub fn components(&self) -> Vec<ComponentSpec> {
        let d = self.d;
        let mut out = Vec::new();
        match self.family {
            LossFamily::Exponential => {
                let c1 = 1.0 / (1.0 + self.alpha);
                for i in 0..d {
                    out.push(ComponentSpec {
                        kind: ComponentKind::ExpSingleton,
                        indices: vec![i],
                        coeff: c1,
                        beta: self.beta,
                    });
                }
                if self.alpha > 0.0 {
                    out.push(ComponentSpec {
                        kind: ComponentKind::ExpCoupling,
                        indices: (0..d).collect(),
                        coeff: self.alpha / (1.0 + self.alpha),
                        beta: self.beta,
                    });
                }
                out.push(ComponentSpec {
                    kind: ComponentKind::ConstantClosedForm,
                    indices: Vec::new(),
                    coeff: -(self.alpha + d as f64) / (self.alpha + 1.0),
                    beta: 0.0,
                });
            }
            LossFamily::Qpc => {
                out.push(ComponentSpec {
                    kind: ComponentKind::LinearClosedForm,
                    indices: (0..d).collect(),
                    coeff: 1.0,
                    beta: 0.0,
                });
                for i in 0..d {
                    out.push(ComponentSpec {
                        kind: ComponentKind::QpcSquare,
                        indices: vec![i],
                        coeff: 0.5,
                        beta: 0.0,
                    });
                }
                if self.alpha > 0.0 {
                    for i in 0..d {
                        for j in (i + 1)..d {
                            out.push(ComponentSpec {
                                kind: ComponentKind::QpcPair,
                                indices: vec![i, j],
                                coeff: self.alpha,
                                beta: 0.0,
                            });
                        }
                    }
                }
                out.push(ComponentSpec {
                    kind: ComponentKind::ConstantClosedForm,
                    indices: Vec::new(),
                    coeff: -1.0,
                    beta: 0.0,
                });
            }
        }
        out
    }
}

impl ComponentSpec {
    /// Block dimension `k`.
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Whether the block is integrated in the Fourier domain.
    pub fn is_fourier(&self) -> bool {
        !matches!(
            self.kind,
            ComponentKind::LinearClosedForm | ComponentKind::ConstantClosedForm
        )
    }

    /// Whether the block uses two-sided (exponential) damping.
    pub fn is_two_sided(&self) -> bool {
        matches!(self.kind, ComponentKind::ExpSingleton | ComponentKind::ExpCoupling)
    }

    /// Exponent `θ` of `x⁺` per coordinate for QPC blocks (`a(1) = 2`, `a(2) = 1`).
    pub fn qpc_theta(&self) -> u32 {
        match self.kind {
            ComponentKind::QpcSquare => 2,
            _ => 1,
        }
    }

    /// Block value at the full-dimensional point `x`.
    pub fn block_value<F: Float>(&self, x: &[F]) -> F {
        let c = F::from(self.coeff).unwrap();
        match self.kind {
            ComponentKind::ExpSingleton | ComponentKind::ExpCoupling => {
                let b = F::from(self.beta).unwrap();
                let s = self.indices.iter().fold(F::zero(), |s, &i| s + x[i]);
                c * (b * s).exp()
            }
            ComponentKind::QpcSquare => {
                let p = x[self.indices[0]].max(F::zero());
                c * p * p
            }
            ComponentKind::QpcPair => {
                c * x[self.indices[0]].max(F::zero()) * x[self.indices[1]].max(F::zero())
            }
            ComponentKind::LinearClosedForm => c * self.indices.iter().fold(F::zero(), |s, &i| s + x[i]),
            ComponentKind::ConstantClosedForm => c,
        }
    }

    /// A default damping inside the loss strip, used to start the damping search.
    pub fn default_damping(&self) -> Damping {
        let k = self.k();
        if self.is_two_sided() {
            Damping::TwoSided {
                lo: vec![self.beta - 1.0; k],
                hi: vec![self.beta + 1.0; k],
            }
        } else {
            Damping::OneSided(vec![-1.0; k])
        }
    }

    /// Loss-strip membership with a margin: `K ≤ −margin` for QPC,
    /// `K⁻ ≤ β − margin` and `K⁺ ≥ β + margin` for exponential blocks.
    pub fn in_loss_strip(&self, damping: &Damping, margin: f64) -> bool {
        match (damping, self.is_two_sided()) {
            (Damping::OneSided(k), false) => k.len() == self.k() && k.iter().all(|&v| v <= -margin),
            (Damping::TwoSided { lo, hi }, true) => {
                lo.len() == self.k()
                    && hi.len() == self.k()
                    && lo.iter().all(|&v| v <= self.beta - margin)
                    && hi.iter().all(|&v| v >= self.beta + margin)
            }
            _ => false,
        }
    }

    /// Contour terms of the damped block transform.
    pub fn contour_terms(&self, damping: &Damping) -> Result<Vec<ContourTerm>> {
        if !self.is_fourier() {
            return Err(Error::InvalidParameter(
                "closed-form blocks have no Fourier transform".into(),
            ));
        }
        if !self.in_loss_strip(damping, 0.0) || !strictly_inside(self, damping) {
            return Err(Error::StripViolation(format!(
                "{:?} block with damping {damping:?}",
                self.kind
            )));
        }
        let k = self.k();
        match damping {
            Damping::OneSided(kv) => {
                let theta = self.qpc_theta();
                Ok(vec![ContourTerm {
                    shift: kv.clone(),
                    upper: vec![true; k],
                    coeff: self.coeff,
                    factors: kv.iter().map(|&kj| Factor::Power { theta, k: kj }).collect(),
                }])
            }
            Damping::TwoSided { lo, hi } => {
                let mut terms = Vec::with_capacity(1 << k);
                for mask in 0..(1usize << k) {
                    let mut shift = Vec::with_capacity(k);
                    let mut upper = Vec::with_capacity(k);
                    let mut factors = Vec::with_capacity(k);
                    for j in 0..k {
                        if mask & (1 << j) == 0 {
                            shift.push(-hi[j]);
                            upper.push(true);
                            factors.push(Factor::Upper { a: hi[j] - self.beta });
                        } else {
                            shift.push(-lo[j]);
                            upper.push(false);
                            factors.push(Factor::Lower { b: self.beta - lo[j] });
                        }
                    }
                    terms.push(ContourTerm {
                        shift,
                        upper,
                        coeff: self.coeff,
                        factors,
                    });
                }
                Ok(terms)
            }
        }
    }
}

fn strictly_inside(spec: &ComponentSpec, damping: &Damping) -> bool {
    match damping {
        Damping::OneSided(k) => k.iter().all(|&v| v < 0.0),
        Damping::TwoSided { lo, hi } => {
            lo.iter().all(|&v| v < spec.beta) && hi.iter().all(|&v| v > spec.beta)
        }
    }
}

/// Damped Fourier transform of a block's `ν`-th derivative, per contour term.
///
/// QPC blocks use the closed form `θ!/(−K + iu)^{θ−ν+1}` per coordinate;
/// exponential blocks use the differentiation identity
/// `ℓ̂^{(1)} = −(K − iu) ⊙ ℓ̂^{(0)}`, which for a half-line term is the
/// transform of the derivative of the truncated function (boundary
/// contributions cancel when the terms are summed).
pub fn fourier_transform_component(
    spec: &ComponentSpec,
    nu: u8,
    u: &[f64],
    damping: &Damping,
) -> Result<Vec<TermTransform>> {
    let k = spec.k();
    if u.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: u.len(),
        });
    }
    let terms = spec.contour_terms(damping)?;
    let mut out = Vec::with_capacity(terms.len());
    for t in terms {
        let base = t.value(u);
        let dual: Vec<Complex> = (0..k)
            .map(|j| -Complex::new(t.shift[j], -u[j]))
            .collect();
        let value = match nu {
            0 => Transformed::Value(base),
            1 => {
                if spec.is_two_sided() {
                    Transformed::Gradient(dual.iter().map(|f| f * base).collect())
                } else {
                    Transformed::Gradient(
                        (0..k)
                            .map(|j| {
                                let mut acc = Complex::new(spec.coeff, 0.0);
                                for l in 0..k {
                                    acc *= t.factor_with_order(l, u32::from(l == j), u[l]);
                                }
                                acc
                            })
                            .collect(),
                    )
                }
            }
            2 => {
                let mut h = vec![Complex::new(0.0, 0.0); k * k];
                for a in 0..k {
                    for b in 0..k {
                        h[a * k + b] = if spec.is_two_sided() {
                            dual[a] * dual[b] * base
                        } else {
                            let mut acc = Complex::new(spec.coeff, 0.0);
                            for l in 0..k {
                                let order = u32::from(l == a) + u32::from(l == b);
                                acc *= t.factor_with_order(l, order, u[l]);
                            }
                            acc
                        };
                    }
                }
                Transformed::Hessian(h)
            }
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "derivative order {nu} not supported"
                )))
            }
        };
        out.push(TermTransform {
            shift: t.shift,
            value,
        });
    }
    Ok(out)
}
