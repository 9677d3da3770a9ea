//! Maps from the unit cube to the Fourier domain.
//!
//! A block integral `∫_{R^k} h(u) du` is rewritten as an expectation over a
//! reference density `ψ` on `R^k` and then pushed to the cube:
//!
//! * **Gaussian reference** (`ψ = N(0, Σ̃)`): `u = L̃ Ψ⁻¹(v)` for `v ∈ (0,1)^k`
//!   and the weight is `1/ψ(u) = (2π)^{k/2} |det L̃| e^{|y|²/2}`.
//! * **Normal variance mixture** (NIG risk factors): an extra coordinate
//!   `v_{k+1}` yields `w = −ln(1 − v_{k+1}) ~ Exp(1)`, then `u = √w L̃ y` with
//!   `y = Ψ⁻¹(v_{1:k})`. The marginal law of `u` is a symmetric multivariate
//!   Laplace distribution with density
//!   `ψ(u) = 2 (2π)^{−k/2} |det L̃|⁻¹ (r²/2)^{ν/2} K_ν(√2 r)`, where
//!   `r = |L̃⁻¹u| = √w |y|` and `ν = 1 − k/2`, and the default weight is
//!   `1/ψ(u)` ([`MixtureWeight::Marginal`]). Its tails decay like
//!   `e^{−δ √(uᵀΓu) / √c}`, slower than the NIG characteristic function, so
//!   the weighted integrand is bounded.
//!
//!   Dividing instead by the conditional density `N(0, wΣ̃)` gives the weight
//!   `w^{k/2} |det L̃| (2π)^{k/2} e^{|y|²/2}` ([`MixtureWeight::Conditional`]).
//!   That estimator is also unbiased, but its second moment
//!   `∫∫ h(u)² e^{uᵀΣ̃⁻¹u/(2w)} … du dw` diverges for every `w`, so its
//!   variance is infinite. It is kept for comparison only.
//!
//! The shape matrix `Σ̃` is `c Σ⁻¹` (Gaussian) or `(2c/δ²) Γ⁻¹` (NIG), with
//! `c > 1` so that the transformed integrand stays bounded at the cube faces.
//! All weights are returned in log form so that the integrand exponent can
//! be assembled in one complex exponential.

use crate::linalg::{cholesky_lower, spd_inverse};
use crate::risk_factors::{MarginalModel, RiskFactorModel};
use crate::special::{inv_norm_cdf, ln_bessel_k, LN_2PI};
use crate::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

/// Transform settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    /// Shape scaling `c > 1`.
    pub c_scale: f64,
    /// Amplitude threshold `ξ` of the oscillation diagnostic.
    pub xi_threshold: f64,
    /// Weight rule of the normal-variance-mixture reference.
    pub mixture_weight: MixtureWeight,
}

/// Weight rule of the normal-variance-mixture reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureWeight {
    /// Divide by the marginal (multivariate Laplace) density; finite variance.
    #[default]
    Marginal,
    /// Divide by the conditional Gaussian density; unbiased but with
    /// infinite variance.
    Conditional,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            c_scale: 6.0,
            xi_threshold: 1e-8,
            mixture_weight: MixtureWeight::Marginal,
        }
    }
}

impl TransformConfig {
    /// Defaults for Gaussian risk factors (`c = 6`).
    pub fn gaussian() -> Self {
        Self::default()
    }

    /// Defaults for NIG risk factors (`c = 8`).
    pub fn nig() -> Self {
        Self {
            c_scale: 8.0,
            ..Self::default()
        }
    }

    /// Validates `c > 1` and `0 < ξ < 1`.
    pub fn validate(&self) -> Result<()> {
        if !(self.c_scale > 1.0) || !self.c_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "transform scale c must exceed 1 (got {})",
                self.c_scale
            )));
        }
        if !(self.xi_threshold > 0.0 && self.xi_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "oscillation threshold must lie in (0, 1) (got {})",
                self.xi_threshold
            )));
        }
        Ok(())
    }
}

/// Shape matrix `Σ̃` and its lower Cholesky factor `L̃`.
pub fn shape_matrix(marginal: &MarginalModel, config: &TransformConfig) -> Result<(Matrix, Matrix)> {
    config.validate()?;
    let c = config.c_scale;
    let sigma_t = match &marginal.model {
        RiskFactorModel::Gaussian(g) => spd_inverse(g.sigma(), "marginal covariance")? * c,
        RiskFactorModel::Nig(n) => {
            spd_inverse(n.gamma_matrix(), "marginal shape matrix")? * (2.0 * c / (n.delta() * n.delta()))
        }
    };
    let l = cholesky_lower(&sigma_t, "transform shape matrix")?;
    Ok((sigma_t, l))
}

/// Reference family of a [`DomainTransform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceFamily {
    /// Gaussian reference on `(0,1)^k`.
    Gaussian,
    /// Normal variance mixture on `(0,1)^{k+1}`.
    NormalMixture(MixtureWeight),
}

/// Change of variables from the unit cube to the Fourier domain of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTransform {
    family: ReferenceFamily,
    k: usize,
    l: Matrix,
    ln_det: f64,
    ln_const: f64,
}

impl DomainTransform {
    /// Builds the transform for a block marginal.
    pub fn for_marginal(marginal: &MarginalModel, config: &TransformConfig) -> Result<Self> {
        let (_, l) = shape_matrix(marginal, config)?;
        let k = marginal.k();
        let ln_det: f64 = (0..k).map(|i| l[(i, i)].abs().ln()).sum();
        let family = match marginal.model {
            RiskFactorModel::Gaussian(_) => ReferenceFamily::Gaussian,
            RiskFactorModel::Nig(_) => ReferenceFamily::NormalMixture(config.mixture_weight),
        };
        Ok(Self {
            family,
            k,
            l,
            ln_det,
            ln_const: 0.5 * k as f64 * LN_2PI + ln_det,
        })
    }

    /// Reference family.
    pub fn family(&self) -> ReferenceFamily {
        self.family
    }

    /// Block dimension `k`.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Cube dimension (`k`, or `k + 1` for the mixture reference).
    pub fn cube_dim(&self) -> usize {
        match self.family {
            ReferenceFamily::Gaussian => self.k,
            ReferenceFamily::NormalMixture(_) => self.k + 1,
        }
    }

    /// `ln((2π)^{k/2} |det L̃|)`: the log weight of the Gaussian reference at
    /// the origin, used as the amplitude scale of the transformed integrand.
    pub fn ln_scale(&self) -> f64 {
        self.ln_const
    }

    /// Lower Cholesky factor `L̃`.
    pub fn l_tilde(&self) -> &Matrix {
        &self.l
    }

    /// Maps `v ∈ (0,1)^{cube_dim}` to `u ∈ R^k` and returns the log weight.
    ///
    /// `y` is scratch of length `k`. Points on the cube faces are clamped by
    /// the inverse normal CDF and never produce non-finite values.
    #[inline]
    pub fn map(&self, v: &[f64], u: &mut [f64], y: &mut [f64]) -> f64 {
        let k = self.k;
        let mut sq = 0.0;
        for j in 0..k {
            y[j] = inv_norm_cdf(v[j]);
            sq += y[j] * y[j];
        }
        let (scale, ln_weight) = match self.family {
            ReferenceFamily::Gaussian => (1.0, self.ln_const + 0.5 * sq),
            ReferenceFamily::NormalMixture(rule) => {
                let vk = v[k].clamp(crate::special::V_MIN, crate::special::V_MAX);
                let w = -(-vk).ln_1p();
                let lw = match rule {
                    MixtureWeight::Conditional => self.ln_const + 0.5 * sq + 0.5 * k as f64 * w.ln(),
                    MixtureWeight::Marginal => self.ln_det - ln_laplace_density(k, (w * sq).sqrt()),
                };
                (w.sqrt(), lw)
            }
        };
        for a in 0..k {
            let mut acc = 0.0;
            for b in 0..=a {
                acc += self.l[(a, b)] * y[b];
            }
            u[a] = scale * acc;
        }
        ln_weight
    }
}

/// Log density of the standard symmetric `k`-variate Laplace law
/// (`Exp(1)`-mixed `N(0, wI)`) at radius `r`.
fn ln_laplace_density(k: usize, r: f64) -> f64 {
    let kf = k as f64;
    if k == 1 {
        return -0.5 * std::f64::consts::LN_2 - std::f64::consts::SQRT_2 * r;
    }
    let r = r.max(1e-300);
    let nu = 1.0 - 0.5 * kf;
    std::f64::consts::LN_2 - 0.5 * kf * LN_2PI + 0.5 * nu * (0.5 * r * r).ln()
        + ln_bessel_k(nu, std::f64::consts::SQRT_2 * r)
}

/// Estimated number of oscillations of a transformed block integrand near a
/// cube face.
///
/// The integrand phase is `⟨u, m⟩`; along the direction `r = m/|m|` the
/// envelope `|h(u)|/ψ(u)` stays above `ξ` up to a radius `U*` set by the
/// decay of the characteristic function: `√(2 ln(A/ξ) / λ_min(Σ))` for the
/// Gaussian and `ln(A/ξ) / (δ √λ_min(Γ))` for the NIG, where `A` is the
/// integrand amplitude at the cube centre. The count is `|m| U* / (2π)`,
/// which grows with the square root of `ln(1/ξ)` for Gaussian factors and
/// linearly for NIG factors.
pub fn oscillation_diagnostic(
    marginal: &MarginalModel,
    m: &[f64],
    amplitude: f64,
    config: &TransformConfig,
) -> Result<f64> {
    config.validate()?;
    let mn = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if mn == 0.0 {
        return Ok(0.0);
    }
    let ratio = (amplitude / config.xi_threshold).max(1.0);
    let lmin = crate::linalg::min_eigenvalue_sym(marginal.model.dispersion());
    if !(lmin > 0.0) {
        return Err(Error::SingularCovariance(
            "degenerate envelope: dispersion has a non-positive eigenvalue".into(),
        ));
    }
    let radius = match &marginal.model {
        RiskFactorModel::Gaussian(_) => (2.0 * ratio.ln() / lmin).sqrt(),
        RiskFactorModel::Nig(n) => ratio.ln() / (n.delta() * lmin.sqrt()),
    };
    Ok(mn * radius / (2.0 * std::f64::consts::PI))
}
