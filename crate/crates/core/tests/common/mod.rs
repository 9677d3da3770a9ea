//! Helpers shared by the integration tests: adaptive quadrature oracles and
//! closed-form Gaussian partial moments.

#![allow(dead_code)]

use msrm::presets::Preset;
use msrm::surrogate::SurrogateContext;

/// `∫_a^b f` by tanh-sinh quadrature on `panels` equal sub-intervals.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            quadrature::double_exponential::integrate(&f, lo, lo + h, tol / panels as f64).integral
        })
        .sum()
}

/// `∫∫ f(x, y)` over `[a, b] × [c, d]` by nested [`integrate`].
pub fn integrate_2d(
    f: impl Fn(f64, f64) -> f64,
    (a, b): (f64, f64),
    (c, d): (f64, f64),
    panels: usize,
    tol: f64,
) -> f64 {
    integrate(|x| integrate(|y| f(x, y), c, d, panels, tol), a, b, panels, tol)
}

/// Standard normal CDF by quadrature of the density.
pub fn norm_cdf(x: f64) -> f64 {
    if x < -8.0 {
        return 0.0;
    }
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    integrate(pdf, -12.0, x.min(12.0), 8, 1e-15)
}

/// `E[(Z)^+]` and `E[(Z^+)^2]` for `Z ~ N(a, s²)`.
pub fn gaussian_positive_moments(a: f64, s: f64) -> (f64, f64) {
    let t = a / s;
    let cdf = norm_cdf(t);
    let pdf = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let first = a * cdf + s * pdf;
    let second = (a * a + s * s) * cdf + a * s * pdf;
    (first, second)
}

/// Surrogate context of a preset.
pub fn context(p: &Preset) -> SurrogateContext {
    SurrogateContext::new(p.loss.clone(), p.factors.clone(), p.transform.clone(), p.damping.clone())
        .expect("preset context")
}

/// Maximum absolute difference of two slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
