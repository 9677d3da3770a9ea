//! Multivariate shortfall risk allocation with Fourier-domain surrogates.
//!
//! A multivariate shortfall risk measure assigns to a loss vector `X ∈ R^d`
//! the smallest total capital `Σ m_k` such that the allocation `m` makes the
//! expected penalised residual loss acceptable:
//!
//! ```text
//! R(X) = inf { Σ_k m_k : g(m) := E[ℓ(X − m)] ≤ 0 }.
//! ```
//!
//! The optimal allocation solves the first-order system `1 + λ ∇g(m) = 0`,
//! `g(m) = 0` with `λ > 0`. This crate evaluates `g`, `∇g` and `∇²g` through
//! damped Fourier representations of the loss blocks, integrates them with
//! randomized quasi-Monte Carlo on Sobol' nets after a density-driven change
//! of variables, and drives a BFGS-SQP iteration on the resulting surrogates.
//! Sample-average and stochastic-approximation baselines operate in physical
//! space for benchmarking.
//!
//! Module map:
//!
//! * [`risk_factors`] — Gaussian and NIG loss vectors, extended characteristic
//!   functions, marginals and sampling.
//! * [`loss`] — exponential and quadratic-pairwise-coupling (QPC) losses, their
//!   block decomposition and block Fourier transforms.
//! * [`damping`] — contour-shift selection by minimising the log-peak objective.
//! * [`transform`] — maps from the unit cube to the Fourier domain.
//! * [`sobol`] / [`rqmc`] — digital nets, digital shifts, level schedules and
//!   error assembly.
//! * [`surrogate`] — component integrands and KKT block estimates.
//! * [`solver`] — SQP with BFGS curvature and statistical-error reporting.
//! * [`baselines`] — SAA and SA reference solvers.
//! * [`presets`] — the three reference experiments.
//!
//! # Scalar type
//!
//! Pointwise real-valued kernels (the inverse normal CDF, normal density and
//! loss evaluation) are generic over [`num_traits::Float`], so they can be
//! used with `f32` or `f64`. Everything that touches complex arithmetic,
//! dense linear algebra or the RQMC accumulators is fixed to [`Real`] (`f64`):
//! the statistical error estimates and Fourier damping rely on double
//! precision dynamic range.

pub mod baselines;
pub mod damping;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod presets;
pub mod risk_factors;
pub mod rqmc;
pub mod sobol;
pub mod solver;
pub mod special;
pub mod surrogate;
pub mod transform;

/// Real scalar used by the numerical core.
pub type Real = f64;
/// Complex scalar used by Fourier integrands.
pub type Complex = num_complex::Complex<f64>;
/// Dense real vector.
pub type Vector = nalgebra::DVector<f64>;
/// Dense real matrix.
pub type Matrix = nalgebra::DMatrix<f64>;

pub use error::{Error, Result};
