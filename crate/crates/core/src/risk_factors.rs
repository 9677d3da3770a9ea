//! Laws of the loss vector `X`: multivariate Gaussian and normal inverse
//! Gaussian (NIG).
//!
//! Both families admit closed-form *extended* characteristic functions
//! `Φ(y) = E[exp(i⟨y, X⟩)]` for complex arguments `y = u + iK` inside a strip
//! of analyticity, which is what the Fourier surrogates integrate against:
//!
//! ```text
//! Gaussian:  Φ(y) = exp(i yᵀμ − ½ yᵀΣy)                                  (all K)
//! NIG:       Φ(y) = exp(i yᵀμ + δ(γ − sqrt(α² − (β + iy)ᵀΓ(β + iy))))
//!            γ = sqrt(α² − βᵀΓβ),   strip: α² − (β − K)ᵀΓ(β − K) > 0
//! ```
//!
//! Marginals over a coordinate subset `p` stay in the same family. For the NIG
//! the marginal shape matrix is renormalised to unit determinant,
//! `Γ_p = det(Γ₁₁)^{-1/k} Γ₁₁`, and the remaining parameters are rescaled so
//! that `Φ_{X_p}(u) = Φ_X(Pᵀu)` holds exactly (see [`NigMarginalScaling`]).

use crate::linalg::{cholesky_lower, matrix_from_rows, submatrix, subvector};
use crate::{Complex, Error, Matrix, Result, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};

/// Multivariate normal law `N(μ, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mu: Vector,
    sigma: Matrix,
    chol: Matrix,
}

impl GaussianModel {
    /// Builds the model; `Σ` must be symmetric positive definite.
    pub fn new(mu: Vector, sigma: Matrix) -> Result<Self> {
        if sigma.nrows() != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: sigma.nrows(),
            });
        }
        let chol = cholesky_lower(&sigma, "Sigma")?;
        Ok(Self { mu, sigma, chol })
    }

    /// Builds the model from plain rows.
    pub fn from_rows(mu: &[f64], sigma: &[Vec<f64>]) -> Result<Self> {
        Self::new(Vector::from_column_slice(mu), matrix_from_rows(sigma)?)
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Mean vector `μ`.
    pub fn mu(&self) -> &Vector {
        &self.mu
    }

    /// Covariance `Σ`.
    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    /// Lower Cholesky factor of `Σ`.
    pub fn cholesky(&self) -> &Matrix {
        &self.chol
    }
}

/// Multivariate NIG law `NIG_d(α, β, δ, μ, Γ)`.
///
/// Mixture representation: `X | W = w ~ N(μ + wΓβ, wΓ)` with
/// `W ~ IG(mean δ/γ, shape δ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NigModel {
    alpha: f64,
    beta: Vector,
    delta: f64,
    mu: Vector,
    gamma_mat: Matrix,
    gamma: f64,
    chol: Matrix,
}

impl NigModel {
    /// Builds the model, checking `Γ ≻ 0`, `δ > 0`, `α > 0` and `α² > βᵀΓβ`.
    pub fn new(alpha: f64, beta: Vector, delta: f64, mu: Vector, gamma_mat: Matrix) -> Result<Self> {
        let d = mu.len();
        if beta.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: beta.len(),
            });
        }
        if gamma_mat.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: gamma_mat.nrows(),
            });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("NIG alpha must be positive, got {alpha}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("NIG delta must be positive, got {delta}")));
        }
        let chol = cholesky_lower(&gamma_mat, "Gamma")?;
        let q = beta.dot(&(&gamma_mat * &beta));
        let rad = alpha * alpha - q;
        if rad <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "NIG admissibility alpha^2 > beta'Gamma beta violated ({} <= {q})",
                alpha * alpha
            )));
        }
        Ok(Self {
            alpha,
            beta,
            delta,
            mu,
            gamma_mat,
            gamma: rad.sqrt(),
            chol,
        })
    }

    /// Builds the model from plain slices.
    pub fn from_rows(alpha: f64, beta: &[f64], delta: f64, mu: &[f64], gamma: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            alpha,
            Vector::from_column_slice(beta),
            delta,
            Vector::from_column_slice(mu),
            matrix_from_rows(gamma)?,
        )
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
    /// Tail parameter `α`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    /// Skewness vector `β`.
    pub fn beta(&self) -> &Vector {
        &self.beta
    }
    /// Scale `δ`.
    pub fn delta(&self) -> f64 {
        self.delta
    }
    /// Location `μ`.
    pub fn mu(&self) -> &Vector {
        &self.mu
    }
    /// Shape matrix `Γ`.
    pub fn gamma_matrix(&self) -> &Matrix {
        &self.gamma_mat
    }
    /// `γ = sqrt(α² − βᵀΓβ)`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    /// Lower Cholesky factor of `Γ`.
    pub fn cholesky(&self) -> &Matrix {
        &self.chol
    }

    /// Strip radicand `α² − (β − K)ᵀΓ(β − K)`; the strip is where it is positive.
    pub fn strip_radicand(&self, k: &[f64]) -> f64 {
        let b = Vector::from_iterator(self.dim(), self.beta.iter().zip(k).map(|(b, k)| b - k));
        self.alpha * self.alpha - b.dot(&(&self.gamma_mat * &b))
    }
}

/// How the NIG marginal is rescaled after fixing `Γ_p = det(Γ₁₁)^{-1/k}Γ₁₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NigMarginalScaling {
    /// `δ_p = det(Γ₁₁)^{1/(2k)} δ` — keeps `δ²Γ` and hence the CF invariant.
    ProductInvariant,
    /// `δ_p = det(Γ₁₁)^{1/2} δ` — agrees with the invariant form only for `k = 1`.
    SquareRootDeterminant,
}

/// Law of the loss vector.
#[derive(Debug, Clone, PartialEq)]
pub enum RiskFactorModel {
    /// Multivariate normal.
    Gaussian(GaussianModel),
    /// Multivariate normal inverse Gaussian.
    Nig(NigModel),
}

/// Marginal law of `X_p = P_p X` for a strictly increasing index tuple `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalModel {
    /// Selected coordinates (0-based, strictly increasing).
    pub indices: Vec<usize>,
    /// Law of the selected sub-vector, in the parent's family.
    pub model: RiskFactorModel,
}

impl MarginalModel {
    /// Subset size `k`.
    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

impl RiskFactorModel {
    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Nig(n) => n.dim(),
        }
    }

    /// `E[X]`: `μ` for the Gaussian, `μ + δΓβ/γ` for the NIG.
    pub fn mean(&self) -> Vector {
        match self {
            Self::Gaussian(g) => g.mu.clone(),
            Self::Nig(n) => &n.mu + (&n.gamma_mat * &n.beta) * (n.delta / n.gamma),
        }
    }

    /// Dispersion matrix used as damping weight: `Σ` or `Γ`.
    pub fn dispersion(&self) -> &Matrix {
        match self {
            Self::Gaussian(g) => &g.sigma,
            Self::Nig(n) => &n.gamma_mat,
        }
    }

    /// Whether the damping vector `K` lies in the CF strip (strictly).
    pub fn in_strip(&self, k: &[f64]) -> bool {
        match self {
            Self::Gaussian(_) => k.iter().all(|x| x.is_finite()),
            Self::Nig(n) => n.strip_radicand(k) > 0.0,
        }
    }

    /// `ln Φ(y)` for complex `y` (principal branch for the NIG square root).
    pub fn ln_extended_cf(&self, y: &[Complex]) -> Result<Complex> {
        let d = self.dim();
        if y.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: y.len(),
            });
        }
        let i = Complex::i();
        match self {
            Self::Gaussian(g) => {
                let mut lin = Complex::new(0.0, 0.0);
                let mut quad = Complex::new(0.0, 0.0);
                for a in 0..d {
                    lin += y[a] * g.mu[a];
                    for b in 0..d {
                        quad += y[a] * g.sigma[(a, b)] * y[b];
                    }
                }
                Ok(i * lin - 0.5 * quad)
            }
            Self::Nig(n) => {
                let k: Vec<f64> = y.iter().map(|z| z.im).collect();
                if n.strip_radicand(&k) <= 0.0 {
                    return Err(Error::StripViolation(format!(
                        "NIG radicand non-positive at K = {k:?}"
                    )));
                }
                let mut lin = Complex::new(0.0, 0.0);
                let mut quad = Complex::new(0.0, 0.0);
                let w: Vec<Complex> = (0..d).map(|a| n.beta[a] + i * y[a]).collect();
                for a in 0..d {
                    lin += y[a] * n.mu[a];
                    for b in 0..d {
                        quad += w[a] * n.gamma_mat[(a, b)] * w[b];
                    }
                }
                let rad = n.alpha * n.alpha - quad;
                if rad.re <= 0.0 {
                    return Err(Error::StripViolation(
                        "NIG radicand crossed the branch cut".to_string(),
                    ));
                }
                Ok(i * lin + n.delta * (n.gamma - rad.sqrt()))
            }
        }
    }

    /// `ln Φ(y)` without dimension or strip checks, for hot integration loops.
    ///
    /// The caller guarantees `y.len() == dim()` and, for the NIG, that
    /// `Im y` lies in the strip; then the radicand has positive real part for
    /// every real part of `y` and the principal square root is continuous.
    #[inline]
    pub fn ln_cf_unchecked(&self, y: &[Complex]) -> Complex {
        let d = y.len();
        let i = Complex::i();
        match self {
            Self::Gaussian(g) => {
                let mut lin = Complex::new(0.0, 0.0);
                let mut quad = Complex::new(0.0, 0.0);
                for a in 0..d {
                    lin += y[a] * g.mu[a];
                    let mut row = Complex::new(0.0, 0.0);
                    for b in 0..d {
                        row += y[b] * g.sigma[(a, b)];
                    }
                    quad += y[a] * row;
                }
                i * lin - 0.5 * quad
            }
            Self::Nig(n) => {
                let mut lin = Complex::new(0.0, 0.0);
                let mut quad = Complex::new(0.0, 0.0);
                for a in 0..d {
                    lin += y[a] * n.mu[a];
                    let wa = n.beta[a] + i * y[a];
                    let mut row = Complex::new(0.0, 0.0);
                    for b in 0..d {
                        row += (n.beta[b] + i * y[b]) * n.gamma_mat[(a, b)];
                    }
                    quad += wa * row;
                }
                i * lin + n.delta * (n.gamma - (n.alpha * n.alpha - quad).sqrt())
            }
        }
    }

    /// Extended characteristic function `Φ(y) = E[exp(i⟨y, X⟩)]`.
    pub fn extended_cf(&self, y: &[Complex]) -> Result<Complex> {
        Ok(self.ln_extended_cf(y)?.exp())
    }

    /// `ln Φ(iK) = ln E[exp(−⟨K, X⟩)]` and its gradient in `K`.
    ///
    /// This is the real-valued log moment generating function that enters the
    /// damping objective.
    pub fn ln_cf_on_imaginary_axis(&self, k: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        if k.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: k.len(),
            });
        }
        let kv = Vector::from_column_slice(k);
        match self {
            Self::Gaussian(g) => {
                let sk = &g.sigma * &kv;
                let val = -kv.dot(&g.mu) + 0.5 * kv.dot(&sk);
                let grad = (sk - &g.mu).iter().copied().collect();
                Ok((val, grad))
            }
            Self::Nig(n) => {
                let b = &n.beta - &kv;
                let gb = &n.gamma_mat * &b;
                let rad = n.alpha * n.alpha - b.dot(&gb);
                if rad <= 0.0 {
                    return Err(Error::StripViolation(format!(
                        "NIG radicand {rad} non-positive at K = {k:?}"
                    )));
                }
                let s = rad.sqrt();
                let val = -kv.dot(&n.mu) + n.delta * (n.gamma - s);
                // d/dK sqrt(α² − (β−K)ᵀΓ(β−K)) = Γ(β−K)/s
                let grad = (0..d).map(|a| -n.mu[a] - n.delta * gb[a] / s).collect();
                Ok((val, grad))
            }
        }
    }

    /// Marginal law of the coordinates `indices` (product-invariant NIG scaling).
    pub fn marginal(&self, indices: &[usize]) -> Result<MarginalModel> {
        self.marginal_with(indices, NigMarginalScaling::ProductInvariant)
    }

    /// Marginal law with an explicit NIG scaling convention.
    pub fn marginal_with(&self, indices: &[usize], scaling: NigMarginalScaling) -> Result<MarginalModel> {
        let d = self.dim();
        let valid = !indices.is_empty()
            && indices.windows(2).all(|w| w[0] < w[1])
            && indices.iter().all(|&i| i < d);
        if !valid {
            return Err(Error::InvalidIndexTuple {
                indices: indices.to_vec(),
                dim: d,
            });
        }
        let model = match self {
            Self::Gaussian(g) => Self::Gaussian(GaussianModel::new(
                subvector(&g.mu, indices),
                submatrix(&g.sigma, indices, indices),
            )?),
            Self::Nig(n) => Self::Nig(nig_marginal(n, indices, scaling)?),
        };
        Ok(MarginalModel {
            indices: indices.to_vec(),
            model,
        })
    }

    /// Draws `n` i.i.d. samples as an `n × d` matrix, deterministically from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Matrix {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampler = self.sampler();
        let mut out = Matrix::zeros(n, d);
        let mut row = vec![0.0; d];
        for i in 0..n {
            sampler.draw(&mut rng, &mut row);
            for j in 0..d {
                out[(i, j)] = row[j];
            }
        }
        out
    }

    /// A streaming sampler, for drawing long sequences without materialising them.
    pub fn sampler(&self) -> Sampler {
        match self {
            Self::Gaussian(g) => Sampler {
                mu: g.mu.iter().copied().collect(),
                chol: g.chol.clone(),
                drift: vec![0.0; g.dim()],
                mixing: None,
                z: vec![0.0; g.dim()].into(),
            },
            Self::Nig(n) => Sampler {
                mu: n.mu.iter().copied().collect(),
                chol: n.chol.clone(),
                drift: (&n.gamma_mat * &n.beta).iter().copied().collect(),
                mixing: Some(
                    InverseGaussian::new(n.delta / n.gamma, n.delta * n.delta)
                        .expect("IG parameters positive by construction"),
                ),
                z: vec![0.0; n.dim()].into(),
            },
        }
    }
}

/// Streaming sampler returned by [`RiskFactorModel::sampler`].
#[derive(Debug, Clone)]
pub struct Sampler {
    mu: Vec<f64>,
    chol: Matrix,
    drift: Vec<f64>,
    mixing: Option<InverseGaussian<f64>>,
    z: std::cell::RefCell<Vec<f64>>,
}

impl Sampler {
    /// Writes one draw of `X` into `out` (length `d`).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.mu.len();
        let mut z = self.z.borrow_mut();
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let w = match &self.mixing {
            Some(ig) => ig.sample(rng),
            None => 1.0,
        };
        let sw = w.sqrt();
        let drift_scale = if self.mixing.is_some() { w } else { 0.0 };
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..=a {
                acc += self.chol[(a, b)] * z[b];
            }
            out[a] = self.mu[a] + drift_scale * self.drift[a] + sw * acc;
        }
    }
}

fn nig_marginal(n: &NigModel, p: &[usize], scaling: NigMarginalScaling) -> Result<NigModel> {
    let d = n.dim();
    let k = p.len();
    let q: Vec<usize> = (0..d).filter(|i| !p.contains(i)).collect();
    let g11 = submatrix(&n.gamma_mat, p, p);
    let b1 = subvector(&n.beta, p);
    let mu1 = subvector(&n.mu, p);
    let g11_inv = crate::linalg::spd_inverse(&g11, "Gamma_11")?;
    let (beta_m, schur_q) = if q.is_empty() {
        (b1, 0.0)
    } else {
        let g12 = submatrix(&n.gamma_mat, p, &q);
        let g22 = submatrix(&n.gamma_mat, &q, &q);
        let b2 = subvector(&n.beta, &q);
        let beta_m = &b1 + &g11_inv * (&g12 * &b2);
        let schur = &g22 - g12.transpose() * &g11_inv * &g12;
        (beta_m, b2.dot(&(&schur * &b2)))
    };
    let det = g11.determinant();
    if det <= 0.0 {
        return Err(Error::SingularCovariance("Gamma_11 determinant non-positive".into()));
    }
    let kf = k as f64;
    let gamma_m = &g11 * det.powf(-1.0 / kf);
    let alpha_sq = n.alpha * n.alpha - schur_q;
    if alpha_sq <= 0.0 {
        return Err(Error::InvalidParameter("marginal NIG alpha^2 non-positive".into()));
    }
    let alpha_m = det.powf(-1.0 / (2.0 * kf)) * alpha_sq.sqrt();
    let delta_m = match scaling {
        NigMarginalScaling::ProductInvariant => det.powf(1.0 / (2.0 * kf)) * n.delta,
        NigMarginalScaling::SquareRootDeterminant => det.sqrt() * n.delta,
    };
    NigModel::new(alpha_m, beta_m, delta_m, mu1, gamma_m)
}
