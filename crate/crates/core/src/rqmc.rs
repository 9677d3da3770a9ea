//! Randomized quasi-Monte Carlo designs, level schedules and error assembly.
//!
//! An RQMC estimate averages `S` independent digital shifts of one `N`-point
//! Sobol' net:
//!
//! ```text
//! Q = (1/S) Σ_s Q_s,   Q_s = (1/N) Σ_n f(v_n ⊕ Δ_s),
//! ```
//!
//! and its root-mean-squared error is estimated by `C_α · std_s(Q_s) / √S`.
//! One base net is generated per cube dimension and shared by all blocks of
//! that dimension; shifts are drawn independently per (level, dimension,
//! shift index) from a counter-based seed, so estimates do not depend on
//! thread scheduling.
//!
//! The solution error propagates the per-shift covariance of the KKT
//! residual through the inverse bordered Hessian (sandwich form):
//! `V = J⁻¹ (Σ_l Cov_l / S_l) J⁻¹` and `ε_stat = C_α √(max_i V_ii)`.

use crate::sobol::{DigitalShift, SobolNet};
use crate::{Error, Matrix, Result, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Two-sided 95% normal quantile.
pub const C_ALPHA: f64 = 1.96;

/// Sample sizes and seeds of an RQMC design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RqmcConfig {
    /// Points per shift `N` (power of two).
    pub n: usize,
    /// Number of shifts `S ≥ 2`.
    pub shifts: usize,
    /// Master seed.
    pub seed: u64,
    /// Smallest level size `N_min` (power of two).
    pub n_min: usize,
    /// Assumed RQMC convergence rate `r`.
    pub rate: f64,
    /// Level-size constant `C_loc`.
    pub c_loc: f64,
}

impl Default for RqmcConfig {
    fn default() -> Self {
        Self {
            n: 1 << 11,
            shifts: 32,
            seed: 2024,
            n_min: 1 << 7,
            rate: 1.0,
            c_loc: 1.0,
        }
    }
}

impl RqmcConfig {
    /// Validates the design sizes.
    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() || !self.n_min.is_power_of_two() {
            return Err(Error::InvalidDesign(format!(
                "N = {} and N_min = {} must be powers of two",
                self.n, self.n_min
            )));
        }
        if self.n_min > self.n {
            return Err(Error::InvalidDesign(format!(
                "N_min = {} exceeds N = {}",
                self.n_min, self.n
            )));
        }
        if self.shifts < 2 {
            return Err(Error::InvalidDesign("at least two shifts are needed".into()));
        }
        if !(self.rate > 0.0) || !(self.c_loc > 0.0) {
            return Err(Error::InvalidDesign("rate and C_loc must be positive".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the shift stream for `(seed, level, dim)`.
pub fn stream_seed(seed: u64, level: u64, dim: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ level) ^ dim as u64)
}

/// Shifted nets for one level: a base-net prefix and `S` shifts per cube dimension.
#[derive(Debug, Clone)]
pub struct LevelDesign {
    /// Points per shift used at this level.
    pub n: usize,
    /// Number of shifts.
    pub shifts: usize,
    /// Level index that seeded the shifts.
    pub level: u64,
    nets: BTreeMap<usize, Arc<SobolNet>>,
    shift_sets: BTreeMap<usize, Vec<DigitalShift>>,
}

impl LevelDesign {
    /// Base net of cube dimension `dim`.
    pub fn net(&self, dim: usize) -> &SobolNet {
        &self.nets[&dim]
    }

    /// Shift `s` of cube dimension `dim`.
    pub fn shift(&self, dim: usize, s: usize) -> &DigitalShift {
        &self.shift_sets[&dim][s]
    }
}

/// Net cache and shift factory of an RQMC design.
#[derive(Debug, Clone)]
pub struct RqmcDesign {
    config: RqmcConfig,
    nets: BTreeMap<usize, Arc<SobolNet>>,
}

impl RqmcDesign {
    /// Builds base nets of size `config.n` for every cube dimension in `dims`.
    pub fn new(config: RqmcConfig, dims: &[usize]) -> Result<Self> {
        config.validate()?;
        let mut nets = BTreeMap::new();
        for &d in dims {
            if let std::collections::btree_map::Entry::Vacant(e) = nets.entry(d) {
                e.insert(Arc::new(SobolNet::new(d, config.n)?));
            }
        }
        Ok(Self { config, nets })
    }

    /// The design configuration.
    pub fn config(&self) -> &RqmcConfig {
        &self.config
    }

    /// Level design with `n ≤ N` points per shift and fresh shifts for `level`.
    pub fn level(&self, level: u64, n: usize) -> Result<LevelDesign> {
        if !n.is_power_of_two() || n > self.config.n {
            return Err(Error::InvalidDesign(format!(
                "level size {n} must be a power of two not exceeding {}",
                self.config.n
            )));
        }
        let mut shift_sets = BTreeMap::new();
        for &d in self.nets.keys() {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, level, d));
            let shifts = (0..self.config.shifts)
                .map(|_| DigitalShift::random(d, &mut rng))
                .collect();
            shift_sets.insert(d, shifts);
        }
        Ok(LevelDesign {
            n,
            shifts: self.config.shifts,
            level,
            nets: self.nets.clone(),
            shift_sets,
        })
    }
}

/// Mean and RMSE of a vector-valued RQMC estimate, with per-shift means.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateWithError {
    /// Mean over shifts.
    pub value: Vector,
    /// `C_α · std / √S` per component.
    pub rmse: Vector,
    /// Per-shift means.
    pub per_shift: Vec<Vector>,
}

impl EstimateWithError {
    /// Summarises per-shift means.
    pub fn from_shifts(per_shift: Vec<Vector>) -> Result<Self> {
        let s = per_shift.len();
        if s < 2 {
            return Err(Error::InvalidDesign("at least two shifts are needed".into()));
        }
        let value = mean(&per_shift);
        let cov = covariance(&per_shift);
        let rmse = Vector::from_iterator(
            value.len(),
            (0..value.len()).map(|i| C_ALPHA * (cov[(i, i)].max(0.0) / s as f64).sqrt()),
        );
        Ok(Self {
            value,
            rmse,
            per_shift,
        })
    }
}

/// Mean of a list of vectors (sequential summation in list order).
pub fn mean(samples: &[Vector]) -> Vector {
    let n = samples[0].len();
    let mut acc = Vector::zeros(n);
    for s in samples {
        acc += s;
    }
    acc / samples.len() as f64
}

/// Unbiased sample covariance of a list of vectors.
pub fn covariance(samples: &[Vector]) -> Matrix {
    let n = samples[0].len();
    let mu = mean(samples);
    let mut c = Matrix::zeros(n, n);
    for s in samples {
        let d = s - &mu;
        c += &d * d.transpose();
    }
    c / (samples.len() as f64 - 1.0)
}

/// Covariance of the summed estimate from per-component, per-shift means.
///
/// `components[c][s]` is the mean of component `c` under shift `s`, already
/// scattered to the full output dimension, and `groups` partitions the
/// components into sets that share shifts (one set per cube dimension).
/// Within a group all pairwise covariances are kept; across groups the
/// shifts are independent, so cross terms are dropped.
pub fn grouped_covariance(components: &[Vec<Vector>], groups: &[Vec<usize>]) -> Matrix {
    let n = components[0][0].len();
    let mut total = Matrix::zeros(n, n);
    for g in groups {
        let s = components[g[0]].len();
        let sums: Vec<Vector> = (0..s)
            .map(|si| {
                let mut acc = Vector::zeros(n);
                for &c in g {
                    acc += &components[c][si];
                }
                acc
            })
            .collect();
        total += covariance(&sums);
    }
    total
}

/// Sandwich covariance `V = J⁻¹ C J⁻¹` and `ε_stat = C_α √(max_i V_ii)`.
///
/// `c` is the covariance of the estimated KKT residual (already divided by
/// the number of shifts or samples). Fails with `SingularHessian` when `J` is
/// not invertible.
pub fn assemble_solution_covariance(j: &Matrix, c: &Matrix) -> Result<(Matrix, f64)> {
    let jinv = crate::linalg::inverse(j)
        .ok_or_else(|| Error::SingularHessian("bordered Hessian is not invertible".into()))?;
    let v = &jinv * c * jinv.transpose();
    let v = crate::linalg::symmetrize(&v);
    let md = (0..v.nrows()).map(|i| v[(i, i)]).fold(0.0f64, f64::max);
    if !md.is_finite() {
        return Err(Error::SingularHessian("non-finite sandwich covariance".into()));
    }
    Ok((v, C_ALPHA * md.sqrt()))
}

/// Rounds a positive size to the nearest power of two on the log scale.
pub fn round_pow2(x: f64) -> usize {
    if !(x >= 1.0) {
        return 1;
    }
    let e = x.log2().round();
    1usize << (e as u32).min(62)
}

/// Iteration-indexed level-size schedule.
///
/// Before the optimiser is detected to contract (`j < J_loc`) every level
/// uses `N_1`. Afterwards `N_j = C_loc N_1 η^{2(j−1−J_loc)/(2r+1)}`, rounded
/// to a power of two and clamped to `[N_min, N_1]`. `J_loc` is declared at
/// the first iteration where the step-norm ratio stays below `0.5` twice in a
/// row; `η` is the geometric mean of the ratios observed from then on,
/// clamped to `[0.05, 0.9]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule {
    /// Base size `N_1`.
    pub n1: usize,
    /// Floor `N_min`.
    pub n_min: usize,
    /// Constant `C_loc`.
    pub c_loc: f64,
    /// Rate `r`.
    pub rate: f64,
    /// Contraction estimate `η`.
    pub eta: f64,
    /// Detected local-regime index.
    pub j_loc: Option<usize>,
    step_norms: Vec<f64>,
    below: usize,
    contraction_start: usize,
}

impl LevelSchedule {
    /// New schedule from a design configuration.
    pub fn new(config: &RqmcConfig) -> Self {
        Self {
            n1: config.n,
            n_min: config.n_min,
            c_loc: config.c_loc,
            rate: config.rate,
            eta: 0.5,
            j_loc: None,
            step_norms: Vec::new(),
            below: 0,
            contraction_start: 0,
        }
    }

    /// Schedule with a fixed local index and contraction (no detection).
    pub fn fixed(n1: usize, n_min: usize, c_loc: f64, rate: f64, eta: f64, j_loc: usize) -> Self {
        Self {
            n1,
            n_min,
            c_loc,
            rate,
            eta,
            j_loc: Some(j_loc),
            step_norms: Vec::new(),
            below: 0,
            contraction_start: 0,
        }
    }

    /// Records the step norm `‖Δz_j‖` of an accepted iteration.
    pub fn record_step(&mut self, norm: f64) {
        self.step_norms.push(norm);
        let n = self.step_norms.len();
        if n < 2 {
            return;
        }
        if self.j_loc.is_none() {
            let prev = self.step_norms[n - 2];
            if prev > 0.0 && norm / prev <= 0.5 {
                self.below += 1;
            } else {
                self.below = 0;
            }
            if self.below < 2 {
                return;
            }
            // levels are 1-based: the next level to be built is n + 1
            self.j_loc = Some(n + 1);
            self.contraction_start = n - 2;
        }
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for i in self.contraction_start.max(1)..n {
            let (a, b) = (self.step_norms[i - 1], self.step_norms[i]);
            if a > 0.0 && b > 0.0 {
                acc += (b / a).ln();
                cnt += 1;
            }
        }
        if cnt > 0 {
            self.eta = (acc / cnt as f64).exp().clamp(0.05, 0.9);
        }
    }

    /// Level size `N_j` for the 1-based level `j`.
    pub fn level_size(&self, j: usize) -> usize {
        match self.j_loc {
            Some(jl) if j >= jl => {
                let expo = 2.0 * (j as f64 - 1.0 - jl as f64) / (2.0 * self.rate + 1.0);
                let raw = self.c_loc * self.n1 as f64 * self.eta.powf(expo);
                round_pow2(raw).clamp(self.n_min, self.n1)
            }
            _ => self.n1,
        }
    }
}
