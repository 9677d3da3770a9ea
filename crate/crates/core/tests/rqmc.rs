mod common;

use msrm::presets;
use msrm::rqmc::{
    assemble_solution_covariance, covariance, grouped_covariance, EstimateWithError, LevelSchedule, RqmcConfig,
    RqmcDesign,
};
use msrm::sobol::{DigitalShift, SobolNet, BITS};
use msrm::surrogate::SurrogateContext;
use msrm::{Error, Matrix, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn design(ctx: &SurrogateContext, n: usize, shifts: usize, seed: u64) -> RqmcDesign {
    RqmcDesign::new(RqmcConfig { n, shifts, seed, n_min: 1, ..RqmcConfig::default() }, &ctx.cube_dims()).unwrap()
}

/// Shifted-net estimate of `∫ f` with `shifts` independent shifts.
fn shifted_estimate(f: impl Fn(&[f64]) -> f64, dim: usize, n: usize, shifts: usize, seed: u64) -> EstimateWithError {
    let net = SobolNet::new(dim, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; dim];
    let per_shift = (0..shifts)
        .map(|_| {
            let s = DigitalShift::random(dim, &mut rng);
            let sum: f64 = (0..n)
                .map(|i| {
                    net.shifted_point(i, &s, &mut x);
                    f(&x)
                })
                .sum();
            Vector::from_element(1, sum / n as f64)
        })
        .collect();
    EstimateWithError::from_shifts(per_shift).unwrap()
}

#[test]
fn first_coordinate_of_a_small_net() {
    let net = SobolNet::new(1, 4).unwrap();
    let mut x = [0.0];
    let pts: Vec<f64> = (0..4)
        .map(|i| {
            net.point(i, &mut x);
            x[0]
        })
        .collect();
    assert_eq!(pts, vec![0.0, 0.5, 0.75, 0.25]);
}

#[test]
fn one_dimensional_projections_are_stratified() {
    let n = 1 << 10;
    let net = SobolNet::new(10, n).unwrap();
    let mut x = vec![0.0; 10];
    for j in 0..10 {
        let mut cells = vec![false; n];
        for i in 0..n {
            net.point(i, &mut x);
            let c = (x[j] * n as f64) as usize;
            assert!(!cells[c], "dimension {j}: two points in cell {c}");
            cells[c] = true;
        }
    }
}

#[test]
fn shifted_net_mean_is_centred() {
    let est = shifted_estimate(|x| x[0] * x[1] * 4.0 * 0.5, 2, 1 << 14, 4, 1);
    assert!((est.value[0] - 0.5).abs() < 0.01);
}

#[test]
fn constant_integrand_has_zero_error() {
    let est = shifted_estimate(|_| 3.25, 3, 64, 8, 2);
    assert_eq!(est.value[0], 3.25);
    assert_eq!(est.rmse[0], 0.0);
}

#[test]
fn too_few_shifts_are_rejected() {
    assert!(EstimateWithError::from_shifts(vec![Vector::zeros(1)]).is_err());
}

#[test]
fn doubling_the_shifts_shrinks_the_error_by_root_two() {
    let f = |x: &[f64]| (x[0] * x[1]).exp() + x[2].sin();
    let avg = |s: usize| (0..50).map(|seed| shifted_estimate(f, 3, 256, s, seed).rmse[0]).sum::<f64>() / 50.0;
    let ratio = avg(32) / avg(16);
    assert!((ratio / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn unsupported_dimensions_and_sizes() {
    assert!(matches!(SobolNet::new(0, 4), Err(Error::DimensionUnsupported { .. })));
    assert!(matches!(SobolNet::new(100_000, 4), Err(Error::DimensionUnsupported { .. })));
    assert!(matches!(SobolNet::new(2, 6), Err(Error::InvalidDesign(_))));
    let ctx = common::context(&presets::exp2d(0.5).unwrap());
    let d = design(&ctx, 64, 4, 0);
    assert!(d.level(1, 128).is_err());
    assert!(d.level(1, 48).is_err());
}

#[test]
fn level_size_examples() {
    let s = LevelSchedule::fixed(4096, 128, 1.0, 1.0, 0.25, 4);
    assert_eq!(s.level_size(6), 2048);
    for j in 1..4 {
        assert_eq!(s.level_size(j), 4096);
    }
    // sizes never fall below the floor
    assert_eq!(s.level_size(40), 128);
    // without contraction every level keeps N₁
    let flat = LevelSchedule::fixed(4096, 128, 1.0, 1.0, 1.0, 4);
    for j in 1..30 {
        assert_eq!(flat.level_size(j), 4096);
    }
}

#[test]
fn local_regime_detection_from_step_norms() {
    let mut s = LevelSchedule::new(&RqmcConfig { n: 4096, ..RqmcConfig::default() });
    for norm in [1.0, 0.9, 0.3, 0.1] {
        s.record_step(norm);
    }
    assert_eq!(s.j_loc, Some(5));
    assert!(s.eta > 0.05 && s.eta < 0.5, "η = {}", s.eta);
    // a non-contracting sequence never declares the local regime
    let mut t = LevelSchedule::new(&RqmcConfig::default());
    for norm in [1.0, 0.9, 0.8, 0.7, 0.6] {
        t.record_step(norm);
    }
    assert_eq!(t.j_loc, None);
}

#[test]
fn sandwich_covariance_examples() {
    let (v, eps) = assemble_solution_covariance(&(Matrix::identity(2, 2) * 2.0), &Matrix::identity(2, 2)).unwrap();
    assert!((v - Matrix::identity(2, 2) * 0.25).abs().max() < 1e-15);
    assert!((eps - 1.96 * 0.5).abs() < 1e-15);
    let (_, eps) = assemble_solution_covariance(&Matrix::identity(3, 3), &Matrix::zeros(3, 3)).unwrap();
    assert_eq!(eps, 0.0);
    assert!(matches!(
        assemble_solution_covariance(&Matrix::zeros(2, 2), &Matrix::identity(2, 2)),
        Err(Error::SingularHessian(_))
    ));
}

#[test]
fn shared_shift_covariance_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let comps: Vec<Vec<Vector>> = (0..3)
        .map(|_| (0..16).map(|_| Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))).collect())
        .collect();
    let sum: Vec<Vector> = (0..16).map(|s| &comps[0][s] + &comps[1][s] + &comps[2][s]).collect();
    let shared = grouped_covariance(&comps, &[vec![0, 1, 2]]);
    assert!((shared - covariance(&sum)).abs().max() < 1e-12);
    let split = grouped_covariance(&comps, &[vec![0, 2], vec![1]]);
    let pair: Vec<Vector> = (0..16).map(|s| &comps[0][s] + &comps[2][s]).collect();
    assert!((split - covariance(&pair) - covariance(&comps[1])).abs().max() < 1e-12);
}

#[test]
fn identical_iterates_give_a_zero_difference() {
    for preset in [presets::exp2d(-0.5).unwrap(), presets::nig3d().unwrap()] {
        let ctx = common::context(&preset);
        let d = design(&ctx, 256, 4, 11);
        let level = d.level(2, 256).unwrap();
        let m: Vec<f64> = ctx.factors().mean().iter().map(|v| v + 0.1).collect();
        let damping = ctx.select_damping_difference(&m, &m, None).unwrap();
        let b = ctx.evaluate_difference(&m, &m, &damping, &level, true).unwrap();
        assert_eq!(b.g, 0.0);
        assert!(b.grad.iter().all(|&v| v == 0.0));
        assert!(b.hess.unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn two_level_telescoping_matches_a_direct_estimate() {
    let ctx = common::context(&presets::exp2d(0.5).unwrap());
    let d = design(&ctx, 4096, 16, 3);
    let (m1, m2) = ([0.3, 0.2], [0.4, 0.35]);
    let l1 = d.level(1, 4096).unwrap();
    let l2 = d.level(2, 1024).unwrap();
    let coarse = ctx.evaluate(&m1, &ctx.select_damping(&m1, None).unwrap(), &l1, false).unwrap();
    let diff = ctx
        .evaluate_difference(&m2, &m1, &ctx.select_damping_difference(&m2, &m1, None).unwrap(), &l2, false)
        .unwrap();
    let direct = ctx.evaluate(&m2, &ctx.select_damping(&m2, None).unwrap(), &d.level(3, 4096).unwrap(), false).unwrap();
    let se = |b: &msrm::surrogate::KktBlocks| {
        let c = covariance(&b.per_shift);
        (c[(2, 2)] / b.per_shift.len() as f64).sqrt()
    };
    let tol = 4.0 * (se(&coarse).powi(2) + se(&diff).powi(2) + se(&direct).powi(2)).sqrt() + 1e-12;
    assert!((coarse.g + diff.g - direct.g).abs() < tol, "{} vs {}", coarse.g + diff.g, direct.g);
}

#[test]
fn surrogate_is_unbiased_across_seeds() {
    // one-dimensional QPC: g(m) = E[X] − m + ½E[((X − m)^+)²] − 1 with X ~ N(0, 1.3²)
    let ctx = SurrogateContext::new(
        msrm::loss::LossModel::qpc(1, 0.0).unwrap(),
        msrm::risk_factors::RiskFactorModel::Gaussian(
            msrm::risk_factors::GaussianModel::from_rows(&[0.0], &[vec![1.69]]).unwrap(),
        ),
        msrm::transform::TransformConfig::gaussian(),
        msrm::damping::DampingConfig::gaussian(),
    )
    .unwrap();
    let m = [0.4];
    let (_, second) = common::gaussian_positive_moments(-0.4, 1.3);
    let exact = -0.4 + 0.5 * second - 1.0;
    let damping = ctx.select_damping(&m, None).unwrap();
    let gs: Vec<f64> = (0..200)
        .map(|seed| {
            let d = design(&ctx, 16, 2, seed);
            ctx.evaluate(&m, &damping, &d.level(1, 16).unwrap(), false).unwrap().g
        })
        .collect();
    let mean = gs.iter().sum::<f64>() / 200.0;
    let sd = (gs.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    assert!((mean - exact).abs() < 3.0 * sd / 200f64.sqrt() + 1e-12, "{mean} vs {exact} (sd {sd})");
}

#[test]
fn rqmc_error_decays_at_nearly_first_order() {
    // RMSE of the value estimate against the exact value over N = 2^6 … 2^12
    let ctx = common::context(&presets::exp2d(-0.5).unwrap());
    let m = [0.2, 0.1];
    let damping = ctx.select_damping(&m, None).unwrap();
    let reference = ctx.evaluate(&m, &damping, &design(&ctx, 1 << 16, 16, 99).level(1, 1 << 16).unwrap(), false).unwrap().g;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in (6..=12).step_by(2) {
        let n = 1usize << p;
        let mse = (0..20)
            .map(|seed| {
                let d = design(&ctx, n, 2, 1000 + seed);
                ctx.evaluate(&m, &damping, &d.level(1, n).unwrap(), false).unwrap().per_shift[0][2] - reference
            })
            .map(|e| e * e)
            .sum::<f64>()
            / 20.0;
        xs.push((n as f64).ln());
        ys.push(0.5 * mse.ln());
    }
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(slope <= -0.9, "slope {slope}");
}

proptest! {
    #[test]
    fn digital_shift_is_an_involution(seed in any::<u64>(), i in 0usize..256) {
        let net = SobolNet::new(5, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = DigitalShift::random(5, &mut rng);
        prop_assert_eq!(s.compose(&s), DigitalShift::zero(5));
        prop_assert!(s.0.iter().all(|&b| b < 1u64 << BITS));
        let twice = s.compose(&s);
        let (mut a, mut b) = ([0.0; 5], [0.0; 5]);
        net.shifted_point(i, &twice, &mut a);
        net.point(i, &mut b);
        prop_assert_eq!(a, b);
        net.shifted_point(i, &s, &mut a);
        prop_assert!(a.iter().all(|&x| (0.0..1.0).contains(&x)));
    }
}
