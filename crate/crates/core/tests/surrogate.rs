mod common;

use msrm::damping::{DampingAssignment, DampingConfig};
use msrm::loss::{ComponentKind, Damping, LossModel};
use msrm::presets::{self, Preset};
use msrm::risk_factors::{GaussianModel, RiskFactorModel};
use msrm::rqmc::{covariance, LevelDesign, RqmcConfig, RqmcDesign};
use msrm::surrogate::{lagrangian_gradient, lagrangian_hessian, KktBlocks, SurrogateContext};
use msrm::transform::TransformConfig;
use msrm::{Complex, Error, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn level(ctx: &SurrogateContext, n: usize, shifts: usize, seed: u64) -> LevelDesign {
    RqmcDesign::new(RqmcConfig { n, shifts, seed, n_min: 1, ..RqmcConfig::default() }, &ctx.cube_dims())
        .unwrap()
        .level(1, n)
        .unwrap()
}

/// Random allocations around the factor mean, scaled to the factor spread.
fn random_allocations(ctx: &SurrogateContext, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let spread = if matches!(ctx.factors(), RiskFactorModel::Nig(_)) { 0.1 } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ctx.factors().mean().iter().map(|v| v + spread * rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn all_presets() -> Vec<Preset> {
    vec![presets::exp2d(-0.5).unwrap(), presets::qpc10d().unwrap(), presets::nig3d().unwrap()]
}

fn value(ctx: &SurrogateContext, m: &[f64], damping: &DampingAssignment, lvl: &LevelDesign) -> KktBlocks {
    ctx.evaluate(m, damping, lvl, false).unwrap()
}

#[test]
fn integrand_at_origin_for_the_standard_normal_square() {
    let ctx = SurrogateContext::new(
        LossModel::qpc(1, 0.0).unwrap(),
        RiskFactorModel::Gaussian(GaussianModel::from_rows(&[0.0], &[vec![1.0]]).unwrap()),
        TransformConfig::gaussian(),
        DampingConfig::gaussian(),
    )
    .unwrap();
    let h = ctx.component_integrand(0, 0, &[0.0], &Damping::OneSided(vec![-1.0]), &[0.0]).unwrap()[0];
    let expected = 0.5f64.exp() / (2.0 * std::f64::consts::PI);
    assert!((h - Complex::new(expected, 0.0)).norm() < 1e-15);
    assert!((expected - 0.26239).abs() < 2e-5);
}

#[test]
fn integrand_rejects_bad_arguments() {
    let ctx = common::context(&presets::exp2d(0.5).unwrap());
    let d = ctx.select_damping(&[0.0, 0.0], None).unwrap();
    assert!(matches!(
        ctx.component_integrand(0, 0, &[0.0, 0.0], &d.entries[0], &[0.0, 0.0]),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(ctx.component_integrand(0, 3, &[0.0, 0.0], &d.entries[0], &[0.0]).is_err());
    assert!(ctx.component_integrand(0, 0, &[0.0, 0.0], &Damping::TwoSided { lo: vec![2.0], hi: vec![3.0] }, &[0.0]).is_err());
}

#[test]
fn integrated_component_matches_monte_carlo() {
    // ∫_R Re h(u) du against the block mean under 10⁷ draws of the factor
    let n = 10_000_000;
    for preset in [presets::exp2d(-0.5).unwrap(), presets::nig3d().unwrap()] {
        let ctx = common::context(&preset);
        let m: Vec<f64> = ctx.factors().mean().iter().map(|v| v + 0.05).collect();
        let damping = ctx.select_damping(&m, None).unwrap();
        let sampler = ctx.factors().sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut x = vec![0.0; ctx.dim()];
        let comps: Vec<usize> = (0..ctx.components().len()).filter(|&c| ctx.components()[c].spec.k() == 1).collect();
        let mut sums = vec![(0.0, 0.0); comps.len()];
        for _ in 0..n {
            sampler.draw(&mut rng, &mut x);
            let y: Vec<f64> = x.iter().zip(&m).map(|(a, b)| a - b).collect();
            for (s, &c) in sums.iter_mut().zip(&comps) {
                let v = ctx.components()[c].spec.block_value(&y);
                s.0 += v;
                s.1 += v * v;
            }
        }
        for (&(s1, s2), &c) in sums.iter().zip(&comps) {
            let mean = s1 / n as f64;
            let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
            let scale = ctx.components()[c].transform.l_tilde()[(0, 0)];
            let range = 40.0 * scale;
            let fourier = common::integrate(
                |u| ctx.component_integrand(c, 0, &m, &damping.entries[c], &[u]).unwrap()[0].re,
                -range,
                range,
                200,
                1e-13,
            );
            assert!((fourier - mean).abs() < 3.0 * se, "{}: {fourier} vs {mean} ± {se}", preset.name);
        }
    }
}

#[test]
fn constraint_is_active_at_the_exact_optimum() {
    let preset = presets::exp2d(-0.5).unwrap();
    let ctx = common::context(&preset);
    let (m_star, _) = presets::exp2d_closed_form(-0.5);
    let m = [m_star, m_star];
    let b = value(&ctx, &m, &ctx.select_damping(&m, None).unwrap(), &level(&ctx, 4096, 32, 5));
    let se = (covariance(&b.per_shift)[(2, 2)] / 32.0).sqrt();
    assert!(b.g.abs() < 3.0 * se + 1e-12, "g = {} ± {se}", b.g);
}

#[test]
fn deep_capital_is_acceptable() {
    for preset in all_presets() {
        let ctx = common::context(&preset);
        let m: Vec<f64> = ctx.factors().mean().iter().map(|v| v + 10.0).collect();
        let b = value(&ctx, &m, &ctx.select_damping(&m, None).unwrap(), &level(&ctx, 256, 4, 1));
        assert!(b.g < 0.0, "{}: g = {}", preset.name, b.g);
    }
}

#[test]
fn lagrangian_blocks() {
    let ctx = common::context(&presets::qpc10d().unwrap());
    let m = vec![0.2; 10];
    let b = ctx.evaluate(&m, &ctx.select_damping(&m, None).unwrap(), &level(&ctx, 256, 4, 2), true).unwrap();
    let r = lagrangian_gradient(&b, 0.0).unwrap();
    assert!(r.rows(0, 10).iter().all(|&v| v == 1.0));
    assert_eq!(r[10], b.g);
    let hess = b.hess.clone().unwrap();
    assert_eq!(hess, hess.transpose());
    let j = lagrangian_hessian(&b.grad, &hess, 1.7).unwrap();
    assert_eq!(j, j.transpose());
    assert_eq!(j[(10, 10)], 0.0);
    assert!(matches!(lagrangian_gradient(&b, -1.0), Err(Error::NonPositiveMultiplier(_))));
    assert!(matches!(lagrangian_hessian(&b.grad, &hess, -1.0), Err(Error::NonPositiveMultiplier(_))));
    assert!(b.imag_residual < 1e-3, "imaginary residual {}", b.imag_residual);
}

#[test]
fn gradient_matches_finite_differences() {
    let h = 1e-5;
    for preset in all_presets() {
        let ctx = common::context(&preset);
        let lvl = level(&ctx, 256, 4, 3);
        let d = ctx.dim();
        for m in random_allocations(&ctx, 20, 6) {
            let damping = ctx.select_damping(&m, None).unwrap();
            let b = value(&ctx, &m, &damping, &lvl);
            for i in 0..d {
                let (mut up, mut dn) = (m.clone(), m.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (value(&ctx, &up, &damping, &lvl).g - value(&ctx, &dn, &damping, &lvl).g) / (2.0 * h);
                assert!((fd - b.grad[i]).abs() < 1e-4, "{} coord {i}: fd {fd} vs {}", preset.name, b.grad[i]);
            }
        }
    }
}

#[test]
fn hessian_matches_finite_differences() {
    let h = 1e-5;
    for preset in all_presets() {
        let ctx = common::context(&preset);
        let lvl = level(&ctx, 256, 4, 4);
        let d = ctx.dim();
        for m in random_allocations(&ctx, 5, 7) {
            let damping = ctx.select_damping(&m, None).unwrap();
            let hess = ctx.evaluate(&m, &damping, &lvl, true).unwrap().hess.unwrap();
            let mut fd = Matrix::zeros(d, d);
            for i in 0..d {
                let (mut up, mut dn) = (m.clone(), m.clone());
                up[i] += h;
                dn[i] -= h;
                let col = (value(&ctx, &up, &damping, &lvl).grad - value(&ctx, &dn, &damping, &lvl).grad) / (2.0 * h);
                fd.set_column(i, &col);
            }
            let scale = hess.abs().max().max(1.0);
            assert!((&fd - &hess).abs().max() < 1e-3 * scale, "{}: max dev {}", preset.name, (&fd - &hess).abs().max());
        }
    }
}

#[test]
fn derivative_integrands_are_rank_one_multiples() {
    // one-sided blocks: h^(1) = (K − iu) h^(0) and h^(2) = (K − iu)(K − iu)ᵀ h^(0)
    let ctx = common::context(&presets::qpc10d().unwrap());
    let m = vec![0.1; 10];
    let damping = ctx.select_damping(&m, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (c, comp) in ctx.components().iter().enumerate() {
        let Damping::OneSided(k) = &damping.entries[c] else { panic!("one-sided block") };
        let kk = comp.spec.k();
        let u: Vec<f64> = (0..kk).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h0 = ctx.component_integrand(c, 0, &m, &damping.entries[c], &u).unwrap()[0];
        let h1 = ctx.component_integrand(c, 1, &m, &damping.entries[c], &u).unwrap();
        let h2 = ctx.component_integrand(c, 2, &m, &damping.entries[c], &u).unwrap();
        let f: Vec<Complex> = (0..kk).map(|j| Complex::new(k[j], -u[j])).collect();
        for a in 0..kk {
            assert!((h1[a] - f[a] * h0).norm() <= 1e-12 * h1[a].norm().max(h0.norm()));
            for b in 0..kk {
                let want = f[a] * f[b] * h0;
                assert!((h2[a * kk + b] - want).norm() <= 1e-12 * want.norm().max(h0.norm()));
            }
        }
        assert!(matches!(comp.spec.kind, ComponentKind::QpcSquare | ComponentKind::QpcPair));
    }
}

#[test]
fn evaluation_is_deterministic_and_counts_work() {
    let ctx = common::context(&presets::nig3d().unwrap());
    let m = vec![-0.02, 0.01, 0.0];
    let damping = ctx.select_damping(&m, None).unwrap();
    let lvl = level(&ctx, 128, 4, 8);
    let a = value(&ctx, &m, &damping, &lvl);
    let b = value(&ctx, &m, &damping, &lvl);
    assert_eq!(a.g.to_bits(), b.g.to_bits());
    assert_eq!(a.per_shift, b.per_shift);
    // one evaluation per point, shift and contour term
    assert_eq!(a.evaluations, (128 * 4 * ctx.components().len()) as u64);
    let sum = a.add(&b);
    assert_eq!(sum.g, 2.0 * a.g);
    assert_eq!(sum.per_shift[0], &a.per_shift[0] * 2.0);
    let cov = a.residual_covariance(2.0);
    assert_eq!(cov.nrows(), 4);
    assert_eq!(cov, cov.transpose());
    let _: &Vector = &a.grad;
}
