use msrm::baselines::{monte_carlo_estimates, solve_sa, solve_saa, SaConfig, SaaConfig};
use msrm::loss::LossModel;
use msrm::presets;
use msrm::risk_factors::{GaussianModel, RiskFactorModel};
use msrm::solver::SolverConfig;
use msrm::Vector;

fn exp2d_g(rho: f64, m: &[f64]) -> f64 {
    0.5 * ((0.5 - m[0]).exp() + (0.5 - m[1]).exp() + (1.0 + rho - m[0] - m[1]).exp()) - 1.5
}

#[test]
fn saa_brackets_the_closed_form() {
    let preset = presets::exp2d(-0.5).unwrap();
    let (m_exact, _) = presets::exp2d_closed_form(-0.5);
    let cfg = SaaConfig { n: 1_000_000, seed: 7 };
    let r = solve_saa(&preset.loss, &preset.factors, &cfg, &preset.solver).unwrap();
    assert!(r.converged);
    for (i, &m) in r.m_star.iter().enumerate() {
        assert!((m - m_exact).abs() <= r.eps_stat, "m{i} = {m} vs {m_exact} ± {}", r.eps_stat);
        assert!(r.ci_lower[i] <= m_exact && m_exact <= r.ci_upper[i]);
    }
    assert!((m_exact - 0.3868).abs() < 1e-4);
    assert_eq!(r.final_size, 1_000_000);
}

#[test]
fn saa_is_reproducible() {
    let preset = presets::exp2d(0.5).unwrap();
    let cfg = SaaConfig { n: 20_000, seed: 3 };
    let a = solve_saa(&preset.loss, &preset.factors, &cfg, &preset.solver).unwrap();
    let b = solve_saa(&preset.loss, &preset.factors, &cfg, &preset.solver).unwrap();
    assert_eq!(a.m_star, b.m_star);
    assert_eq!(a.eps_stat.to_bits(), b.eps_stat.to_bits());
    let c = solve_saa(&preset.loss, &preset.factors, &SaaConfig { seed: 4, ..cfg }, &preset.solver).unwrap();
    assert_ne!(a.m_star, c.m_star);
}

#[test]
fn saa_is_nearly_unbiased_and_its_error_is_calibrated() {
    // ℓ(x) = e^x − 1 with X ~ N(0, 1): m* = 1/2
    let loss = LossModel::exponential(1, 0.0, 1.0).unwrap();
    let factors = RiskFactorModel::Gaussian(GaussianModel::from_rows(&[0.0], &[vec![1.0]]).unwrap());
    let solver = SolverConfig { eps_total: 1e-6, eps_opt: Some(1e-9), ..SolverConfig::default() };
    let runs: Vec<(f64, f64)> = (0..100)
        .map(|seed| {
            let r = solve_saa(&loss, &factors, &SaaConfig { n: 1000, seed }, &solver).unwrap();
            (r.m_star[0], r.eps_stat / 1.96)
        })
        .collect();
    let mean = runs.iter().map(|r| r.0).sum::<f64>() / 100.0;
    let sd = (runs.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    assert!((mean - 0.5).abs() < 3.0 * sd / 10.0, "mean {mean}, sd {sd}");
    let reported = runs.iter().map(|r| r.1).sum::<f64>() / 100.0;
    assert!((reported / sd - 1.0).abs() < 0.25, "reported {reported} vs empirical {sd}");
}

#[test]
fn saa_rejects_tiny_samples_and_mismatched_models() {
    let preset = presets::exp2d(0.5).unwrap();
    assert!(solve_saa(&preset.loss, &preset.factors, &SaaConfig { n: 1, seed: 0 }, &preset.solver).is_err());
    let qpc = LossModel::qpc(3, 1.0).unwrap();
    assert!(solve_saa(&qpc, &preset.factors, &SaaConfig::default(), &preset.solver).is_err());
}

#[test]
fn monte_carlo_matches_the_closed_form() {
    let rho = 0.5;
    let preset = presets::exp2d(rho).unwrap();
    let ms = vec![Vector::from_vec(vec![0.2, 0.6]), Vector::from_vec(vec![-0.3, 1.0])];
    let est = monte_carlo_estimates(&preset.loss, &preset.factors, &ms, 1 << 20, 5);
    for (m, (mean, se)) in ms.iter().zip(&est) {
        let g = exp2d_g(rho, m.as_slice());
        assert!((mean[2] - g).abs() < 3.0 * se[2], "g {} vs {g} ± {}", mean[2], se[2]);
        // ∂g/∂m₁ = −(e^{½−m₁} + e^{1+ρ−m₁−m₂})/2
        let g1 = -0.5 * ((0.5 - m[0]).exp() + (1.0 + rho - m[0] - m[1]).exp());
        assert!((mean[0] - g1).abs() < 3.0 * se[0]);
    }
}

#[test]
fn stochastic_approximation_reaches_the_optimum() {
    let preset = presets::exp2d(-0.5).unwrap();
    let (m_exact, _) = presets::exp2d_closed_form(-0.5);
    let cfg = SaConfig { iters: 1_000_000, replications: 10, ..SaConfig::default() };
    let r = solve_sa(&preset.loss, &preset.factors, &cfg, None, 1.0).unwrap();
    for &m in &r.m_star {
        assert!((m - m_exact).abs() < 5e-3, "{m} vs {m_exact}");
    }
    assert_eq!(r.work.value_grad, 10_000_000);
}

#[test]
fn stochastic_approximation_without_noise() {
    // X ≡ 0 up to rounding: the constraint ℓ(−m) = 0 is met at m = 0
    let loss = LossModel::exponential(2, 1.0, 1.0).unwrap();
    let factors = RiskFactorModel::Gaussian(
        GaussianModel::from_rows(&[0.0, 0.0], &[vec![1e-20, 0.0], vec![0.0, 1e-20]]).unwrap(),
    );
    let cfg = SaConfig { iters: 200_000, replications: 4, ..SaConfig::default() };
    let r = solve_sa(&loss, &factors, &cfg, Some(&[0.5, 0.5]), 1.0).unwrap();
    for &m in &r.m_star {
        assert!(m.abs() < 1e-2, "{m}");
    }
    assert!(r.eps_stat < 1e-6);
}

#[test]
fn stochastic_approximation_error_shrinks_with_iterations() {
    let preset = presets::exp2d(0.5).unwrap();
    let eps: Vec<f64> = [10_000, 100_000, 1_000_000]
        .iter()
        .map(|&iters| {
            let cfg = SaConfig { iters, replications: 8, ..SaConfig::default() };
            solve_sa(&preset.loss, &preset.factors, &cfg, None, 1.0).unwrap().eps_stat
        })
        .collect();
    assert!(eps.windows(2).all(|w| w[1] < w[0]), "{eps:?}");
}

#[test]
fn stochastic_approximation_settings_are_validated() {
    let preset = presets::exp2d(0.5).unwrap();
    for cfg in [
        SaConfig { gamma: 0.5, ..SaConfig::default() },
        SaConfig { gamma: 1.2, ..SaConfig::default() },
        SaConfig { c: 0.0, ..SaConfig::default() },
        SaConfig { replications: 1, ..SaConfig::default() },
    ] {
        assert!(solve_sa(&preset.loss, &preset.factors, &cfg, None, 1.0).is_err());
    }
}
