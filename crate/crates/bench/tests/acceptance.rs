//! End-to-end acceptance checks.
//!
//! Runs as a plain binary (`harness = false`) and prints one `PASS`/`FAIL`
//! line per criterion with the measured quantities next to the pinned
//! tolerances. The process exits non-zero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use msrm::baselines::{monte_carlo_estimates, solve_saa, SaaConfig};
use msrm::damping::is_admissible;
use msrm::loss::Damping;
use msrm::presets::{self, Preset};
use msrm::risk_factors::RiskFactorModel;
use msrm::rqmc::{covariance, LevelDesign, RqmcConfig, RqmcDesign};
use msrm::sobol::DigitalShift;
use msrm::solver::{solve, Mode, SolutionReport};
use msrm::surrogate::SurrogateContext;
use msrm::{Complex, Matrix, Vector};
use msrm_bench::compare::{rate_fit, summarise};
use msrm_bench::config::ExperimentConfig;
use msrm_bench::runner::{run, Sweep};
use msrm_bench::Method;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn context(p: &Preset) -> SurrogateContext {
    SurrogateContext::new(p.loss.clone(), p.factors.clone(), p.transform.clone(), p.damping.clone())
        .expect("preset context")
}

fn all_presets() -> Vec<Preset> {
    vec![presets::exp2d(-0.5).unwrap(), presets::qpc10d().unwrap(), presets::nig3d().unwrap()]
}

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

/// `∫_a^b f` by tanh-sinh quadrature on `panels` equal sub-intervals.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            quadrature::double_exponential::integrate(&f, lo, lo + h, tol / panels as f64).integral
        })
        .sum()
}

/// Per-coordinate standard errors of the allocation.
fn std_errors(r: &SolutionReport) -> Vec<f64> {
    r.variance_diag[..r.m_star.len()].iter().map(|v| v.sqrt()).collect()
}

/// Largest `|a − b| / √(se_a² + se_b²)` over the allocation coordinates.
fn max_z(a: &SolutionReport, b: &SolutionReport) -> f64 {
    let (sa, sb) = (std_errors(a), std_errors(b));
    (0..a.m_star.len())
        .map(|i| (a.m_star[i] - b.m_star[i]).abs() / (sa[i] * sa[i] + sb[i] * sb[i]).sqrt())
        .fold(0.0, f64::max)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Closed-form reproduction on the bivariate exponential example.
fn closed_form() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (rho, expected) in [(-0.5, 0.3868), (0.5, 0.6364)] {
        let preset = presets::exp2d(rho).unwrap();
        let ctx = context(&preset);
        let rq = RqmcConfig { n: 2048, shifts: 32, ..preset.rqmc.clone() };
        let cfg = msrm::solver::SolverConfig { max_refinements: 0, ..preset.solver.clone() };
        let (r, _) = solve(&ctx, &cfg, &rq, Mode::SingleLevel).map_err(|e| e.to_string())?;
        let err = r.m_star.iter().map(|m| (m - expected).abs()).fold(0.0, f64::max);
        ok &= err <= 1e-3 && r.eps_stat <= 1e-3 && r.wall_seconds <= 60.0 && r.converged;
        detail.push(format!(
            "rho={rho:+}: m=({:.5}, {:.5}) |m-{expected}|={err:.1e}<=1e-3 ci={:.1e}<=1e-3 {:.2}s<=60s",
            r.m_star[0], r.m_star[1], r.eps_stat, r.wall_seconds
        ));
    }
    check(ok, detail.join("; "))
}

/// Error-versus-budget slopes of RQMC and SAA through the experiment runner.
fn rate_separation() -> Outcome {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/exp2d_neg.toml");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    let mut rqmc = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
    rqmc.seeds = vec![1, 2, 3];
    let out = run(&rqmc, Sweep::Budgets, Some(dir.path().into())).map_err(|e| e.to_string())?;
    let rows: Vec<_> = out.records.iter().map(|r| r.row.clone()).collect();
    let rq = summarise(&rows);
    let (rq_slope, _) = rate_fit(&rq).ok_or("no RQMC fit")?;

    let mut saa = rqmc.clone();
    saa.method = Method::Saa;
    saa.sweep.budgets = vec![1_000, 4_000, 16_000, 64_000, 256_000];
    let out = run(&saa, Sweep::Budgets, Some(dir.path().into())).map_err(|e| e.to_string())?;
    let rows: Vec<_> = out.records.iter().map(|r| r.row.clone()).collect();
    let sa = summarise(&rows);
    let (saa_slope, _) = rate_fit(&sa).ok_or("no SAA fit")?;

    let secs = start.elapsed().as_secs_f64();
    check(
        rq.len() >= 5 && sa.len() >= 5 && rq_slope <= -0.9 && (saa_slope + 0.5).abs() <= 0.1 && secs <= 900.0,
        format!(
            "rqmc slope {rq_slope:.3}<=-0.9 over {} budgets; saa slope {saa_slope:.3} in -0.5±0.1 over {} budgets; {secs:.1}s<=900s",
            rq.len(),
            sa.len()
        ),
    )
}

/// Fourier surrogate against plain Monte Carlo and against quadrature.
fn oracle_equivalence() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for preset in all_presets() {
        let ctx = context(&preset);
        let lvl = level(&ctx, 2048, 32, 9);
        let ms = random_allocations(&ctx, 5, 31);
        let vs: Vec<Vector> = ms.iter().map(|m| Vector::from_column_slice(m)).collect();
        let mc = monte_carlo_estimates(&preset.loss, &preset.factors, &vs, 10_000_000, 77);
        let d = ctx.dim();
        let mut worst = 0.0f64;
        for (m, (mean, se)) in ms.iter().zip(&mc) {
            let b = ctx.evaluate(m, &ctx.select_damping(m, None).unwrap(), &lvl, false).unwrap();
            let se_f = (covariance(&b.per_shift)[(d, d)] / 32.0).sqrt();
            worst = worst.max((b.g - mean[d]).abs() / (se_f * se_f + se[d] * se[d]).sqrt());
        }
        ok &= worst <= 3.0;
        detail.push(format!("{} z={worst:.2}<=3", preset.name));
    }

    // low-dimensional blocks against tanh-sinh quadrature of the integrand
    let mut worst = 0.0f64;
    for preset in all_presets() {
        let ctx = context(&preset);
        let m: Vec<f64> = ctx.factors().mean().iter().map(|v| v + 0.02).collect();
        let damping = ctx.select_damping(&m, None).unwrap();
        let nig = matches!(ctx.factors(), RiskFactorModel::Nig(_));
        // every singleton block and the first pair block
        let mut picked: Vec<usize> = (0..ctx.components().len()).filter(|&c| ctx.components()[c].spec.k() == 1).collect();
        picked.extend((0..ctx.components().len()).find(|&c| ctx.components()[c].spec.k() == 2));
        for c in picked {
            let comp = &ctx.components()[c];
            let k = comp.spec.k();
            let h = |u: &[f64]| ctx.component_integrand(c, 0, &m, &damping.entries[c], u).unwrap()[0].re;
            // The NIG characteristic function stays nearly Gaussian out to
            // |u| ~ α/√Γ, so its damped integrand only decays algebraically
            // over a wide range and the mixture-weighted pair block converges
            // slowly; it gets a longer net and a wider quadrature window.
            let (range, n, shifts) = match (nig, k) {
                (true, 1) => (240.0, 1 << 16, 16),
                (true, _) => (240.0, 1 << 23, 4),
                _ => (14.0 * comp.transform.l_tilde().amax().max(1.0), 1 << 14, 16),
            };
            let quad = if k == 1 {
                integrate(|u| h(&[u]), -range, range, 2400, 1e-14)
            } else {
                let panels = if nig { 96 } else { 24 };
                integrate(|a| integrate(|b| h(&[a, b]), -range, range, panels, 1e-12), -range, range, panels, 1e-12)
            };
            let lvl = level(&ctx, n, shifts, 4);
            let dim = comp.transform.cube_dim();
            let net = lvl.net(dim);
            let (mut v, mut u, mut y) = (vec![0.0; dim], vec![0.0; k], vec![0.0; k]);
            let mut total = 0.0;
            for s in 0..shifts {
                let shift = lvl.shift(dim, s);
                for i in 0..n {
                    net.shifted_point(i, shift, &mut v);
                    let lw = comp.transform.map(&v, &mut u, &mut y);
                    total += h(&u) * lw.exp();
                }
            }
            let rqmc = total / (n * shifts) as f64;
            worst = worst.max((rqmc - quad).abs());
        }
    }
    ok &= worst <= 1e-6;
    detail.push(format!("quadrature max dev {worst:.1e}<=1e-6"));
    check(ok, detail.join("; "))
}

/// Finite differences of the surrogate value and gradient.
fn derivative_consistency() -> Outcome {
    let h = 1e-5;
    let (mut g_dev, mut h_dev) = (0.0f64, 0.0f64);
    for preset in all_presets() {
        let ctx = context(&preset);
        let lvl = level(&ctx, 256, 4, 3);
        let d = ctx.dim();
        for m in random_allocations(&ctx, 20, 6) {
            let damping = ctx.select_damping(&m, None).unwrap();
            let b = ctx.evaluate(&m, &damping, &lvl, true).unwrap();
            let hess = b.hess.clone().unwrap();
            let mut fd = Matrix::zeros(d, d);
            for i in 0..d {
                let (mut up, mut dn) = (m.clone(), m.clone());
                up[i] += h;
                dn[i] -= h;
                let bu = ctx.evaluate(&up, &damping, &lvl, false).unwrap();
                let bd = ctx.evaluate(&dn, &damping, &lvl, false).unwrap();
                g_dev = g_dev.max(((bu.g - bd.g) / (2.0 * h) - b.grad[i]).abs());
                fd.set_column(i, &((bu.grad - bd.grad) / (2.0 * h)));
            }
            h_dev = h_dev.max((&fd - &hess).abs().max());
        }
    }
    check(g_dev <= 1e-4 && h_dev <= 1e-3, format!("gradient dev {g_dev:.1e}<=1e-4; hessian dev {h_dev:.1e}<=1e-3"))
}

/// Marginal characteristic functions embed into the joint one.
fn cf_embedding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut count = 0;
    for preset in all_presets() {
        let ctx = context(&preset);
        let d = ctx.dim();
        let m: Vec<f64> = ctx.factors().mean().iter().map(|v| v + 0.1).collect();
        let damping = ctx.select_damping(&m, None).unwrap();
        for (comp, dmp) in ctx.components().iter().zip(&damping.entries) {
            let k = comp.spec.k();
            let shift = match dmp {
                Damping::OneSided(v) => v.clone(),
                Damping::TwoSided { lo, .. } => lo.clone(),
            };
            for t in 0..20 {
                let y: Vec<Complex> = (0..k)
                    .map(|j| Complex::new(rng.random_range(-5.0..5.0), if t % 2 == 0 { 0.0 } else { shift[j] }))
                    .collect();
                let mut full = vec![Complex::new(0.0, 0.0); d];
                for (&i, &v) in comp.spec.indices.iter().zip(&y) {
                    full[i] = v;
                }
                let a = comp.marginal.model.extended_cf(&y).map_err(|e| e.to_string())?;
                let b = ctx.factors().extended_cf(&full).map_err(|e| e.to_string())?;
                worst = worst.max((a - b).norm());
                count += 1;
            }
        }
    }
    check(worst <= 1e-10, format!("{count} evaluations, max dev {worst:.1e}<=1e-10"))
}

/// Multilevel against single-level on the ten-dimensional QPC example.
fn multilevel() -> Outcome {
    let preset = presets::qpc10d().unwrap();
    let ctx = context(&preset);
    let (sl, _) = solve(&ctx, &preset.solver, &preset.rqmc, Mode::SingleLevel).map_err(|e| e.to_string())?;
    let (ml, levels) = solve(&ctx, &preset.solver, &preset.rqmc, Mode::Multilevel).map_err(|e| e.to_string())?;
    let z = max_z(&sl, &ml);
    let j_loc = ml.j_loc.ok_or("no local regime detected")?;
    let v1 = levels.first().ok_or("no levels")?.grad_variance;
    let later = levels.iter().filter(|l| l.level >= j_loc).map(|l| l.grad_variance).fold(0.0, f64::max);
    let work = |r: &SolutionReport| r.work.value_grad + r.work.hessian;
    check(
        z <= 3.0 && later < v1 && work(&ml) < work(&sl) && sl.converged && ml.converged,
        format!(
            "z={z:.2}<=3; J_loc={j_loc}, max var(l>=J_loc)={later:.1e}<{v1:.1e}; evals ml {} < sl {}; eps ml {:.1e} sl {:.1e}",
            work(&ml),
            work(&sl),
            ml.eps_stat,
            sl.eps_stat
        ),
    )
}

/// Fourier–RQMC against SAA on the NIG example.
fn nig_cross_check() -> Outcome {
    let preset = presets::nig3d().unwrap();
    let ctx = context(&preset);
    let (f, _) = solve(&ctx, &preset.solver, &preset.rqmc, Mode::SingleLevel).map_err(|e| e.to_string())?;
    let saa = solve_saa(&preset.loss, &preset.factors, &SaaConfig { n: 1_000_000, seed: 13 }, &preset.solver)
        .map_err(|e| e.to_string())?;
    let z = max_z(&f, &saa);
    check(
        z <= 3.0 && f.hessian_condition.is_finite() && f.hessian_condition < saa.hessian_condition,
        format!(
            "z={z:.2}<=3; cond fourier {:.3e} < saa {:.3e}",
            f.hessian_condition, saa.hessian_condition
        ),
    )
}

/// Condensed structural invariants.
fn properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();
    for preset in all_presets() {
        let ctx = context(&preset);
        let d = ctx.dim();
        let name = preset.name.clone();
        // decomposition identity
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sum: f64 = preset.loss.components().iter().map(|c| c.block_value(&x)).sum();
            let v = preset.loss.value(&x);
            if (sum - v).abs() > 1e-12 * v.abs().max(1.0) {
                failures.push(format!("{name}: decomposition {sum} vs {v}"));
                break;
            }
        }
        for m in random_allocations(&ctx, 4, 17) {
            let a = ctx.select_damping(&m, None).unwrap();
            for (c, (comp, dmp)) in ctx.components().iter().zip(&a.entries).enumerate() {
                // strip membership
                if !is_admissible(&comp.spec, &comp.marginal, dmp, ctx.damping_config()) {
                    failures.push(format!("{name}: component {c} damping outside the strip"));
                }
                // ridge bound: the integrand modulus peaks at u = 0
                let k = comp.spec.k();
                let h0 = ctx.component_integrand(c, 0, &m, dmp, &vec![0.0; k]).unwrap()[0].norm();
                let (mut u, mut y) = (vec![0.0; k], vec![0.0; k]);
                for _ in 0..50 {
                    let v: Vec<f64> = (0..comp.transform.cube_dim()).map(|_| rng.random::<f64>()).collect();
                    comp.transform.map(&v, &mut u, &mut y);
                    let hv = ctx.component_integrand(c, 0, &m, dmp, &u).unwrap()[0].norm();
                    if hv > h0 * (1.0 + 1e-12) {
                        failures.push(format!("{name}: component {c} ridge bound {hv} > {h0}"));
                        break;
                    }
                }
            }
            // telescoping degeneracy and determinism
            let lvl = level(&ctx, 128, 4, 2);
            let diff = ctx.evaluate_difference(&m, &m, &a, &lvl, true).unwrap();
            if diff.g != 0.0 || diff.grad.iter().any(|v| *v != 0.0) {
                failures.push(format!("{name}: nonzero difference at identical iterates"));
            }
            let (e1, e2) = (ctx.evaluate(&m, &a, &lvl, false).unwrap(), ctx.evaluate(&m, &a, &lvl, false).unwrap());
            if e1.g.to_bits() != e2.g.to_bits() || e1.per_shift != e2.per_shift {
                failures.push(format!("{name}: evaluation not reproducible"));
            }
        }
    }
    // XOR involution of digital shifts
    let lvl = level(&context(&presets::qpc10d().unwrap()), 256, 2, 0);
    for dim in [1, 2] {
        let net = lvl.net(dim);
        for _ in 0..50 {
            let s = DigitalShift::random(dim, &mut rng);
            let i = rng.random_range(0..net.len());
            let (mut a, mut b) = (vec![0.0; dim], vec![0.0; dim]);
            net.shifted_point(i, &s.compose(&s), &mut a);
            net.point(i, &mut b);
            if s.compose(&s) != DigitalShift::zero(dim) || a != b {
                failures.push(format!("shift is not an involution in dimension {dim}"));
                break;
            }
        }
    }
    // baseline determinism
    let p = presets::exp2d(0.5).unwrap();
    let run = || solve_saa(&p.loss, &p.factors, &SaaConfig { n: 10_000, seed: 4 }, &p.solver).unwrap().m_star;
    if run() != run() {
        failures.push("SAA solve not reproducible".into());
    }
    if failures.is_empty() {
        Ok("decomposition, ridge, strip, telescoping, XOR involution, determinism".into())
    } else {
        Err(failures.join("; "))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("closed-form reproduction", closed_form),
        ("rate separation", rate_separation),
        ("oracle equivalence", oracle_equivalence),
        ("derivative consistency", derivative_consistency),
        ("marginal CF embedding", cf_embedding),
        ("multilevel consistency and savings", multilevel),
        ("NIG cross-check", nig_cross_check),
        ("property suites", properties),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
