//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p watermark-core --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use watermark::mc::{divergence_exponent, divergence_probe, perturbation_test, simulate_boundary, McConfig, Payoff};
use watermark::value::ViTolerances;
use watermark::{
    compute_roots, solve_separatrix, FreeBoundary, HattedSurface, ModelParams, SolverConfig, ValueSurface,
    ViSampleConfig,
};

type Check = Result<(bool, String), String>;

fn p1() -> ModelParams {
    ModelParams::normalized(0.05, 0.2, 0.1, 1.0, 0.5).unwrap()
}

fn p2() -> ModelParams {
    ModelParams::normalized(0.05, 0.2, 0.1, 1.0, 1.5).unwrap()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Roots of `½σ²k² + (μ − ½σ²)k − r = 0` computed here, independent of the
/// library.
fn roots_by_hand(mu: f64, sigma: f64, r: f64) -> (f64, f64) {
    let a = 0.5 * sigma * sigma;
    let b = mu - a;
    let disc = (b * b + 4.0 * a * r).sqrt();
    // Cancellation-free pair: the larger-magnitude root first, then Vieta.
    let q = -0.5 * (b + b.signum() * disc);
    let (k1, k2) = (q / a, -r / q);
    (k1.min(k2), k1.max(k2))
}

/// Asymptote of the rescaled boundary from its closed forms.
fn c_by_hand(mu: f64, sigma: f64, r: f64, k: f64, p: f64) -> f64 {
    let (m, n) = roots_by_hand(mu, sigma, r);
    if p < 1.0 {
        (m + 1.0) / (m * k)
    } else {
        ((m + 1.0) * (p - n - 1.0) / ((n + 1.0) * (p - m - 1.0))).powf(1.0 / (n - m))
    }
}

fn random_params(rng: &mut StdRng) -> ModelParams {
    ModelParams::normalized(
        rng.random_range(-0.2..0.3),
        rng.random_range(0.05..0.8),
        rng.random_range(0.01..0.3),
        rng.random_range(0.2..5.0),
        rng.random_range(0.1..3.0),
    )
    .unwrap()
}

fn c1_roots() -> Check {
    let mut rng = StdRng::seed_from_u64(20_240_601);
    let sets: Vec<ModelParams> = (0..10_000).map(|_| random_params(&mut rng)).collect();
    let start = Instant::now();
    let mut worst_residual: f64 = 0.0;
    let mut worst_vieta: f64 = 0.0;
    for pr in &sets {
        let roots = compute_roots(pr).map_err(err)?;
        let (half_s2, drift) = (0.5 * pr.sigma2(), pr.mu - 0.5 * pr.sigma2());
        for k in [roots.m, roots.n] {
            let terms = [half_s2 * k * k, drift * k, -pr.r];
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            worst_residual = worst_residual.max(terms.iter().sum::<f64>().abs() / scale);
        }
        let product = -pr.r / half_s2;
        let sum = -drift / half_s2;
        worst_vieta = worst_vieta
            .max((roots.m * roots.n - product).abs() / product.abs())
            .max((roots.m + roots.n - sum).abs() / (1.0 + sum.abs()));
    }
    let elapsed = start.elapsed();
    let pass = worst_residual < 1e-12 && worst_vieta <= 1e-12 && elapsed < Duration::from_secs(1);
    Ok((
        pass,
        format!(
            "10^4 sets: max residual {worst_residual:.2e}, max Vieta error {worst_vieta:.2e}, sweep {:.3} s",
            secs(elapsed)
        ),
    ))
}

fn c2_regimes() -> Check {
    let mut rng = StdRng::seed_from_u64(20_240_601);
    let mut exceptions = 0;
    let (mut m_side, mut n_side) = (0, 0);
    for _ in 0..10_000 {
        let pr = random_params(&mut rng);
        let roots = compute_roots(&pr).map_err(err)?;
        let m_lhs = roots.m + 1.0 < 0.0;
        let n_lhs = roots.n > 1.0;
        if m_lhs != (pr.r + pr.mu > pr.sigma2()) {
            exceptions += 1;
        }
        if n_lhs != (pr.mu < pr.r) {
            exceptions += 1;
        }
        m_side += usize::from(m_lhs);
        n_side += usize::from(n_lhs);
    }
    Ok((
        exceptions == 0,
        format!("{exceptions} exceptions; m+1<0 on {m_side}, n>1 on {n_side} of 10^4 sets"),
    ))
}

fn solve(pr: &ModelParams, cfg: &SolverConfig) -> Result<FreeBoundary, String> {
    solve_separatrix(pr, &compute_roots(pr).map_err(err)?, cfg).map_err(err)
}

fn c3_asymptotics() -> Check {
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, pr, quoted) in [("P1", p1(), 0.67830), ("P2", p2(), 0.74425)] {
        let c = c_by_hand(pr.mu, pr.sigma, pr.r, pr.k, pr.p());
        let start = Instant::now();
        let fb = solve(&pr, &SolverConfig::default())?;
        let elapsed = start.elapsed();
        let s_max = fb.s_max();
        let h_end = fb.eval_h(s_max).map_err(err)?;
        let ratio = if pr.p() < 1.0 {
            h_end / s_max.powf(pr.p())
        } else {
            h_end / s_max
        };
        let ok = (ratio - c).abs() < 1e-3
            && (ratio - quoted).abs() < 1e-3
            && s_max >= 1e4 * fb.s_star
            && elapsed < Duration::from_secs(10);
        pass &= ok;
        notes.push(format!(
            "{name}: c = {c:.7}, ratio {ratio:.7} (|Δc| {:.1e}, |Δ{quoted}| {:.1e}), s_max/s_* {:.1e}, {:.2} s",
            (ratio - c).abs(),
            (ratio - quoted).abs(),
            s_max / fb.s_star,
            secs(elapsed)
        ));
    }
    Ok((pass, notes.join("; ")))
}

fn c4_containment() -> Check {
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, pr) in [("P1", p1()), ("P2", p2())] {
        let fb = solve(&pr, &SolverConfig::default())?;
        let p = pr.p();
        let (m, n) = roots_by_hand(pr.mu, pr.sigma, pr.r);
        let gamma = ((n + 1.0) * (m + 1.0) / (n * m * pr.k)).min(1.0 / pr.k);
        let c = c_by_hand(pr.mu, pr.sigma, pr.r, pr.k, p);
        let mut violations = 0;
        let mut prev = (0.0, 0.0);
        for (s, h) in fb.grid() {
            let envelope = (gamma * s.powf(p)).min(s);
            let asymptote = if p < 1.0 { c * s.powf(p) } else { c * s };
            let ok = h > 0.0 && h < envelope && h < asymptote && s > prev.0 && h > prev.1;
            violations += usize::from(!ok);
            prev = (s, h);
        }
        pass &= violations == 0;
        notes.push(format!("{name}: {violations} violations over {} nodes", fb.len()));
    }
    Ok((pass, notes.join("; ")))
}

fn c5_anchor_independence() -> Check {
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, pr) in [("P1", p1()), ("P2", p2())] {
        let base = solve(&pr, &SolverConfig::default())?;
        let cfg = SolverConfig {
            delta: Some(2.0 * base.delta),
            ..SolverConfig::default()
        };
        let doubled = solve(&pr, &cfg)?;
        let lo = base.s_min().max(doubled.s_min());
        let hi = base.s_max().min(doubled.s_max());
        let mut worst: f64 = 0.0;
        let mut compared = 0;
        for (s, h) in base.grid().filter(|&(s, _)| s >= lo && s <= hi) {
            let other = doubled.resolve(s).map_err(err)?;
            worst = worst.max((other - h).abs() / h);
            compared += 1;
        }
        let tol = 10.0 * cfg.bisection_tol;
        pass &= compared > 0 && worst < tol;
        notes.push(format!(
            "{name}: max rel gap {worst:.2e} over {compared} nodes (tol {tol:.0e})"
        ));
    }
    Ok((pass, notes.join("; ")))
}

fn c6_variational_inequality() -> Check {
    let tol = ViTolerances {
        ode_residual: 1e-9,
        obstacle_gap: 1e-9,
        f_in_s: 1e-12,
        smooth_fit: 1e-8,
        bc: 1e-4,
    };
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, pr) in [("P1", p1()), ("P2", p2())] {
        let start = Instant::now();
        let sf = ValueSurface::new(&pr, &SolverConfig::default()).map_err(err)?;
        let report = sf.verify_vi(&ViSampleConfig::default());
        let elapsed = start.elapsed();
        let failures = report.failures(&tol);
        pass &= failures.is_empty() && elapsed < Duration::from_secs(30);
        notes.push(format!(
            "{name}: residual {:.1e}, gap {:.1e}, f {:.1e}, fit {:.1e}/{:.1e}, w_s {:.1e}, failed {failures:?}, {:.2} s",
            report.max_ode_residual_w,
            report.min_obstacle_gap_w,
            report.max_f_in_s,
            report.smooth_fit_value_err,
            report.smooth_fit_slope_err,
            report.max_bc_err,
            secs(elapsed)
        ));
    }
    Ok((pass, notes.join("; ")))
}

fn c7_coefficients() -> Check {
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, pr) in [("P1", p1()), ("P2", p2())] {
        let sf = ValueSurface::new(&pr, &SolverConfig::default()).map_err(err)?;
        let mut bad = 0;
        for &s in sf.boundary.grid_s() {
            let a = sf.coeff_a(s).map_err(err)?;
            let b = sf.coeff_b(s).map_err(err)?;
            bad += usize::from(!(a > 0.0 && b > 0.0));
        }
        pass &= bad == 0;
        notes.push(format!("{name}: {bad} non-positive of {} nodes", sf.boundary.len()));
    }
    Ok((pass, notes.join("; ")))
}

fn mc_config(n_paths: usize, seed: u64) -> McConfig {
    McConfig {
        bridge_correction: true,
        ..McConfig::for_rate(0.1, n_paths, 1e-3, seed)
    }
}

fn c8_monte_carlo() -> Check {
    let pr = p1();
    let sf = ValueSurface::new(&pr, &SolverConfig::default()).map_err(err)?;
    let exact = sf.value_v(1.0, 1.0).map_err(err)?;
    let cfg = mc_config(100_000, 1);
    let start = Instant::now();
    let est = simulate_boundary(&pr, &sf.boundary, Payoff::V, 1.0, 1.0, &cfg).map_err(err)?;
    let elapsed = start.elapsed();
    let gap = (est.mean - exact).abs();
    let mass = est.truncation_mass_fraction();
    let pass = gap <= 3.0 * est.std_err && mass < 1e-3 && elapsed < Duration::from_secs(120);
    Ok((
        pass,
        format!(
            "MC {:.6} ± {:.2e} vs {exact:.6} ({:.2} se), truncated mass {mass:.1e} ({} paths unstopped), t_max {}, {:.1} s",
            est.mean,
            est.std_err,
            gap / est.std_err,
            est.n_truncated,
            cfg.t_max,
            secs(elapsed)
        ),
    ))
}

fn c9_optimality() -> Check {
    let pr = p1();
    let sf = ValueSurface::new(&pr, &SolverConfig::default()).map_err(err)?;
    let exact = sf.value_v(1.0, 1.0).map_err(err)?;
    let thetas = [0.7, 0.85, 1.0, 1.15, 1.3];
    let report = perturbation_test(&pr, &sf.boundary, &thetas, 1.0, 1.0, &mc_config(20_000, 2)).map_err(err)?;
    let excess = report.max_pooled_excess();
    let mut pass = excess <= 2.0;
    let mut cells = Vec::new();
    for e in &report.entries {
        pass &= e.estimate.mean <= exact + 3.0 * e.estimate.std_err;
        cells.push(format!("θ {}: {:.5}", e.theta, e.estimate.mean));
    }
    Ok((
        pass,
        format!(
            "{}; best θ {}, max pooled excess {excess:.2}, closed form {exact:.5}",
            cells.join(", "),
            report.best_theta
        ),
    ))
}

fn c10_factorization() -> Check {
    let pr = p1();
    let tilde = ValueSurface::tilde(&pr, &SolverConfig::default()).map_err(err)?;
    let exact = tilde.value_u(1.0, 1.0).map_err(err)?;
    let est = simulate_boundary(&pr, &tilde.boundary, Payoff::U, 1.0, 1.0, &mc_config(40_000, 3)).map_err(err)?;
    let gap = (est.mean - exact).abs();
    Ok((
        gap <= 3.0 * est.std_err,
        format!(
            "MC {:.6} ± {:.2e} vs x·v_tilde {exact:.6} ({:.2} se), μ̃ {:.2}, r̃ {:.2}",
            est.mean,
            est.std_err,
            gap / est.std_err,
            tilde.params.mu,
            tilde.params.r
        ),
    ))
}

fn c11_divergence() -> Check {
    let (mu, sigma, r, p) = (0.1, 0.2, 0.12, 3.0);
    let pr = ModelParams::normalized(mu, sigma, r, 1.0, p).map_err(err)?;
    let (_, n) = roots_by_hand(mu, sigma, r);
    if !(p > n + 1.0) {
        return Err(format!("p = {p} does not exceed n + 1 = {}", n + 1.0));
    }
    let s2 = sigma * sigma;
    let kappa = 0.5 * s2 * (p - 1.0).powi(2) + (mu - 0.5 * s2) * (p - 1.0) - r;
    let library_kappa = divergence_exponent(&pr).map_err(err)?;
    let cfg = McConfig {
        n_paths: 100_000,
        dt: 1e-2,
        t_max: 40.0,
        seed: 4,
        bridge_correction: true,
    };
    let table = divergence_probe(&pr, 1.0, 1.0, &[5.0, 10.0, 20.0, 40.0], &cfg).map_err(err)?;
    let rel = (table.fitted_exponent - kappa).abs() / kappa;
    let pass = table.strictly_increasing && rel <= 0.25 && (library_kappa - kappa).abs() < 1e-14;
    let means: Vec<String> = table.rows.iter().map(|r| format!("{:.3}", r.mean)).collect();
    Ok((
        pass,
        format!(
            "n+1 = {:.3} < p; means [{}], fitted {:.4} vs κ {kappa:.4} ({:.0}% off)",
            n + 1.0,
            means.join(", "),
            table.fitted_exponent,
            100.0 * rel
        ),
    ))
}

fn c12_reduction() -> Check {
    let (mu_hat, sigma_hat, a, b) = (0.02, 0.1, 2.0, 1.0);
    let raw = ModelParams::new(mu_hat, sigma_hat, 0.1, 1.0, a, b).map_err(err)?;
    let hatted = HattedSurface::v(&raw, &SolverConfig::default()).map_err(err)?;
    // X̂² has drift ½σ̂²a(a−1) + μ̂a = 0.05 and volatility σ̂a = 0.2: P1.
    let direct = ValueSurface::new(&p1(), &SolverConfig::default()).map_err(err)?;
    let mut rng = StdRng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s: f64 = rng.random_range(-2.0f64..2.0).exp();
        let x = s * rng.random_range(0.05..1.0);
        let v_hat = hatted.value_v_hat(x, s).map_err(err)?;
        let v = direct.value_v(x * x, s * s).map_err(err)?;
        worst = worst.max((v_hat - v).abs() / v.abs());
    }
    Ok((worst <= 1e-10, format!("max rel gap {worst:.2e} over 100 points")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("root correctness", c1_roots),
        ("regime equivalences", c2_regimes),
        ("separatrix asymptotics", c3_asymptotics),
        ("domain containment and monotonicity", c4_containment),
        ("anchor independence", c5_anchor_independence),
        ("variational inequality", c6_variational_inequality),
        ("coefficient positivity", c7_coefficients),
        ("Monte Carlo agreement", c8_monte_carlo),
        ("boundary optimality", c9_optimality),
        ("u factorization", c10_factorization),
        ("divergence detection", c11_divergence),
        ("reduction consistency", c12_reduction),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} C{:<2} {title} [{:.1} s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            secs(start.elapsed())
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
