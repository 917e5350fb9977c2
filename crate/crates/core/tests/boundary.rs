use std::sync::OnceLock;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use watermark::boundary::{
    asymptote_c, nullcline_s, rhs_big_h, rhs_h, s_dagger, shoot, shoot_trajectory, BoundaryOde, BoundaryRegime,
    IntegratorConfig, ShotConfig, ShotOutcome,
};
use watermark::{compute_roots, solve_separatrix, FreeBoundary, ModelParams, Roots, SolverConfig};

// 50-digit references from tests/oracles/boundary_oracle.py.
const CALH_P1: f64 = 0.079_674_986_094_371_694_589;
const CALH_P2: f64 = 0.239_024_958_283_115_083_77;
const NULLCLINE_P1_HALF_C: f64 = 0.202_172_124_459_876_893_35;
const NULLCLINE_P2_HALF_C: f64 = 0.672_007_758_081_518_465_07;
const C_P1: f64 = 0.678_300_943_397_169_809_43;
const C_P2: f64 = 0.744_283_167_217_720_190_24;

fn params(p: f64) -> ModelParams {
    ModelParams::normalized(0.05, 0.2, 0.1, 1.0, p).unwrap()
}

fn roots() -> Roots {
    compute_roots(&params(0.5)).unwrap()
}

fn solved(p: f64) -> &'static FreeBoundary {
    static P1: OnceLock<FreeBoundary> = OnceLock::new();
    static P2: OnceLock<FreeBoundary> = OnceLock::new();
    let cell = if p < 1.0 { &P1 } else { &P2 };
    cell.get_or_init(|| {
        let pr = params(p);
        solve_separatrix(&pr, &compute_roots(&pr).unwrap(), &SolverConfig::default()).unwrap()
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn calh_matches_high_precision_reference() {
    let r = roots();
    assert!(rel(rhs_big_h(0.3, 1.0, &r, 0.5, 1.0).unwrap(), CALH_P1) < 1e-10);
    assert!(rel(rhs_big_h(0.3, 1.0, &r, 1.5, 1.0).unwrap(), CALH_P2) < 1e-10);
}

#[test]
fn asymptote_constants_match_reference() {
    let r = roots();
    let c1 = asymptote_c(&r, 0.5, 1.0).unwrap();
    let c2 = asymptote_c(&r, 1.5, 1.0).unwrap();
    assert!(rel(c1, C_P1) < 1e-13 && c1 < r.gamma);
    assert!(rel(c2, C_P2) < 1e-13 && c2 < 1.0);
}

#[test]
fn nullcline_matches_reference_and_splits_the_sign() {
    let r = roots();
    for (p, c, reference) in [(0.5, C_P1, NULLCLINE_P1_HALF_C), (1.5, C_P2, NULLCLINE_P2_HALF_C)] {
        let s = nullcline_s(0.5 * c, &r, p, 1.0).unwrap();
        assert!(rel(s, reference) < 1e-10, "p = {p}: {s}");
        assert!(rhs_h(0.5 * c, s * (1.0 - 1e-6), &r, p, 1.0).unwrap() > 0.0);
        assert!(rhs_h(0.5 * c, s * (1.0 + 1e-6), &r, p, 1.0).unwrap() < 0.0);
        assert!(rhs_h(0.5 * c, s, &r, p, 1.0).unwrap().abs() < 1e-12);
    }
}

#[test]
fn nullcline_increases_and_diverges_at_c() {
    let r = roots();
    for p in [0.5, 1.5] {
        let c = asymptote_c(&r, p, 1.0).unwrap();
        let mut prev = 0.0;
        for i in 1..2000 {
            let s = nullcline_s(c * i as f64 / 2000.0, &r, p, 1.0).unwrap();
            assert!(s > prev, "p = {p}, i = {i}");
            prev = s;
        }
        assert!(nullcline_s(c * (1.0 - 1e-9), &r, p, 1.0).unwrap() > 1e3);
        assert!(nullcline_s(c, &r, p, 1.0).is_err());
        assert!(nullcline_s(0.0, &r, p, 1.0).is_err());
    }
}

#[test]
fn calh_is_positive_throughout_the_domain() {
    let mut rng = StdRng::seed_from_u64(7);
    for p in [0.5, 1.5] {
        let ode = BoundaryOde::new(&roots(), p, 1.0).unwrap();
        let dom = ode.domain();
        for _ in 0..100_000 {
            let s = 10f64.powf(rng.random_range(-4.0..4.0));
            let big_h = dom.upper_envelope(s) * rng.random_range(1e-6..1.0 - 1e-9);
            let v = ode.rhs_big_h(big_h, s).unwrap();
            assert!(v > 0.0, "p = {p}, H = {big_h}, s = {s}: {v}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rescaled_rhs_is_the_chain_rule_transform(
        log_s in -4.0f64..4.0, frac in 1e-4f64..0.999, below in any::<bool>(),
    ) {
        let p = if below { 0.5 } else { 1.5 };
        let ode = BoundaryOde::new(&roots(), p, 1.0).unwrap();
        let s = 10f64.powf(log_s);
        let h = ode.h_upper(s) * frac;
        let big_h = ode.to_big_h(h, s);
        let q = ode.scale_exponent();
        let expected = s.powf(-q) * ode.rhs_big_h(big_h, s).unwrap() - q * h / s;
        let got = ode.rhs_h(h, s).unwrap();
        let scale = (s.powf(-q) * ode.rhs_big_h(big_h, s).unwrap()).abs() + (q * h / s).abs();
        prop_assert!((got - expected).abs() <= 1e-10 * scale, "{} vs {}", got, expected);
    }

    #[test]
    fn c_stays_below_gamma(mu in -0.1f64..0.2, sigma in 0.05f64..0.6, r in 0.02f64..0.3, p in 0.05f64..0.95) {
        let pr = ModelParams::normalized(mu, sigma, r, 1.0, p).unwrap();
        let roots = compute_roots(&pr).unwrap();
        if roots.m + 1.0 < -1e-6 {
            let c = asymptote_c(&roots, p, 1.0).unwrap();
            prop_assert!(c > 0.0 && c < roots.gamma);
        }
    }
}

#[test]
fn s_dagger_sits_on_the_envelope() {
    let ode = BoundaryOde::new(&roots(), 0.5, 1.0).unwrap();
    let dom = ode.domain();
    let sd = s_dagger(0.25, &dom);
    assert_eq!(sd, 0.25);
    assert!((dom.upper_envelope(sd) - 0.25).abs() < 1e-14);
    for delta in [1e-3, 0.1, 0.5, 0.9, 2.0, 10.0] {
        for p in [0.5, 1.5] {
            let dom = BoundaryOde::new(&roots(), p, 1.0).unwrap().domain();
            let sd = s_dagger(delta, &dom);
            assert!(sd >= delta);
            assert!(rel(dom.upper_envelope(sd), delta) < 1e-14);
        }
    }
}

#[test]
fn shots_split_into_the_two_families() {
    for p in [0.5, 1.5] {
        let fb = solved(p);
        let integ = IntegratorConfig::default();
        let shot = ShotConfig::default();
        let r = roots();
        let sd = s_dagger(fb.delta, &fb.domain());
        let low = shoot(sd * (1.0 + 1e-6), fb.delta, &r, p, 1.0, &integ, &shot).unwrap();
        match low.outcome {
            ShotOutcome::HitUpperBoundary { s_hat } => {
                assert!(s_hat.is_finite() && s_hat > sd);
                let ode = BoundaryOde::new(&r, p, 1.0).unwrap();
                assert!(ode.h_upper(low.terminal_s) - low.terminal_h < 1e-6);
            }
            other => panic!("p = {p}: {other:?}"),
        }
        let high = shoot(fb.s_star * 100.0, fb.delta, &r, p, 1.0, &integ, &shot).unwrap();
        assert_eq!(high.outcome, ShotOutcome::FellBelowSeparatrixBand, "p = {p}");
    }
}

/// `h` of a recorded trajectory at `s`, linear in `ln s` between nodes.
fn h_at(nodes: &[(f64, f64)], s: f64) -> Option<f64> {
    let i = nodes.partition_point(|&(x, _)| x < s);
    if i == 0 || i == nodes.len() {
        return None;
    }
    let (s0, h0) = nodes[i - 1];
    let (s1, h1) = nodes[i];
    let w = (s.ln() - s0.ln()) / (s1.ln() - s0.ln());
    Some(h0 + w * (h1 - h0))
}

#[test]
fn shots_from_lower_anchors_stay_above() {
    let integ = IntegratorConfig::default();
    let shot = ShotConfig::default();
    for p in [0.5, 1.5] {
        let fb = solved(p);
        let anchors = [0.999, 0.9999, 1.0001, 1.001, 1.5].map(|f| fb.s_star * f);
        let trajs: Vec<Vec<(f64, f64)>> = anchors
            .iter()
            .map(|&s| {
                shoot_trajectory(s, fb.delta, &roots(), p, 1.0, &integ, &shot)
                    .unwrap()
                    .1
            })
            .collect();
        for pair in trajs.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            let mut compared = 0;
            for &(s, h_hi) in hi.iter().step_by(5) {
                if let Some(h_lo) = h_at(lo, s) {
                    assert!(h_lo > h_hi, "p = {p}, s = {s}: {h_lo} <= {h_hi}");
                    compared += 1;
                }
            }
            assert!(compared > 0);
        }
    }
}

#[test]
fn solved_boundaries_satisfy_the_invariants() {
    for (p, c) in [(0.5, C_P1), (1.5, C_P2)] {
        let fb = solved(p);
        fb.check_invariants().unwrap();
        assert_eq!(
            fb.regime,
            if p < 1.0 {
                BoundaryRegime::PBelow1
            } else {
                BoundaryRegime::PAbove1
            }
        );
        assert!(rel(fb.c, c) < 1e-13);
        assert!(fb.s_max() >= 1e4 * fb.s_star);
        let h_end = fb.grid_h().last().unwrap() / fb.asymptote(fb.s_max()) * fb.c;
        assert!((h_end - fb.c).abs() < 1e-3, "p = {p}: {h_end}");
        assert!(fb.grid_h()[0] < 1e-6 * fb.delta * 1.0001);
        assert!(fb.bracket_width <= 1e-12 * fb.s_star * 1.0001);
        assert!(fb.bisection.anchor_mismatch < 1e-6);
        assert!(rel(fb.eval_h(fb.s_star).unwrap(), fb.delta) < 1e-6);
    }
}

#[test]
fn separatrix_rises_to_c_from_below_with_matching_slope_sign() {
    for p in [0.5, 1.5] {
        let fb = solved(p);
        let ode = BoundaryOde::new(&roots(), p, 1.0).unwrap();
        for (s, big_h) in fb.grid() {
            let h = ode.to_h(big_h, s);
            assert!(h < fb.c);
            let slope = ode.rhs_h(h, s).unwrap();
            let crossing = ode.nullcline_s(h).unwrap();
            if (s - crossing).abs() > 1e-6 * crossing {
                assert_eq!(slope > 0.0, s < crossing, "p = {p}, s = {s}");
            }
        }
    }
}

#[test]
fn eval_h_reproduces_nodes_and_extends_by_rule() {
    for p in [0.5, 1.5] {
        let fb = solved(p);
        for (s, h) in fb.grid().step_by(37) {
            assert_eq!(fb.eval_h(s).unwrap(), h);
        }
        let far = 2.0 * fb.s_max();
        assert_eq!(fb.eval_h(far).unwrap(), fb.asymptote(far));
        let tiny = fb.s_min() / 100.0;
        let v = fb.eval_h(tiny).unwrap();
        assert!(v > 0.0 && v < fb.domain().upper_envelope(tiny));
        assert!(fb.eval_h(0.0).is_err());
        assert!(fb.eval_h(-1.0).is_err());
    }
}

#[test]
fn eval_h_is_strictly_increasing() {
    let mut rng = StdRng::seed_from_u64(11);
    for p in [0.5, 1.5] {
        let fb = solved(p);
        let (lo, hi) = (fb.s_min().ln() - 3.0, fb.s_max().ln() + 3.0);
        for _ in 0..10_000 {
            let a = rng.random_range(lo..hi).exp();
            let b = rng.random_range(lo..hi).exp();
            if a == b {
                continue;
            }
            let (s1, s2) = if a < b { (a, b) } else { (b, a) };
            let (h1, h2) = (fb.eval_h(s1).unwrap(), fb.eval_h(s2).unwrap());
            assert!(h1 < h2, "p = {p}: H({s1}) = {h1} >= H({s2}) = {h2}");
        }
    }
}

#[test]
fn boundary_does_not_depend_on_the_anchor() {
    for p in [0.5, 1.5] {
        let fb = solved(p);
        let pr = params(p);
        let cfg = SolverConfig {
            delta: Some(2.0 * fb.delta),
            ..SolverConfig::default()
        };
        let other = solve_separatrix(&pr, &compute_roots(&pr).unwrap(), &cfg).unwrap();
        let lo = fb.s_min().max(other.s_min());
        let hi = fb.s_max().min(other.s_max());
        let mut worst: f64 = 0.0;
        for (s, h) in fb.grid().filter(|&(s, _)| s >= lo && s <= hi).step_by(7) {
            worst = worst.max(rel(other.resolve(s).unwrap(), h));
        }
        assert!(worst < 10.0 * cfg.bisection_tol, "p = {p}: {worst:e}");
    }
}

#[test]
fn csv_export_has_header_and_full_precision() {
    let fb = solved(0.5);
    let csv = fb.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("s,H"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), fb.len());
    for ((s, h), (gs, gh)) in rows.iter().zip(fb.grid()) {
        assert_eq!((*s, *h), (gs, gh));
    }
    let d = fb.descriptor();
    let json = serde_json::to_value(&d).unwrap();
    assert_eq!(json["regime"], "p_below_1");
    assert_eq!(json["grid_size"], fb.len());
    assert_eq!(
        serde_json::to_value(solved(1.5).descriptor()).unwrap()["regime"],
        "p_above_1"
    );
}

#[test]
fn unsolvable_regimes_are_refused() {
    let lookback = params(1.0);
    assert!(solve_separatrix(&lookback, &compute_roots(&lookback).unwrap(), &SolverConfig::default()).is_err());
    let infinite = ModelParams::normalized(0.05, 0.2, 0.06, 1.0, 3.0).unwrap();
    let err = solve_separatrix(&infinite, &compute_roots(&infinite).unwrap(), &SolverConfig::default());
    assert!(matches!(err, Err(watermark::Error::Regime(_))));
    let raw = ModelParams::new(0.05, 0.2, 0.1, 1.0, 2.0, 1.0).unwrap();
    assert!(matches!(
        solve_separatrix(&raw, &compute_roots(&raw).unwrap(), &SolverConfig::default()),
        Err(watermark::Error::Misuse(_))
    ));
}
