use proptest::prelude::*;
use watermark::params::{normalize_exponents, tilde_params, PRegime};
use watermark::{classify_regime, compute_roots, ModelParams, Roots};

fn params() -> impl Strategy<Value = ModelParams> {
    (-0.2f64..0.3, 0.05f64..0.8, 0.01f64..0.3, 0.2f64..5.0, 0.1f64..3.0)
        .prop_map(|(mu, sigma, r, k, p)| ModelParams::normalized(mu, sigma, r, k, p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn roots_solve_the_quadratic(pr in params()) {
        let roots = compute_roots(&pr).unwrap();
        prop_assert!(roots.m < 0.0 && roots.n > 0.0);
        for k in [roots.m, roots.n] {
            prop_assert!(Roots::quadratic_residual(pr.mu, pr.sigma, pr.r, k) < 1e-12);
        }
        let product = -2.0 * pr.r / pr.sigma2();
        prop_assert!((roots.m * roots.n - product).abs() <= 1e-12 * product.abs());
        let sum = -(2.0 * pr.mu / pr.sigma2() - 1.0);
        prop_assert!((roots.m + roots.n - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
    }

    #[test]
    fn regime_matches_the_drift_rate_equivalences(pr in params()) {
        let roots = compute_roots(&pr).unwrap();
        let report = classify_regime(&pr, &roots);
        prop_assert!(report.m_equivalence_consistent && report.n_equivalence_consistent);
        prop_assert_eq!(roots.m + 1.0 < 0.0, pr.r + pr.mu > pr.sigma2());
        prop_assert_eq!(roots.n > 1.0, pr.mu < pr.r);
        if report.assumption_a_holds {
            prop_assert!(pr.r + pr.mu > pr.sigma2());
            prop_assert!(!report.value_infinite);
        }
        if pr.p() > roots.n + 1.0 + 1e-9 {
            prop_assert!(report.value_infinite);
        }
    }

    #[test]
    fn envelope_coefficient_is_the_smaller_one(pr in params()) {
        let roots = compute_roots(&pr).unwrap();
        if roots.m + 1.0 >= -1e-6 {
            return Ok(());
        }
        let smaller = roots.gamma1.min(roots.gamma2);
        prop_assert!((roots.gamma - smaller).abs() <= 1e-12 * smaller);
    }

    #[test]
    fn rescaling_both_exponents_keeps_p(
        mu in -0.1f64..0.2, sigma in 0.05f64..0.5, a in 0.2f64..3.0, p in 0.1f64..3.0, q in 0.2f64..4.0,
    ) {
        let one = ModelParams::new(mu, sigma, 0.1, 1.0, a, a * p).unwrap();
        let two = ModelParams::new(mu, sigma, 0.1, 1.0, q * a, q * a * p).unwrap();
        let (n1, map1) = normalize_exponents(&one);
        let (n2, map2) = normalize_exponents(&two);
        prop_assert!((n1.p() - n2.p()).abs() <= 1e-12 * p);
        prop_assert!((n2.sigma - sigma * q * a).abs() <= 1e-12 * n2.sigma);
        let expected = 0.5 * sigma * sigma * q * a * (q * a - 1.0) + mu * q * a;
        prop_assert!((n2.mu - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        prop_assert_eq!(map1.exponent, a);
        prop_assert_eq!(map2.exponent, q * a);
    }

    #[test]
    fn tilde_identities_are_exact(pr in params()) {
        let t = tilde_params(&pr);
        // Exact up to the rounding of the stored sum and difference.
        let ulp = |v: f64| f64::EPSILON * v.abs();
        prop_assert!((t.mu_tilde - pr.mu - pr.sigma2()).abs() <= ulp(t.mu_tilde).max(ulp(pr.mu)));
        prop_assert!((t.r_tilde + pr.mu - pr.r).abs() <= ulp(t.r_tilde).max(ulp(pr.mu)).max(ulp(pr.r)));
        prop_assert_eq!(t.report.r_tilde_positive, pr.r > pr.mu);
        if t.report.holds {
            let roots = t.roots.unwrap();
            prop_assert!(roots.m + 1.0 < 0.0 && roots.n + 1.0 - pr.p() > 0.0);
        }
    }
}

#[test]
fn p_regime_follows_the_exponent() {
    for (p, expected) in [
        (0.5, PRegime::PBelow1),
        (1.0, PRegime::PEqual1),
        (1.5, PRegime::PAbove1),
    ] {
        let pr = ModelParams::normalized(0.05, 0.2, 0.1, 1.0, p).unwrap();
        let report = classify_regime(&pr, &compute_roots(&pr).unwrap());
        assert_eq!(report.p_regime, expected);
    }
}
