//! Model parameters, characteristic roots, regime classification and the
//! parameter reductions that map the general problem family onto the
//! normalized `a = 1` problem.
//!
//! The underlying follows `dX = μ X dt + σ X dW` and the discount rate is `r`.
//! Functions `x ↦ x^k` solve `½σ²x²f'' + μxf' − rf = 0` exactly when
//! `½σ²k² + (μ − ½σ²)k − r = 0`; the two roots `m < 0 < n` drive everything
//! downstream.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Half-width of the band around `m + 1 = 0` and `n + 1 − p = 0` that is
/// rejected instead of classified.
pub const BOUNDARY_EQUALITY_TOL: f64 = 1e-10;

/// Half-width of the band around `p = 1`.
pub const P_EQUAL_ONE_TOL: f64 = 1e-12;

/// Market and contract parameters of `(S^b / X^a − K)^+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    pub k: f64,
    pub a: f64,
    pub b: f64,
}

impl ModelParams {
    pub fn new(mu: f64, sigma: f64, r: f64, k: f64, a: f64, b: f64) -> Result<Self> {
        let params = ModelParams { mu, sigma, r, k, a, b };
        params.validate()?;
        Ok(params)
    }

    /// Normalized problem (`a = 1`, `b = p`).
    pub fn normalized(mu: f64, sigma: f64, r: f64, k: f64, p: f64) -> Result<Self> {
        Self::new(mu, sigma, r, k, 1.0, p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("r", self.r),
            ("K", self.k),
            ("a", self.a),
            ("b", self.b),
        ];
        for (field, value) in finite {
            if !value.is_finite() {
                return Err(invalid(field, format!("must be finite, got {value}")));
            }
        }
        if self.sigma == 0.0 {
            return Err(invalid("sigma", "must be nonzero"));
        }
        if self.r <= 0.0 {
            return Err(invalid("r", format!("must be > 0, got {}", self.r)));
        }
        if self.k <= 0.0 {
            return Err(invalid("K", format!("must be > 0, got {}", self.k)));
        }
        if self.a <= 0.0 {
            return Err(invalid("a", format!("must be > 0, got {}", self.a)));
        }
        if self.b <= 0.0 {
            return Err(invalid("b", format!("must be > 0, got {}", self.b)));
        }
        let p = self.p();
        if !(p.is_finite() && p > 0.0) {
            return Err(invalid("b", format!("ratio p = b/a = {p} is not finite and positive")));
        }
        Ok(())
    }

    /// The normalized exponent `p = b / a`.
    pub fn p(&self) -> f64 {
        self.b / self.a
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn is_normalized(&self) -> bool {
        self.a == 1.0
    }
}

/// Roots `m < 0 < n` of `½σ²k² + (μ − ½σ²)k − r = 0` together with the
/// envelope coefficients `Γ₁ = (n+1)(m+1)/(nmK)`, `Γ₂ = 1/K` and `Γ = Γ₁ ∧ Γ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roots {
    pub m: f64,
    pub n: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma: f64,
}

impl Roots {
    /// Relative residual of the characteristic quadratic at `k`.
    pub fn quadratic_residual(mu: f64, sigma: f64, r: f64, k: f64) -> f64 {
        let half_s2 = 0.5 * sigma * sigma;
        let lin = mu - half_s2;
        let value = half_s2 * k * k + lin * k - r;
        let scale = half_s2 * k * k + (lin * k).abs() + r.abs();
        value.abs() / scale
    }
}

/// Real roots of the characteristic quadratic, or `None` when the roots are
/// not of opposite sign (only possible for nonpositive `r`).
pub(crate) fn characteristic_roots(mu: f64, sigma: f64, r: f64) -> Option<(f64, f64)> {
    let qa = 0.5 * sigma * sigma;
    let qb = mu - qa;
    let qc = -r;
    let disc = qb * qb - 4.0 * qa * qc;
    if !(disc > 0.0) {
        return None;
    }
    // Cancellation-free pair: one root from the large-magnitude branch, the
    // other from Vieta's product.
    let sign = if qb >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (qb + sign * disc.sqrt());
    let (k1, k2) = (q / qa, qc / q);
    let (m, n) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
    if m < 0.0 && n > 0.0 {
        Some((m, n))
    } else {
        None
    }
}

fn roots_with(mu: f64, sigma: f64, r: f64, k: f64) -> Option<Roots> {
    let (m, n) = characteristic_roots(mu, sigma, r)?;
    let gamma1 = (n + 1.0) * (m + 1.0) / (n * m * k);
    let gamma2 = 1.0 / k;
    // The case split is taken on the inputs; Γ₁ < Γ₂ ⇔ μ < σ².
    let gamma = if mu < sigma * sigma { gamma1 } else { gamma2 };
    Some(Roots {
        m,
        n,
        gamma1,
        gamma2,
        gamma,
    })
}

/// Characteristic roots and envelope coefficients for the normalized problem.
///
/// Exponents `a`, `b` do not enter; callers with `a ≠ 1` normalize first.
pub fn compute_roots(params: &ModelParams) -> Result<Roots> {
    params.validate()?;
    roots_with(params.mu, params.sigma, params.r, params.k)
        .ok_or_else(|| invalid("r", "characteristic roots are not of opposite sign"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolatedCondition {
    None,
    MPlus1Nonneg,
    NPlus1MinusPNonpos,
    BoundaryEquality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PRegime {
    #[serde(rename = "p_below_1")]
    PBelow1,
    #[serde(rename = "p_equal_1")]
    PEqual1,
    #[serde(rename = "p_above_1")]
    PAbove1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub assumption_a_holds: bool,
    pub value_infinite: bool,
    pub violated_condition: ViolatedCondition,
    pub p_regime: PRegime,
    /// `m + 1 < 0` agrees with `r + μ > σ²`.
    pub m_equivalence_consistent: bool,
    /// `n > 1` agrees with `μ < r`.
    pub n_equivalence_consistent: bool,
    pub m_plus_1: f64,
    pub n_plus_1_minus_p: f64,
}

impl RegimeReport {
    /// True when a finite free boundary can be constructed: Assumption A holds
    /// strictly outside the equality band and `p ≠ 1`.
    pub fn is_solvable(&self) -> bool {
        self.assumption_a_holds
            && self.violated_condition == ViolatedCondition::None
            && self.p_regime != PRegime::PEqual1
    }

    /// Converts an unsolvable report into the matching error.
    pub fn require_solvable(&self) -> Result<()> {
        if self.is_solvable() {
            return Ok(());
        }
        let reason = match (self.violated_condition, self.p_regime) {
            (ViolatedCondition::BoundaryEquality, _) => format!(
                "boundary equality m+1 = {:e}, n+1-p = {:e} is not covered",
                self.m_plus_1, self.n_plus_1_minus_p
            ),
            (ViolatedCondition::MPlus1Nonneg, _) => {
                format!("m+1 = {} > 0: the value function is infinite", self.m_plus_1)
            }
            (ViolatedCondition::NPlus1MinusPNonpos, _) => {
                format!("n+1-p = {} < 0: the value function is infinite", self.n_plus_1_minus_p)
            }
            (_, PRegime::PEqual1) => "p = 1 reduces to a perpetual lookback with floating strike \
                 (drift μ−σ², discount r+μ−σ²); not priced here"
                .to_string(),
            _ => "assumption A does not hold".to_string(),
        };
        Err(Error::Regime(reason))
    }
}

/// Classifies the parameter set into the finite-value regime, the provably
/// infinite regime, or the rejected equality band.
pub fn classify_regime(params: &ModelParams, roots: &Roots) -> RegimeReport {
    let p = params.p();
    let m_plus_1 = roots.m + 1.0;
    let n_plus_1_minus_p = roots.n + 1.0 - p;
    let assumption_a_holds = m_plus_1 < 0.0 && n_plus_1_minus_p > 0.0;
    let value_infinite = m_plus_1 > 0.0 || n_plus_1_minus_p < 0.0;
    let violated_condition =
        if m_plus_1.abs() <= BOUNDARY_EQUALITY_TOL || n_plus_1_minus_p.abs() <= BOUNDARY_EQUALITY_TOL {
            ViolatedCondition::BoundaryEquality
        } else if m_plus_1 > 0.0 {
            ViolatedCondition::MPlus1Nonneg
        } else if n_plus_1_minus_p < 0.0 {
            ViolatedCondition::NPlus1MinusPNonpos
        } else {
            ViolatedCondition::None
        };
    let p_regime = if (p - 1.0).abs() <= P_EQUAL_ONE_TOL {
        PRegime::PEqual1
    } else if p < 1.0 {
        PRegime::PBelow1
    } else {
        PRegime::PAbove1
    };
    let s2 = params.sigma2();
    RegimeReport {
        assumption_a_holds,
        value_infinite,
        violated_condition,
        p_regime,
        m_equivalence_consistent: (m_plus_1 < 0.0) == (params.r + params.mu > s2),
        n_equivalence_consistent: (roots.n > 1.0) == (params.mu < params.r),
        m_plus_1,
        n_plus_1_minus_p,
    }
}

/// Maps `(x̂, ŝ)` of the general problem to `(x̂^a, ŝ^a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateMap {
    pub exponent: f64,
}

impl StateMap {
    pub fn apply(&self, x: f64, s: f64) -> (f64, f64) {
        if self.exponent == 1.0 {
            (x, s)
        } else {
            (x.powf(self.exponent), s.powf(self.exponent))
        }
    }

    pub fn is_identity(&self) -> bool {
        self.exponent == 1.0
    }
}

/// Rewrites `(S^b/X^a − K)^+` as `(S'^p/X' − K)^+` for the power process
/// `X' = X^a`, whose drift is `½σ²a(a−1) + μa` and volatility `σa`.
pub fn normalize_exponents(params: &ModelParams) -> (ModelParams, StateMap) {
    let a = params.a;
    let map = StateMap { exponent: a };
    if a == 1.0 {
        return (*params, map);
    }
    let mu = 0.5 * params.sigma2() * a * (a - 1.0) + params.mu * a;
    let normalized = ModelParams {
        mu,
        sigma: params.sigma * a,
        r: params.r,
        k: params.k,
        a: 1.0,
        b: params.p(),
    };
    (normalized, map)
}

/// Conditions under which `u = x · ṽ` holds with `ṽ` built from `(μ̃, r̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionAnReport {
    pub holds: bool,
    pub r_tilde_positive: bool,
    /// `m̃ + 1 < 0`, required for `ṽ` to be finite. Automatic once `r̃ > 0`
    /// because `r̃ + μ̃ = r + σ² > σ²`.
    pub m_tilde_plus_1_negative: bool,
    pub n_tilde_plus_1_minus_p_positive: bool,
}

/// Parameters of the measure-changed problem behind the `u` payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TildeParams {
    pub mu_tilde: f64,
    pub r_tilde: f64,
    pub sigma: f64,
    pub k: f64,
    pub p: f64,
    /// Valid normalized parameters, present when `r̃ > 0`.
    pub params: Option<ModelParams>,
    pub roots: Option<Roots>,
    pub report: AssumptionAnReport,
}

/// `μ̃ = μ + σ²`, `r̃ = r − μ`, with the roots recomputed under them.
pub fn tilde_params(params: &ModelParams) -> TildeParams {
    let mu_tilde = params.mu + params.sigma2();
    let r_tilde = params.r - params.mu;
    let p = params.p();
    let r_tilde_positive = r_tilde > 0.0;
    let tilde = if r_tilde_positive {
        ModelParams::new(mu_tilde, params.sigma, r_tilde, params.k, 1.0, p).ok()
    } else {
        None
    };
    let roots = tilde.as_ref().and_then(|t| roots_with(t.mu, t.sigma, t.r, t.k));
    let (m_ok, n_ok) = match roots {
        Some(rt) => (
            rt.m + 1.0 < -BOUNDARY_EQUALITY_TOL,
            rt.n + 1.0 - p > BOUNDARY_EQUALITY_TOL,
        ),
        None => (false, false),
    };
    TildeParams {
        mu_tilde,
        r_tilde,
        sigma: params.sigma,
        k: params.k,
        p,
        params: tilde,
        roots,
        report: AssumptionAnReport {
            holds: r_tilde_positive && m_ok && n_ok && (p - 1.0).abs() > P_EQUAL_ONE_TOL,
            r_tilde_positive,
            m_tilde_plus_1_negative: m_ok,
            n_tilde_plus_1_minus_p_positive: n_ok,
        },
    }
}

/// Dynamics of the `K = 0` problem after the power and measure change that
/// turn it into a perpetual Russian option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionDescriptor {
    pub drift: f64,
    pub volatility: f64,
    pub discount: f64,
    /// The value carries the prefactor `x̃^{prefactor_exponent}`.
    pub prefactor_exponent: f64,
    /// State map `x ↦ x^{state_exponent}`.
    pub state_exponent: f64,
}

impl ReductionDescriptor {
    pub fn map_state(&self, x: f64) -> f64 {
        x.powf(self.state_exponent)
    }

    pub fn prefactor(&self, x_tilde: f64) -> f64 {
        x_tilde.powf(self.prefactor_exponent)
    }
}

/// Reduction of `sup E[e^{−rτ} S^b / X^a]` to a Russian option.
///
/// Takes raw dynamics because the family allows `a = 0` and has no strike.
pub fn russian_reduction(mu: f64, sigma: f64, r: f64, a: f64, b: f64) -> Result<ReductionDescriptor> {
    if b <= 0.0 || !b.is_finite() {
        return Err(invalid("b", "must be finite and > 0"));
    }
    if a < 0.0 || !a.is_finite() {
        return Err(invalid("a", "must be finite and >= 0"));
    }
    let s2 = sigma * sigma;
    Ok(ReductionDescriptor {
        drift: 0.5 * s2 * b * (b - 1.0) + mu * b - s2 * a * b,
        volatility: sigma * b,
        discount: r + mu * a - 0.5 * s2 * a * (a + 1.0),
        prefactor_exponent: -a / b,
        state_exponent: b,
    })
}

/// Reduction of the `p = 1` problem to a perpetual lookback with floating
/// strike: `v(x, s) = x⁻¹ sup Ē[e^{−(r+μ−σ²)τ}(S − K X)^+]` with drift `μ − σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookbackReduction {
    pub drift: f64,
    pub volatility: f64,
    pub discount: f64,
}

pub fn lookback_reduction(params: &ModelParams) -> LookbackReduction {
    let s2 = params.sigma2();
    LookbackReduction {
        drift: params.mu - s2,
        volatility: params.sigma,
        discount: params.r + params.mu - s2,
    }
}
