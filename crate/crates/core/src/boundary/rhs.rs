//! Right-hand sides of the free-boundary ODE in the original `(H, s)`
//! coordinates and in the rescaled `(h, s)` coordinates, plus the nullcline
//! and envelope helpers used to classify shots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{PRegime, Roots};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRegime {
    #[serde(rename = "p_below_1")]
    PBelow1,
    #[serde(rename = "p_above_1")]
    PAbove1,
}

impl BoundaryRegime {
    pub fn from_p(p: f64) -> Result<Self> {
        if (p - 1.0).abs() <= crate::params::P_EQUAL_ONE_TOL {
            Err(Error::Regime(
                "p = 1 has no separatrix; it reduces to a lookback with floating strike".into(),
            ))
        } else if p < 1.0 {
            Ok(BoundaryRegime::PBelow1)
        } else {
            Ok(BoundaryRegime::PAbove1)
        }
    }

    pub fn as_p_regime(self) -> PRegime {
        match self {
            BoundaryRegime::PBelow1 => PRegime::PBelow1,
            BoundaryRegime::PAbove1 => PRegime::PAbove1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BoundaryRegime::PBelow1 => "p_below_1",
            BoundaryRegime::PAbove1 => "p_above_1",
        }
    }
}

/// The domain `0 < H < [Γ s^p] ∧ s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeDomain {
    pub gamma: f64,
    pub p: f64,
}

impl OdeDomain {
    pub fn upper_envelope(&self, s: f64) -> f64 {
        (self.gamma * s.powf(self.p)).min(s)
    }

    pub fn contains(&self, hbar: f64, s: f64) -> bool {
        s > 0.0 && hbar > 0.0 && hbar < self.upper_envelope(s)
    }
}

/// Where an evaluation left the open domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Exit {
    Above,
    Below,
    Invalid,
}

/// `𝓗(H̄, s)` with raw coefficients and no domain check.
///
/// The ratio `[(m+1)ρⁿ − (n+1)ρᵐ] / [ρⁿ − ρᵐ]`, `ρ = s/H̄`, is divided through by
/// `ρⁿ` so only `ρ^{−(n−m)} ∈ ]0, 1[` is ever formed. The formula is symmetric
/// in `(m, n)`, and so is this evaluation.
pub(crate) fn calh_raw(hbar: f64, s: f64, m: f64, n: f64, p: f64, k: f64) -> f64 {
    let ln_rho = s.ln() - hbar.ln();
    let x = -(n - m) * ln_rho;
    let q = x.exp();
    let one_minus_q = -x.exp_m1();
    let ratio = ((m + 1.0) - (n + 1.0) * q) / one_minus_q;
    let sp = s.powf(p);
    let denom = (m + 1.0) * (n + 1.0) * sp - n * m * k * hbar;
    p * sp / s * hbar * ratio / denom
}

/// Right-hand side `𝓗(H̄, s)` of `Ḣ = 𝓗(H, s)`.
pub fn rhs_big_h(hbar: f64, s: f64, roots: &Roots, p: f64, k: f64) -> Result<f64> {
    let domain = OdeDomain { gamma: roots.gamma, p };
    if !domain.contains(hbar, s) {
        return Err(Error::Domain(format!(
            "(H = {hbar}, s = {s}) is outside 0 < H < min(Γ s^p, s)"
        )));
    }
    Ok(calh_raw(hbar, s, roots.m, roots.n, p, k))
}

/// Derived constants of the ODE for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOde {
    pub m: f64,
    pub n: f64,
    pub p: f64,
    pub k: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub c: f64,
    pub regime: BoundaryRegime,
}

impl BoundaryOde {
    pub fn new(roots: &Roots, p: f64, k: f64) -> Result<Self> {
        let regime = BoundaryRegime::from_p(p)?;
        let c = asymptote_c(roots, p, k)?;
        Ok(BoundaryOde {
            m: roots.m,
            n: roots.n,
            p,
            k,
            gamma: roots.gamma,
            gamma1: roots.gamma1,
            c,
            regime,
        })
    }

    pub fn domain(&self) -> OdeDomain {
        OdeDomain {
            gamma: self.gamma,
            p: self.p,
        }
    }

    /// Exponent `e` of the rescaling `h = H / s^e`.
    pub fn scale_exponent(&self) -> f64 {
        match self.regime {
            BoundaryRegime::PBelow1 => self.p,
            BoundaryRegime::PAbove1 => 1.0,
        }
    }

    pub fn to_h(&self, big_h: f64, s: f64) -> f64 {
        big_h / s.powf(self.scale_exponent())
    }

    pub fn to_big_h(&self, h: f64, s: f64) -> f64 {
        h * s.powf(self.scale_exponent())
    }

    /// Upper edge of the `h` domain at `s`: `Γ ∧ s^{1−p}` or `[Γ s^{p−1}] ∧ 1`.
    pub fn h_upper(&self, s: f64) -> f64 {
        match self.regime {
            BoundaryRegime::PBelow1 => self.gamma.min(s.powf(1.0 - self.p)),
            BoundaryRegime::PAbove1 => (self.gamma * s.powf(self.p - 1.0)).min(1.0),
        }
    }

    pub fn h_upper_at_log(&self, t: f64) -> f64 {
        match self.regime {
            BoundaryRegime::PBelow1 => self.gamma.min(((1.0 - self.p) * t).exp()),
            BoundaryRegime::PAbove1 => (self.gamma * ((self.p - 1.0) * t).exp()).min(1.0),
        }
    }

    /// `dh/d(ln s) = s · 𝔥(h, s)`, evaluated from `t = ln s`.
    pub(crate) fn log_rate(&self, t: f64, h: f64) -> std::result::Result<f64, Exit> {
        if !(h.is_finite() && t.is_finite()) {
            return Err(Exit::Invalid);
        }
        if h <= 0.0 {
            return Err(Exit::Below);
        }
        if h >= self.h_upper_at_log(t) {
            return Err(Exit::Above);
        }
        let (m, n, p, k) = (self.m, self.n, self.p, self.k);
        let d = n - m;
        let nmk = n * m * k;
        let rate = match self.regime {
            BoundaryRegime::PBelow1 => {
                // ln Q with Q = (s^{1−p}/h)^{n−m} > 1 inside the domain.
                let x = -d * ((1.0 - p) * t - h.ln());
                let q = x.exp();
                let one_minus_q = -x.exp_m1();
                let denom = (m + 1.0) * (n + 1.0) - nmk * h;
                let num = -(n * (m + 1.0) - nmk * h) + q * (m * (n + 1.0) - nmk * h);
                h * p * num / (one_minus_q * denom)
            }
            BoundaryRegime::PAbove1 => {
                let x = d * h.ln();
                let e = x.exp();
                let one_minus_e = -x.exp_m1();
                let sp1 = ((p - 1.0) * t).exp();
                let denom = (m + 1.0) * (n + 1.0) * sp1 - nmk * h;
                let lead = (m + 1.0) * (p - 1.0 - n) - (n + 1.0) * (p - 1.0 - m) * e;
                h * (sp1 * lead / (one_minus_e * denom) + nmk * h / denom)
            }
        };
        if rate.is_finite() {
            Ok(rate)
        } else {
            Err(Exit::Invalid)
        }
    }

    /// `𝔥(h̄, s)` in the active regime.
    pub fn rhs_h(&self, hbar: f64, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("s = {s} must be positive")));
        }
        self.log_rate(s.ln(), hbar).map(|rate| rate / s).map_err(|exit| {
            Error::Domain(format!(
                "(h = {hbar}, s = {s}) is outside the rescaled domain ({exit:?})"
            ))
        })
    }

    /// `𝓗(H̄, s)` with the cached roots.
    pub fn rhs_big_h(&self, hbar: f64, s: f64) -> Result<f64> {
        if !self.domain().contains(hbar, s) {
            return Err(Error::Domain(format!(
                "(H = {hbar}, s = {s}) is outside 0 < H < min(Γ s^p, s)"
            )));
        }
        Ok(calh_raw(hbar, s, self.m, self.n, self.p, self.k))
    }

    /// The nullcline `𝔰(h̄)`: `𝔥(h̄, s) < 0` exactly when `s > 𝔰(h̄)`.
    pub fn nullcline_s(&self, hbar: f64) -> Result<f64> {
        if !(hbar > 0.0 && hbar < self.c) {
            return Err(Error::Domain(format!(
                "h = {hbar} is outside ]0, c[ with c = {}",
                self.c
            )));
        }
        let (m, n, p, k) = (self.m, self.n, self.p, self.k);
        let d = n - m;
        let nmk = n * m * k;
        let s = match self.regime {
            BoundaryRegime::PBelow1 => {
                let ratio = (m * (n + 1.0) - nmk * hbar) / (n * (m + 1.0) - nmk * hbar);
                ((ratio.ln() / d + hbar.ln()) / (1.0 - p)).exp()
            }
            BoundaryRegime::PAbove1 => {
                let e = (d * hbar.ln()).exp();
                let num = -nmk * (-(d * hbar.ln()).exp_m1()) * hbar;
                let den = (m + 1.0) * (p - 1.0 - n) - (n + 1.0) * (p - 1.0 - m) * e;
                (num / den).powf(1.0 / (p - 1.0))
            }
        };
        Ok(s)
    }
}

/// `𝔥(h̄, s)` for the regime implied by `p`.
pub fn rhs_h(hbar: f64, s: f64, roots: &Roots, p: f64, k: f64) -> Result<f64> {
    BoundaryOde::new(roots, p, k)?.rhs_h(hbar, s)
}

/// `𝔰(h̄)` for the regime implied by `p`.
pub fn nullcline_s(hbar: f64, roots: &Roots, p: f64, k: f64) -> Result<f64> {
    BoundaryOde::new(roots, p, k)?.nullcline_s(hbar)
}

/// The unique `s† ≥ δ` with `[Γ s†^p] ∧ s† = δ`.
///
/// The envelope is strictly increasing and bounded by both `s` and `Γ s^p`,
/// so the root is the larger of the two candidates `δ` and `(δ/Γ)^{1/p}`.
pub fn s_dagger(delta: f64, domain: &OdeDomain) -> f64 {
    let via_power = (delta / domain.gamma).powf(1.0 / domain.p);
    delta.max(via_power)
}

/// Limit of `H(s)/s^p` (`p < 1`) or `H(s)/s` (`p > 1`) along the separatrix.
pub fn asymptote_c(roots: &Roots, p: f64, k: f64) -> Result<f64> {
    let (m, n) = (roots.m, roots.n);
    match BoundaryRegime::from_p(p)? {
        BoundaryRegime::PBelow1 => {
            let c = (m + 1.0) / (m * k);
            if c > 0.0 && c < roots.gamma {
                Ok(c)
            } else {
                Err(Error::Regime(format!(
                    "asymptote c = {c} is outside ]0, Γ = {}[",
                    roots.gamma
                )))
            }
        }
        BoundaryRegime::PAbove1 => {
            let base = (m + 1.0) * (p - n - 1.0) / ((n + 1.0) * (p - m - 1.0));
            let c = base.powf(1.0 / (n - m));
            if c > 0.0 && c < 1.0 {
                Ok(c)
            } else {
                Err(Error::Regime(format!("asymptote c = {c} is outside ]0, 1[")))
            }
        }
    }
}
