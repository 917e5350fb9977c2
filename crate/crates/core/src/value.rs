//! Value functions built on a solved free boundary.
//!
//! Below `H(s)` the value is the payoff `s^p/x − K`; between `H(s)` and the
//! diagonal it is `A(s) x^n + B(s) x^m`, with `A` and `B` fixed by value
//! and slope matching at `x = H(s)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{solve_separatrix, FreeBoundary, SolverConfig};
use crate::error::{Error, Result};
use crate::params::{classify_regime, compute_roots, normalize_exponents, tilde_params, ModelParams, Roots, StateMap};

/// Result of pricing: a number, or `+∞` when the regime admits no finite value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Valuation {
    Finite(f64),
    Infinite,
}

impl Valuation {
    pub fn finite(self) -> Option<f64> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Valuation::Infinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Stopping,
    Waiting,
}

/// Coefficients of the waiting branch written against the boundary:
/// `w = a (x/H)^n + b (x/H)^m`, so `A = a H^{−n}` and `B = b H^{−m}`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Branch {
    h: f64,
    a: f64,
    b: f64,
}

/// The value function of the normalized problem.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pub params: ModelParams,
    pub roots: Roots,
    pub boundary: FreeBoundary,
}

fn check_wedge(x: f64, s: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("x = {x} must be positive and finite")));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("s = {s} must be positive and finite")));
    }
    if x > s {
        return Err(Error::Domain(format!("x = {x} exceeds s = {s}")));
    }
    Ok(())
}

impl ValueSurface {
    /// Solves the boundary for normalized parameters.
    pub fn new(params: &ModelParams, cfg: &SolverConfig) -> Result<Self> {
        let roots = compute_roots(params)?;
        classify_regime(params, &roots).require_solvable()?;
        let boundary = solve_separatrix(params, &roots, cfg)?;
        Ok(ValueSurface {
            params: *params,
            roots,
            boundary,
        })
    }

    /// The surface of the measure-changed problem `(μ + σ², r − μ)` behind `u`.
    pub fn tilde(params: &ModelParams, cfg: &SolverConfig) -> Result<Self> {
        let tp = tilde_params(params);
        match (tp.report.holds, tp.params) {
            (true, Some(tilde)) => Self::new(&tilde, cfg),
            _ => Err(Error::Regime(format!(
                "u = x·ṽ needs r − μ > 0, m̃ + 1 < 0 and ñ + 1 − p > 0 with p ≠ 1: {:?}",
                tp.report
            ))),
        }
    }

    pub fn p(&self) -> f64 {
        self.params.p()
    }

    fn branch(&self, s: f64) -> Result<Branch> {
        let h = self.boundary.eval_h(s)?;
        Ok(self.branch_at(s, h))
    }

    fn branch_at(&self, s: f64, h: f64) -> Branch {
        let Roots { m, n, .. } = self.roots;
        let k = self.params.k;
        let rho = s.powf(self.p()) / h;
        Branch {
            h,
            a: (-(m + 1.0) * rho + m * k) / (n - m),
            b: ((n + 1.0) * rho - n * k) / (n - m),
        }
    }

    /// `A(s) = [−(m+1) s^p / H + mK] / (n−m) · H^{−n}`.
    pub fn coeff_a(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("s = {s} must be positive")));
        }
        let br = self.branch(s)?;
        Ok(signed_scale(br.a, -self.roots.n * br.h.ln()))
    }

    /// `B(s) = [(n+1) s^p / H − nK] / (n−m) · H^{−m}`.
    pub fn coeff_b(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("s = {s} must be positive")));
        }
        let br = self.branch(s)?;
        Ok(signed_scale(br.b, -self.roots.m * br.h.ln()))
    }

    /// `(s, A(s) H^n, B(s) H^m)` at each boundary grid node. The scaled
    /// coefficients carry the signs of `A` and `B` without overflow.
    pub fn scaled_coefficients_on_grid(&self) -> Vec<(f64, f64, f64)> {
        self.boundary
            .grid()
            .map(|(s, h)| {
                let br = self.branch_at(s, h);
                (s, br.a, br.b)
            })
            .collect()
    }

    pub fn in_stopping_region(&self, x: f64, s: f64) -> Result<bool> {
        check_wedge(x, s)?;
        Ok(x <= self.boundary.eval_h(s)?)
    }

    pub fn region(&self, x: f64, s: f64) -> Result<Region> {
        Ok(if self.in_stopping_region(x, s)? {
            Region::Stopping
        } else {
            Region::Waiting
        })
    }

    /// The value `v(x, s)` on `0 < x ≤ s`.
    pub fn value_v(&self, x: f64, s: f64) -> Result<f64> {
        check_wedge(x, s)?;
        let br = self.branch(s)?;
        Ok(self.eval_with(&br, x, s))
    }

    fn eval_with(&self, br: &Branch, x: f64, s: f64) -> f64 {
        if x <= br.h {
            s.powf(self.p()) / x - self.params.k
        } else {
            waiting_value(br, x, self.roots.m, self.roots.n)
        }
    }

    /// `u(x, s) = x · v(x, s)` when `self` is the measure-changed surface.
    pub fn value_u(&self, x: f64, s: f64) -> Result<f64> {
        Ok(x * self.value_v(x, s)?)
    }

    /// Checks the variational inequality on a log-spaced sample of the wedge.
    pub fn verify_vi(&self, cfg: &ViSampleConfig) -> ViReport {
        verify(self, cfg)
    }
}

fn signed_scale(coef: f64, log_factor: f64) -> f64 {
    if coef == 0.0 {
        return 0.0;
    }
    coef.signum() * (coef.abs().ln() + log_factor).exp()
}

fn waiting_value(br: &Branch, x: f64, m: f64, n: f64) -> f64 {
    let lr = (x / br.h).ln();
    br.a * (n * lr).exp() + br.b * (m * lr).exp()
}

/// Waiting-branch terms `(a (x/H)^n, b (x/H)^m)`.
fn waiting_terms(br: &Branch, x: f64, m: f64, n: f64) -> (f64, f64) {
    let lr = (x / br.h).ln();
    (br.a * (n * lr).exp(), br.b * (m * lr).exp())
}

/// Builds the surface and prices at one point, returning `Infinite` for
/// regimes where the value is provably unbounded.
pub fn price_v(params: &ModelParams, x: f64, s: f64, cfg: &SolverConfig) -> Result<Valuation> {
    check_wedge(x, s)?;
    let (norm, map) = normalize_exponents(params);
    let roots = compute_roots(&norm)?;
    let report = classify_regime(&norm, &roots);
    if report.value_infinite && !report.is_solvable() {
        return Ok(Valuation::Infinite);
    }
    let surface = ValueSurface::new(&norm, cfg)?;
    let (xa, sa) = map.apply(x, s);
    surface.value_v(xa, sa).map(Valuation::Finite)
}

/// A surface for general exponents `(S^b / X^a − K)^+`.
#[derive(Debug, Clone)]
pub struct HattedSurface {
    pub raw: ModelParams,
    pub map: StateMap,
    pub surface: ValueSurface,
}

impl HattedSurface {
    /// `v̂` surface: the normalized problem under the power process `X^a`.
    pub fn v(raw: &ModelParams, cfg: &SolverConfig) -> Result<Self> {
        let (norm, map) = normalize_exponents(raw);
        Ok(HattedSurface {
            raw: *raw,
            map,
            surface: ValueSurface::new(&norm, cfg)?,
        })
    }

    /// `û` surface: the measure-changed problem of the normalized one.
    pub fn u(raw: &ModelParams, cfg: &SolverConfig) -> Result<Self> {
        let (norm, map) = normalize_exponents(raw);
        Ok(HattedSurface {
            raw: *raw,
            map,
            surface: ValueSurface::tilde(&norm, cfg)?,
        })
    }

    /// `v̂(x̂, ŝ) = v(x̂^a, ŝ^a)`.
    pub fn value_v_hat(&self, x_hat: f64, s_hat: f64) -> Result<f64> {
        check_wedge(x_hat, s_hat)?;
        let (x, s) = self.map.apply(x_hat, s_hat);
        self.surface.value_v(x, s)
    }

    /// `û(x̂, ŝ) = u(x̂^a, ŝ^a)`.
    pub fn value_u_hat(&self, x_hat: f64, s_hat: f64) -> Result<f64> {
        check_wedge(x_hat, s_hat)?;
        let (x, s) = self.map.apply(x_hat, s_hat);
        self.surface.value_u(x, s)
    }
}

pub fn value_v_hat(x_hat: f64, s_hat: f64, raw: &ModelParams, cfg: &SolverConfig) -> Result<f64> {
    HattedSurface::v(raw, cfg)?.value_v_hat(x_hat, s_hat)
}

pub fn value_u_hat(x_hat: f64, s_hat: f64, raw: &ModelParams, cfg: &SolverConfig) -> Result<f64> {
    HattedSurface::u(raw, cfg)?.value_u_hat(x_hat, s_hat)
}

/// Sampling of the wedge for [`ValueSurface::verify_vi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViSampleConfig {
    /// Log-spaced `s` in `[2 s_min, s_max / 2]`.
    pub n_s: usize,
    /// Log-spaced `x/s` in `[H(s)/s · (1 + 1e-6), 1]`.
    pub n_waiting: usize,
    /// Log-spaced `x/s` in `]0, H(s)/s]`.
    pub n_stopping: usize,
    /// Relative steps of the two one-sided stencils for `w_s(s, s)`.
    pub fd_step: f64,
}

impl Default for ViSampleConfig {
    fn default() -> Self {
        ViSampleConfig {
            n_s: 200,
            n_waiting: 100,
            n_stopping: 20,
            fd_step: 1e-3,
        }
    }
}

/// Worst-case diagnostics of the variational inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViReport {
    /// `|½σ²x²w_xx + μxw_x − rw|` over the sum of the term magnitudes.
    pub max_ode_residual_w: f64,
    /// Smallest `(w − s^p/x + K) / (s^p/x + K)` in the waiting region.
    pub min_obstacle_gap_w: f64,
    /// Largest `f(x, s)` in the stopping region.
    pub max_f_in_s: f64,
    pub smooth_fit_value_err: f64,
    pub smooth_fit_slope_err: f64,
    /// `|w_s(s, s)|` over the summed magnitudes of its analytic pieces.
    pub max_bc_err: f64,
    /// Smallest `H² g_xx(H+, s) / (s^p/H)`; positive when `g` curves up
    /// away from the boundary.
    pub min_gxx_at_boundary: f64,
    /// Smallest `w` seen; positivity of the value.
    pub min_w: f64,
    pub growth_gamma: f64,
    pub growth_exponent: f64,
    pub growth_c: f64,
    pub growth_ok: bool,
    pub n_waiting_samples: usize,
    pub n_stopping_samples: usize,
    pub n_boundary_nodes: usize,
}

/// Acceptance thresholds for a [`ViReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViTolerances {
    pub ode_residual: f64,
    pub obstacle_gap: f64,
    pub f_in_s: f64,
    pub smooth_fit: f64,
    pub bc: f64,
}

impl Default for ViTolerances {
    fn default() -> Self {
        ViTolerances {
            ode_residual: 1e-9,
            obstacle_gap: 1e-9,
            f_in_s: 1e-12,
            smooth_fit: 1e-8,
            bc: 1e-4,
        }
    }
}

impl ViReport {
    /// Names of the checks that exceed `tol`; empty when all pass.
    pub fn failures(&self, tol: &ViTolerances) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.max_ode_residual_w < tol.ode_residual) {
            out.push("ode_residual");
        }
        if !(self.min_obstacle_gap_w >= -tol.obstacle_gap) {
            out.push("obstacle_gap");
        }
        if !(self.max_f_in_s <= tol.f_in_s) {
            out.push("f_in_stopping_region");
        }
        if !(self.smooth_fit_value_err < tol.smooth_fit) {
            out.push("smooth_fit_value");
        }
        if !(self.smooth_fit_slope_err < tol.smooth_fit) {
            out.push("smooth_fit_slope");
        }
        if !(self.max_bc_err < tol.bc) {
            out.push("boundary_condition");
        }
        if !(self.min_gxx_at_boundary > 0.0) {
            out.push("gxx_at_boundary");
        }
        if !(self.min_w > 0.0) {
            out.push("positivity");
        }
        if !self.growth_ok {
            out.push("growth");
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct RowStats {
    ode: f64,
    gap: f64,
    f: f64,
    fit_v: f64,
    fit_d: f64,
    bc: f64,
    gxx: f64,
    min_w: f64,
    n_w: usize,
    n_s: usize,
    w_boundary: f64,
}

impl RowStats {
    fn empty() -> Self {
        RowStats {
            ode: 0.0,
            gap: f64::INFINITY,
            f: f64::NEG_INFINITY,
            fit_v: 0.0,
            fit_d: 0.0,
            bc: 0.0,
            gxx: f64::INFINITY,
            min_w: f64::INFINITY,
            n_w: 0,
            n_s: 0,
            w_boundary: f64::NAN,
        }
    }

    fn merge(self, o: RowStats) -> RowStats {
        RowStats {
            ode: self.ode.max(o.ode),
            gap: self.gap.min(o.gap),
            f: self.f.max(o.f),
            fit_v: self.fit_v.max(o.fit_v),
            fit_d: self.fit_d.max(o.fit_d),
            bc: self.bc.max(o.bc),
            gxx: self.gxx.min(o.gxx),
            min_w: self.min_w.min(o.min_w),
            n_w: self.n_w + o.n_w,
            n_s: self.n_s + o.n_s,
            w_boundary: f64::NAN,
        }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

impl ValueSurface {
    /// Smooth-fit mismatch and `g_xx(H+)` at a boundary point.
    fn boundary_stats(&self, s: f64, br: &Branch) -> (f64, f64, f64) {
        let Roots { m, n, .. } = self.roots;
        let sp = s.powf(self.p());
        let k = self.params.k;
        let h = br.h;
        let obstacle = sp / h - k;
        let waiting = br.a + br.b;
        let fit_v = (waiting - obstacle).abs() / obstacle.abs().max(sp / h);
        let d_obstacle = -sp / (h * h);
        let d_waiting = (n * br.a + m * br.b) / h;
        let fit_d = (d_waiting - d_obstacle).abs() / d_obstacle.abs();
        let wxx = (n * (n - 1.0) * br.a + m * (m - 1.0) * br.b) / (h * h);
        let gxx = wxx - 2.0 * sp / (h * h * h);
        (fit_v, fit_d, gxx * h * h / (sp / h))
    }

    /// Richardson-extrapolated inward estimate of `w_s(s, s)` against the
    /// magnitude of its two analytic terms.
    pub fn bc_error(&self, s: f64, step: f64) -> Result<f64> {
        let Roots { m, n, .. } = self.roots;
        let w = |sv: f64| -> Result<f64> {
            let br = self.branch(sv)?;
            Ok(waiting_value(&br, s, m, n))
        };
        let stencil = |d: f64| -> Result<f64> {
            let ds = d * s;
            Ok((-3.0 * w(s)? + 4.0 * w(s + ds)? - w(s + 2.0 * ds)?) / (2.0 * ds))
        };
        let coarse = stencil(step)?;
        let fine = stencil(0.5 * step)?;
        let estimate = (4.0 * fine - coarse) / 3.0;

        // Magnitudes of the separate pieces of A'(s) s^n + B'(s) s^m, with
        // H' from the boundary ODE. Their sum cancels exactly on the
        // separatrix, so the pieces set the scale.
        let h = self.boundary.eval_h(s)?;
        let dh = self.boundary.ode.rhs_big_h(h, s)?;
        let p = self.p();
        let k = self.params.k;
        let rho = s.powf(p) / h;
        let lr = (s / h).ln();
        let xn = (n * lr).exp();
        let xm = (m * lr).exp();
        let a = (-(m + 1.0) * rho + m * k) / (n - m);
        let b = ((n + 1.0) * rho - n * k) / (n - m);
        let drho = rho * (p / s).abs() + rho * (dh / h).abs();
        let piece_a = ((m + 1.0) * drho / (n - m)).abs() + (n * a * dh / h).abs();
        let piece_b = ((n + 1.0) * drho / (n - m)).abs() + (m * b * dh / h).abs();
        let scale = piece_a * xn + piece_b * xm;
        Ok(estimate.abs() / scale)
    }

    fn row(&self, s: f64, cfg: &ViSampleConfig) -> RowStats {
        let Roots { m, n, .. } = self.roots;
        let ModelParams { mu, sigma, r, k, .. } = self.params;
        let half_s2 = 0.5 * sigma * sigma;
        let sp = s.powf(self.p());
        let mut st = RowStats::empty();
        let br = match self.branch(s) {
            Ok(br) => br,
            Err(_) => {
                st.gap = f64::NEG_INFINITY;
                return st;
            }
        };

        let lo = (br.h / s * (1.0 + 1e-6)).min(1.0);
        for ratio in log_space(lo, 1.0, cfg.n_waiting) {
            let x = ratio * s;
            if x <= br.h {
                continue;
            }
            let (ta, tb) = waiting_terms(&br, x, m, n);
            let w = ta + tb;
            let xw_x = n * ta + m * tb;
            let x2w_xx = n * (n - 1.0) * ta + m * (m - 1.0) * tb;
            let res = half_s2 * x2w_xx + mu * xw_x - r * w;
            let scale = (half_s2 * x2w_xx).abs() + (mu * xw_x).abs() + (r * w).abs();
            st.ode = st.ode.max(res.abs() / scale);
            let obstacle = sp / x;
            st.gap = st.gap.min((w - obstacle + k) / (obstacle + k));
            st.min_w = st.min_w.min(w);
            st.n_w += 1;
        }

        let kappa = half_s2 - (mu - half_s2) - r;
        for ratio in log_space(br.h / s * 1e-6, br.h / s, cfg.n_stopping) {
            let x = (ratio * s).min(br.h);
            let f = kappa * sp / x + r * k;
            st.f = st.f.max(f);
            st.min_w = st.min_w.min(self.eval_with(&br, x, s));
            st.n_s += 1;
        }

        let (fit_v, fit_d, gxx) = self.boundary_stats(s, &br);
        st.fit_v = fit_v;
        st.fit_d = fit_d;
        st.gxx = gxx;
        st.bc = self.bc_error(s, cfg.fd_step).unwrap_or(f64::INFINITY);
        st.w_boundary = br.a + br.b;
        st
    }
}

fn verify(surface: &ValueSurface, cfg: &ViSampleConfig) -> ViReport {
    let fb = &surface.boundary;
    let s_grid = log_space(2.0 * fb.s_min(), 0.5 * fb.s_max(), cfg.n_s);
    let rows: Vec<RowStats> = s_grid.par_iter().map(|&s| surface.row(s, cfg)).collect();
    let nodes: Vec<(f64, f64, f64)> = fb
        .grid()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(s, h)| surface.boundary_stats(s, &surface.branch_at(s, h)))
        .collect();

    let mut total = rows.iter().fold(RowStats::empty(), |acc, r| acc.merge(*r));
    for &(fit_v, fit_d, gxx) in &nodes {
        total.fit_v = total.fit_v.max(fit_v);
        total.fit_d = total.fit_d.max(fit_d);
        total.gxx = total.gxx.min(gxx);
    }

    // Growth of w(H(s)+, s) along s against s^γ, fitted on s ≥ 1.
    let p = surface.p();
    let gamma = if p < 1.0 { surface.roots.n * (1.0 - p) } else { p - 1.0 };
    let pts: Vec<(f64, f64)> = s_grid
        .iter()
        .zip(&rows)
        .filter(|(s, r)| **s >= 1.0 && r.w_boundary > 0.0)
        .map(|(s, r)| (s.ln(), r.w_boundary.ln()))
        .collect();
    let growth_exponent = if pts.len() >= 2 {
        let nf = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    } else {
        0.0
    };
    let growth_c = s_grid
        .iter()
        .zip(&rows)
        .filter(|(_, r)| r.w_boundary.is_finite())
        .map(|(s, r)| r.w_boundary / (1.0 + s.powf(gamma)))
        .fold(0.0f64, f64::max);

    ViReport {
        max_ode_residual_w: total.ode,
        min_obstacle_gap_w: total.gap,
        max_f_in_s: total.f,
        smooth_fit_value_err: total.fit_v,
        smooth_fit_slope_err: total.fit_d,
        max_bc_err: total.bc,
        min_gxx_at_boundary: total.gxx,
        min_w: total.min_w,
        growth_gamma: gamma,
        growth_exponent,
        growth_c,
        growth_ok: growth_exponent <= gamma + 0.05,
        n_waiting_samples: total.n_w,
        n_stopping_samples: total.n_s,
        n_boundary_nodes: nodes.len(),
    }
}
