//! The separatrix free boundary `H(·)`.
//!
//! Candidate boundaries solve `Ḣ = 𝓗(H, s)` through `H(s_*) = δ`. Below the
//! separatrix a solution turns down and grows too slowly; above it the
//! solution runs into the edge of `0 < H < [Γ s^p] ∧ s`. Bisection on `s_*`
//! between the two escape modes pins `s_*`. Forward in `s` the separatrix is
//! unstable, so the part above `s_*` is traced downward from the asymptote
//! far out, where the flow contracts onto it, and checked against `δ` at
//! `s_*`; the part below `s_*` is traced backward from `(s_*, δ)`.
//!
//! All integration happens in `t = ln s` on the rescaled boundary
//! `h = H / s^p` (`p < 1`) or `h = H / s` (`p > 1`), where the asymptote is the
//! horizontal line `h = c`.

mod integrator;
mod interp;
mod rhs;
mod shoot;

use serde::{Deserialize, Serialize};

pub use integrator::IntegratorConfig;
pub use rhs::{asymptote_c, nullcline_s, rhs_big_h, rhs_h, s_dagger, BoundaryOde, BoundaryRegime, OdeDomain};
pub use shoot::{ShotClassification, ShotConfig, ShotOutcome};

use integrator::{integrate, Control, EndReason};
use shoot::shoot_traced;

use crate::error::{Error, Result};
use crate::params::{classify_regime, ModelParams, Roots};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Anchor level `δ`; `None` picks `½ min(Γ, 1)^{1/(1−p)}` (`p < 1`) or `½`.
    pub delta: Option<f64>,
    /// Relative bracket width on `s_*` at which bisection stops.
    pub bisection_tol: f64,
    /// Budget shared by bracket doubling and bisection.
    pub max_iterations: usize,
    /// The lowest shot starts at `s†(1 + start_offset)`.
    pub start_offset: f64,
    /// Shot thresholds; `horizon` is the minimum `s_max / s_*` and `tol_c`
    /// the required closeness to the asymptote at `s_max`.
    pub shot: ShotConfig,
    /// Horizon `s / s_*` for shots taken during bisection.
    pub bisection_horizon: f64,
    /// The part above `s_*` is traced down from `h = c` at `far_field · s_*`.
    pub far_field: f64,
    /// Largest relative gap between that trace and `δ` at `s_*`.
    pub anchor_tol: f64,
    /// Backward tracing stops once `H < backward_floor · δ`.
    pub backward_floor: f64,
    pub integrator: IntegratorConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta: None,
            bisection_tol: 1e-12,
            max_iterations: 200,
            start_offset: 1e-9,
            shot: ShotConfig::default(),
            bisection_horizon: 1e30,
            far_field: 1e30,
            anchor_tol: 1e-6,
            backward_floor: 1e-6,
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Default anchor level for the regime.
pub fn default_delta(ode: &BoundaryOde) -> f64 {
    match ode.regime {
        BoundaryRegime::PBelow1 => 0.5 * ode.gamma.min(1.0).powf(1.0 / (1.0 - ode.p)),
        BoundaryRegime::PAbove1 => 0.5,
    }
}

/// Classifies the solution through `H(s_*) = δ`.
pub fn shoot(
    s_star: f64,
    delta: f64,
    roots: &Roots,
    p: f64,
    k: f64,
    integrator: &IntegratorConfig,
    shot: &ShotConfig,
) -> Result<ShotClassification> {
    shoot_trajectory(s_star, delta, roots, p, k, integrator, shot).map(|(c, _)| c)
}

/// As [`shoot`], also returning the accepted `(s, h)` nodes.
pub fn shoot_trajectory(
    s_star: f64,
    delta: f64,
    roots: &Roots,
    p: f64,
    k: f64,
    integrator: &IntegratorConfig,
    shot: &ShotConfig,
) -> Result<(ShotClassification, Vec<(f64, f64)>)> {
    let ode = BoundaryOde::new(roots, p, k)?;
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("δ = {delta} must be positive")));
    }
    let sd = s_dagger(delta, &ode.domain());
    if !(s_star > sd) {
        return Err(Error::Domain(format!("s_* = {s_star} must exceed s† = {sd}")));
    }
    let traj = shoot_traced(&ode, s_star, delta, integrator, shot, true)?;
    let nodes = traj.nodes.iter().map(|&(t, h)| (t.exp(), h)).collect();
    Ok((traj.classification, nodes))
}

/// Diagnostics of the bisection that produced a boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionReport {
    pub iterations: usize,
    /// Highest `s_*` known to hit the upper edge.
    pub upper_family_s_star: f64,
    /// Lowest `s_*` known to fall below the band.
    pub lower_family_s_star: f64,
    /// Where the upper-family shot hit the edge.
    pub upper_family_s_hat: f64,
    /// Largest `h` reached by the lower-family shot.
    pub lower_family_h_max: f64,
    pub converged_shot: bool,
    /// `|H(s_*) − δ| / δ` for the far-field separatrix.
    pub anchor_mismatch: f64,
}

/// The solved separatrix on a non-uniform grid of accepted integrator steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreeBoundary {
    pub regime: BoundaryRegime,
    pub c: f64,
    pub delta: f64,
    pub s_star: f64,
    pub s_dagger: f64,
    /// Absolute width of the final bisection bracket on `s_*`.
    pub bracket_width: f64,
    pub bisection: BisectionReport,
    s: Vec<f64>,
    big_h: Vec<f64>,
    /// Log-log slopes `d ln H / d ln s`, limited for monotonicity.
    slopes: Vec<f64>,
    pub ode: BoundaryOde,
    pub integrator: IntegratorConfig,
}

/// Short JSON descriptor of a solved boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDescriptor {
    pub regime: BoundaryRegime,
    pub c: f64,
    pub delta: f64,
    pub s_star: f64,
    pub bracket_width: f64,
    pub grid_size: usize,
    pub s_min: f64,
    pub s_max: f64,
    /// `H(0+) = 0` is recorded here rather than as a grid row.
    pub h_at_origin: f64,
    /// Extrapolation used below `s_min`.
    pub small_s_extrapolation: String,
}

/// Solves for the separatrix of the normalized problem.
pub fn solve_separatrix(params: &ModelParams, roots: &Roots, cfg: &SolverConfig) -> Result<FreeBoundary> {
    if !params.is_normalized() {
        return Err(Error::Misuse(
            "solve_separatrix expects normalized parameters (a = 1)".into(),
        ));
    }
    classify_regime(params, roots).require_solvable()?;
    let ode = BoundaryOde::new(roots, params.p(), params.k)?;
    let delta = cfg.delta.unwrap_or_else(|| default_delta(&ode));
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("δ = {delta} must be positive")));
    }
    let sd = s_dagger(delta, &ode.domain());
    let bisect_shot = ShotConfig {
        horizon: cfg.bisection_horizon,
        ..cfg.shot
    };
    let classify = |s_star: f64| -> Result<shoot::Trajectory> {
        shoot_traced(&ode, s_star, delta, &cfg.integrator, &bisect_shot, false)
    };

    let mut iterations = 0usize;
    let mut lo = sd * (1.0 + cfg.start_offset);
    let first = classify(lo)?;
    iterations += 1;
    let mut upper_hat = match first.classification.outcome {
        ShotOutcome::HitUpperBoundary { s_hat } => s_hat,
        other => {
            return Err(Error::Solver(format!(
                "shot just above s† = {sd} did not hit the upper edge: {other:?}"
            )))
        }
    };

    // Double until the lower family is reached.
    let mut hi = 2.0 * lo;
    let mut lower_h_max;
    let mut converged = None;
    loop {
        if iterations >= cfg.max_iterations {
            return Err(Error::Solver(format!(
                "no lower-family shot up to s_* = {hi} within {} iterations; \
                 upper family hit the edge at ŝ = {upper_hat}",
                cfg.max_iterations
            )));
        }
        let shot = classify(hi)?;
        iterations += 1;
        match shot.classification.outcome {
            ShotOutcome::HitUpperBoundary { s_hat } => {
                lo = hi;
                upper_hat = s_hat;
                hi *= 2.0;
            }
            ShotOutcome::FellBelowSeparatrixBand => {
                lower_h_max = shot.classification.h_max;
                break;
            }
            ShotOutcome::ConvergedToAsymptote => {
                lower_h_max = shot.classification.h_max;
                converged = Some(hi);
                break;
            }
        }
    }

    while converged.is_none() && hi - lo > cfg.bisection_tol * lo {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if iterations >= cfg.max_iterations {
            return Err(Error::Solver(format!(
                "bisection budget exhausted with bracket [{lo}, {hi}]; \
                 upper family ŝ = {upper_hat}, lower family max h = {lower_h_max}"
            )));
        }
        let shot = classify(mid)?;
        iterations += 1;
        match shot.classification.outcome {
            ShotOutcome::HitUpperBoundary { s_hat } => {
                lo = mid;
                upper_hat = s_hat;
            }
            ShotOutcome::FellBelowSeparatrixBand => {
                hi = mid;
                lower_h_max = shot.classification.h_max;
            }
            ShotOutcome::ConvergedToAsymptote => {
                converged = Some(mid);
            }
        }
    }

    // The lower end of the bracket stays under the asymptote.
    let s_star = converged.unwrap_or(hi);
    let bisection = BisectionReport {
        iterations,
        upper_family_s_star: lo,
        lower_family_s_star: hi,
        upper_family_s_hat: upper_hat,
        lower_family_h_max: lower_h_max,
        converged_shot: converged.is_some(),
        anchor_mismatch: f64::NAN,
    };

    let forward = trace_far_field(&ode, s_star, cfg)?;
    let anchor = ode.to_big_h(forward[0].1, s_star);
    let anchor_mismatch = (anchor - delta).abs() / delta;
    if !(anchor_mismatch <= cfg.anchor_tol) {
        return Err(Error::Solver(format!(
            "far-field separatrix passes s_* = {s_star} at H = {anchor}, not δ = {delta}"
        )));
    }
    let backward = trace_backward(&ode, s_star, delta, cfg)?;
    let bisection = BisectionReport {
        anchor_mismatch,
        ..bisection
    };

    let mut s = Vec::with_capacity(forward.len() + backward.len());
    let mut big_h = Vec::with_capacity(forward.len() + backward.len());
    for &(t, h) in backward.iter().rev().chain(forward.iter().skip(1)) {
        let sv = t.exp();
        s.push(sv);
        big_h.push(ode.to_big_h(h, sv));
    }
    let slopes = interp::log_log_slopes(&ode, &s, &big_h);

    let fb = FreeBoundary {
        regime: ode.regime,
        c: ode.c,
        delta,
        s_star,
        s_dagger: sd,
        bracket_width: hi - lo,
        bisection,
        s,
        big_h,
        slopes,
        ode,
        integrator: cfg.integrator,
    };
    fb.check_invariants()?;
    Ok(fb)
}

/// The separatrix above `s_*`, traced downward from `h = c` at
/// `s_* · far_field`. Backward in `s` the flow contracts onto the separatrix,
/// so the start error is damped instead of amplified. Returns ascending
/// `(ln s, h)` nodes from `s_*` to the first node past `horizon · s_*` within
/// `tol_c / 10` of `c`, so the grid end clears the `tol_c` check with margin.
fn trace_far_field(ode: &BoundaryOde, s_star: f64, cfg: &SolverConfig) -> Result<Vec<(f64, f64)>> {
    let t0 = s_star.ln();
    let t_far = t0 + cfg.far_field.ln();
    let mut nodes = Vec::new();
    let end = integrate(
        |t, h| ode.log_rate(t, h),
        t_far,
        ode.c,
        t0,
        &cfg.integrator,
        |t, h, _| {
            nodes.push((t, h));
            Control::Continue
        },
    )
    .map_err(|(t, h, exit)| Error::Numerical {
        s: t.exp(),
        h,
        reason: format!("far-field leg left the domain ({exit:?})"),
    })?;
    if end.reason != EndReason::ReachedEnd {
        return Err(Error::Solver(format!(
            "far-field leg stopped at s = {} with h = {} ({:?})",
            end.t.exp(),
            end.y,
            end.reason
        )));
    }
    nodes.reverse();
    let t_min = t0 + cfg.shot.horizon.ln();
    let last = nodes
        .iter()
        .position(|&(t, h)| t >= t_min && (h - ode.c).abs() < 0.1 * cfg.shot.tol_c)
        .ok_or_else(|| {
            Error::Solver(format!(
                "separatrix not within {} of c = {} anywhere in [{}, {}]",
                0.1 * cfg.shot.tol_c,
                ode.c,
                t_min.exp(),
                t_far.exp()
            ))
        })?;
    nodes.truncate(last + 1);
    Ok(nodes)
}

/// Follows the bisected shot towards the origin until `H < floor · δ`.
fn trace_backward(ode: &BoundaryOde, s_star: f64, delta: f64, cfg: &SolverConfig) -> Result<Vec<(f64, f64)>> {
    let t0 = s_star.ln();
    let target = cfg.backward_floor * delta;
    let e = ode.scale_exponent();
    let mut nodes = Vec::new();
    let mut done = false;
    let end = integrate(
        |t, h| ode.log_rate(t, h),
        t0,
        ode.to_h(delta, s_star),
        t0 - 700.0,
        &cfg.integrator,
        |t, h, _| {
            nodes.push((t, h));
            if h * (e * t).exp() < target {
                done = true;
                return Control::Stop;
            }
            Control::Continue
        },
    )
    .map_err(|(t, h, exit)| Error::Numerical {
        s: t.exp(),
        h,
        reason: format!("backward leg left the domain ({exit:?})"),
    })?;
    if !done {
        return Err(Error::Solver(format!(
            "backward leg stalled at s = {} with h = {} ({:?})",
            end.t.exp(),
            end.y,
            end.reason
        )));
    }
    Ok(nodes)
}

impl FreeBoundary {
    pub fn grid_s(&self) -> &[f64] {
        &self.s
    }

    pub fn grid_h(&self) -> &[f64] {
        &self.big_h
    }

    pub fn grid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.s.iter().copied().zip(self.big_h.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn s_min(&self) -> f64 {
        self.s[0]
    }

    pub fn s_max(&self) -> f64 {
        *self.s.last().expect("non-empty grid")
    }

    pub fn domain(&self) -> OdeDomain {
        self.ode.domain()
    }

    /// `c s^p` or `c s`.
    pub fn asymptote(&self, s: f64) -> f64 {
        self.c * s.powf(self.ode.scale_exponent())
    }

    /// The boundary at `s` by monotone log-log interpolation, with the
    /// asymptote above the grid and a power law below it.
    pub fn eval_h(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Domain(format!("s = {s} must be positive and finite")));
        }
        Ok(interp::eval(self, s))
    }

    /// The boundary at `s` re-integrated from the nearest grid node. Accurate
    /// to integrator tolerance rather than interpolation error.
    pub fn resolve(&self, s: f64) -> Result<f64> {
        if !(s >= self.s_min() && s <= self.s_max()) {
            return Err(Error::Domain(format!(
                "s = {s} outside the grid [{}, {}]",
                self.s_min(),
                self.s_max()
            )));
        }
        let t = s.ln();
        let i = match self.s.binary_search_by(|v| v.partial_cmp(&s).expect("finite grid")) {
            Ok(i) => return Ok(self.big_h[i]),
            Err(i) => {
                let below = i - 1;
                if t - self.s[below].ln() <= self.s[i].ln() - t {
                    below
                } else {
                    i
                }
            }
        };
        let t0 = self.s[i].ln();
        let h0 = self.ode.to_h(self.big_h[i], self.s[i]);
        let end = integrate(
            |t, h| self.ode.log_rate(t, h),
            t0,
            h0,
            t,
            &self.integrator,
            |_, _, _| Control::Continue,
        )
        .map_err(|(t, h, exit)| Error::Numerical {
            s: t.exp(),
            h,
            reason: format!("re-integration left the domain ({exit:?})"),
        })?;
        if end.reason != EndReason::ReachedEnd {
            return Err(Error::Numerical {
                s: end.t.exp(),
                h: end.y,
                reason: format!("re-integration stopped early ({:?})", end.reason),
            });
        }
        Ok(self.ode.to_big_h(end.y, s))
    }

    /// Checks grid monotonicity, domain containment and the asymptote bound.
    pub fn check_invariants(&self) -> Result<()> {
        let dom = self.domain();
        let mut prev = 0.0;
        let mut prev_s = 0.0;
        for (i, (s, h)) in self.grid().enumerate() {
            if !(s > prev_s) {
                return Err(Error::Solver(format!("grid s not increasing at node {i}")));
            }
            if !(h > prev) {
                return Err(Error::Solver(format!("H not increasing at node {i} (s = {s})")));
            }
            if !(h < dom.upper_envelope(s)) {
                return Err(Error::Solver(format!(
                    "H({s}) = {h} is not below the envelope {}",
                    dom.upper_envelope(s)
                )));
            }
            if !(h < self.asymptote(s)) {
                return Err(Error::Solver(format!(
                    "H({s}) = {h} is not below the asymptote curve {}",
                    self.asymptote(s)
                )));
            }
            prev = h;
            prev_s = s;
        }
        Ok(())
    }

    pub fn descriptor(&self) -> BoundaryDescriptor {
        BoundaryDescriptor {
            regime: self.regime,
            c: self.c,
            delta: self.delta,
            s_star: self.s_star,
            bracket_width: self.bracket_width,
            grid_size: self.len(),
            s_min: self.s_min(),
            s_max: self.s_max(),
            h_at_origin: 0.0,
            small_s_extrapolation: "power_law_first_two_nodes".into(),
        }
    }

    /// `s,H` rows in increasing `s` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,H\n");
        for (s, h) in self.grid() {
            out.push_str(&format!("{s:.16e},{h:.16e}\n"));
        }
        out
    }

    /// Boundary against the envelopes and asymptote curve, one row per node.
    pub fn curves_csv(&self) -> String {
        let dom = self.domain();
        let mut out = String::from("s,H,gamma_s_p,diagonal,envelope,asymptote\n");
        for (s, h) in self.grid() {
            out.push_str(&format!(
                "{s:.16e},{h:.16e},{:.16e},{s:.16e},{:.16e},{:.16e}\n",
                dom.gamma * s.powf(dom.p),
                dom.upper_envelope(s),
                self.asymptote(s)
            ));
        }
        out
    }
}
