use serde::{Deserialize, Serialize};

use super::integrator::{integrate, Control, EndReason, IntegratorConfig};
use super::rhs::{BoundaryOde, Exit};
use crate::error::{Error, Result};

/// Escape-mode thresholds for a single shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotConfig {
    /// Distance in `h` below the upper edge that counts as hitting it.
    pub hit_tol: f64,
    /// Relative band under `c`: a decreasing `h` below `c(1 − band)` has
    /// fallen off the separatrix.
    pub band: f64,
    /// `|h − c|` accepted as convergence at the end of the horizon.
    pub tol_c: f64,
    /// The shot is followed up to `s = horizon · s_*`.
    pub horizon: f64,
}

impl Default for ShotConfig {
    fn default() -> Self {
        ShotConfig {
            hit_tol: 1e-9,
            band: 0.02,
            tol_c: 1e-3,
            horizon: 1e4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShotOutcome {
    /// `s_*` too low: the solution reaches the domain edge at `ŝ`.
    HitUpperBoundary { s_hat: f64 },
    /// `s_*` too high: `h` turned down below the separatrix band.
    FellBelowSeparatrixBand,
    /// `h` is within `tol_c` of `c` at the end of the horizon.
    ConvergedToAsymptote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotClassification {
    pub outcome: ShotOutcome,
    /// State level where the classification fired.
    pub terminal_s: f64,
    /// Rescaled boundary `h` at `terminal_s`.
    pub terminal_h: f64,
    /// Largest `h` seen along the shot.
    pub h_max: f64,
}

/// A shot together with its accepted `(ln s, h)` nodes.
#[derive(Debug, Clone)]
pub(crate) struct Trajectory {
    pub classification: ShotClassification,
    pub nodes: Vec<(f64, f64)>,
}

pub(crate) fn shoot_traced(
    ode: &BoundaryOde,
    s_star: f64,
    delta: f64,
    integ: &IntegratorConfig,
    shot: &ShotConfig,
    record: bool,
) -> Result<Trajectory> {
    let t0 = s_star.ln();
    let h0 = ode.to_h(delta, s_star);
    let t_end = t0 + shot.horizon.ln();
    let c = ode.c;
    let floor = c * (1.0 - shot.band);
    let mut nodes = Vec::new();
    let mut h_max = h0;
    let mut fired: Option<ShotOutcome> = None;

    let end = integrate(
        |t, h| ode.log_rate(t, h),
        t0,
        h0,
        t_end,
        integ,
        |t, h, dh| {
            if record {
                nodes.push((t, h));
            }
            h_max = h_max.max(h);
            if ode.h_upper_at_log(t) - h < shot.hit_tol {
                fired = Some(ShotOutcome::HitUpperBoundary { s_hat: t.exp() });
                return Control::Stop;
            }
            if dh < 0.0 && h < floor {
                fired = Some(ShotOutcome::FellBelowSeparatrixBand);
                return Control::Stop;
            }
            Control::Continue
        },
    )
    .map_err(|(t, h, exit)| Error::Numerical {
        s: t.exp(),
        h,
        reason: format!("shot from s_* = {s_star} started outside the domain ({exit:?})"),
    })?;

    let outcome = match (fired, end.reason) {
        (Some(outcome), _) => outcome,
        (None, EndReason::Edge(Exit::Above)) => ShotOutcome::HitUpperBoundary { s_hat: end.t.exp() },
        // Above the asymptote level every solution is headed for the edge;
        // error control may stall on the steep approach before it gets there.
        (None, EndReason::StepUnderflow | EndReason::Edge(_)) if end.y > c => {
            ShotOutcome::HitUpperBoundary { s_hat: end.t.exp() }
        }
        (None, EndReason::ReachedEnd) if (end.y - c).abs() < shot.tol_c => ShotOutcome::ConvergedToAsymptote,
        // A slow unstable rate can leave a shot short of either exit at the
        // horizon. Solutions separate monotonically from the separatrix, so
        // the side of `c` decides the family.
        (None, EndReason::ReachedEnd) if end.y > c => ShotOutcome::HitUpperBoundary { s_hat: end.t.exp() },
        (None, EndReason::ReachedEnd) => ShotOutcome::FellBelowSeparatrixBand,
        (None, reason) => {
            return Err(Error::Numerical {
                s: end.t.exp(),
                h: end.y,
                reason: format!(
                    "shot from s_* = {s_star} unresolved ({reason:?}); |h − c| = {:e}",
                    (end.y - c).abs()
                ),
            })
        }
    };
    Ok(Trajectory {
        classification: ShotClassification {
            outcome,
            terminal_s: end.t.exp(),
            terminal_h: end.y,
            h_max,
        },
        nodes,
    })
}
