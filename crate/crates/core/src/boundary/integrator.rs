//! Scalar Dormand–Prince 5(4) integrator with per-step error control.
//!
//! Steps whose stages leave the open domain are rejected and halved. The
//! step cap drops to the halved size and only doubles back after accepted
//! steps, so the solution approaches a domain edge geometrically instead of
//! bouncing off it.

use serde::{Deserialize, Serialize};

use super::rhs::Exit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            abs_tol: 1e-15,
            rel_tol: 1e-13,
            initial_step: 1e-3,
            max_step: 0.25,
            min_step: 1e-14,
            max_steps: 200_000,
        }
    }
}

/// Decision returned by the step observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum EndReason {
    ReachedEnd,
    Stopped,
    /// The step size underflowed while stages kept leaving the domain.
    Edge(Exit),
    StepUnderflow,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EndState {
    pub t: f64,
    pub y: f64,
    pub reason: EndReason,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `(t0, y0)` towards `t_end` (either
/// direction). `observe(t, y, y')` is called at the start and after every
/// accepted step.
pub(crate) fn integrate<F, O>(
    mut f: F,
    t0: f64,
    y0: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
    mut observe: O,
) -> std::result::Result<EndState, (f64, f64, Exit)>
where
    F: FnMut(f64, f64) -> std::result::Result<f64, Exit>,
    O: FnMut(f64, f64, f64) -> Control,
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, y).map_err(|e| (t, y, e))?;
    if observe(t, y, k1) == Control::Stop {
        return Ok(EndState {
            t,
            y,
            reason: EndReason::Stopped,
        });
    }
    let mut step = cfg.initial_step.min(cfg.max_step);
    let mut cap = cfg.max_step;
    let mut last_exit: Option<Exit> = None;
    let mut rejected_last = false;

    for _ in 0..cfg.max_steps {
        let remaining = (t_end - t) * dir;
        if remaining <= 0.0 {
            return Ok(EndState {
                t,
                y,
                reason: EndReason::ReachedEnd,
            });
        }
        let mut hmag = step.min(cap).min(remaining);
        if hmag < cfg.min_step * t.abs().max(1.0) {
            if remaining <= cfg.min_step * t.abs().max(1.0) {
                return Ok(EndState {
                    t: t_end,
                    y,
                    reason: EndReason::ReachedEnd,
                });
            }
            let reason = match last_exit {
                Some(exit) => EndReason::Edge(exit),
                None => EndReason::StepUnderflow,
            };
            return Ok(EndState { t, y, reason });
        }
        let last = hmag >= remaining;
        if last {
            hmag = remaining;
        }
        let h = dir * hmag;
        let t_new = if last { t_end } else { t + h };

        let trial = (|| -> std::result::Result<(f64, f64, f64), Exit> {
            let k2 = f(t + C2 * h, y + h * A21 * k1)?;
            let k3 = f(t + C3 * h, y + h * (A31 * k1 + A32 * k2))?;
            let k4 = f(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))?;
            let k5 = f(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))?;
            let k6 = f(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))?;
            let y_new = y + h * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6);
            let k7 = f(t_new, y_new)?;
            let err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
            Ok((y_new, k7, err))
        })();

        match trial {
            Err(exit) => {
                last_exit = Some(exit);
                step = 0.5 * hmag;
                cap = step;
                rejected_last = true;
            }
            Ok((y_new, k7, err)) => {
                let scale = cfg.abs_tol + cfg.rel_tol * y.abs().max(y_new.abs());
                let ratio = err.abs() / scale;
                if ratio <= 1.0 {
                    t = t_new;
                    y = y_new;
                    k1 = k7;
                    let mut fac = if ratio == 0.0 {
                        5.0
                    } else {
                        (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    if rejected_last {
                        fac = fac.min(1.0);
                    }
                    rejected_last = false;
                    step = hmag * fac;
                    cap = (2.0 * cap).min(cfg.max_step);
                    if observe(t, y, k1) == Control::Stop {
                        return Ok(EndState {
                            t,
                            y,
                            reason: EndReason::Stopped,
                        });
                    }
                } else {
                    step = hmag * (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.9);
                    rejected_last = true;
                }
            }
        }
    }
    Ok(EndState {
        t,
        y,
        reason: EndReason::MaxSteps,
    })
}
