//! Monotone cubic Hermite interpolation of the boundary in log-log space.

use super::{BoundaryOde, FreeBoundary};

/// Node slopes `d ln H / d ln s` from the ODE, limited so the interpolant is
/// monotone between nodes.
pub(super) fn log_log_slopes(ode: &BoundaryOde, s: &[f64], big_h: &[f64]) -> Vec<f64> {
    let n = s.len();
    let x: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = big_h.iter().map(|v| v.ln()).collect();
    let secant = |i: usize| (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
    let e = ode.scale_exponent();
    let mut d: Vec<f64> = (0..n)
        .map(|i| {
            let h = ode.to_h(big_h[i], s[i]);
            match ode.log_rate(x[i], h) {
                Ok(rate) => e + rate / h,
                Err(_) if n > 1 => secant(i.min(n - 2)),
                Err(_) => e,
            }
        })
        .collect();
    for i in 0..n.saturating_sub(1) {
        let delta = secant(i);
        if delta <= 0.0 {
            d[i] = 0.0;
            d[i + 1] = 0.0;
            continue;
        }
        d[i] = d[i].max(0.0);
        d[i + 1] = d[i + 1].max(0.0);
        let a = d[i] / delta;
        let b = d[i + 1] / delta;
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            d[i] = tau * a * delta;
            d[i + 1] = tau * b * delta;
        }
    }
    d
}

pub(super) fn eval(fb: &FreeBoundary, s: f64) -> f64 {
    let (xs, hs, ds) = (&fb.s, &fb.big_h, &fb.slopes);
    let n = xs.len();
    if s > xs[n - 1] {
        return fb.asymptote(s);
    }
    if s < xs[0] {
        let v = if n > 1 {
            let alpha = (hs[1] / hs[0]).ln() / (xs[1] / xs[0]).ln();
            hs[0] * (s / xs[0]).powf(alpha)
        } else {
            hs[0] * (s / xs[0]).powf(fb.ode.scale_exponent())
        };
        let cap = fb.domain().upper_envelope(s) * (1.0 - 1e-12);
        return v.min(cap);
    }
    let i = match xs.binary_search_by(|v| v.partial_cmp(&s).expect("finite grid")) {
        Ok(i) => return hs[i],
        Err(i) => i - 1,
    };
    let (x0, x1) = (xs[i].ln(), xs[i + 1].ln());
    let (y0, y1) = (hs[i].ln(), hs[i + 1].ln());
    let w = x1 - x0;
    let u = (s.ln() - x0) / w;
    let u2 = u * u;
    let u3 = u2 * u;
    let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
    let h10 = u3 - 2.0 * u2 + u;
    let h01 = -2.0 * u3 + 3.0 * u2;
    let h11 = u3 - u2;
    let y = h00 * y0 + h10 * w * ds[i] + h01 * y1 + h11 * w * ds[i + 1];
    y.exp().clamp(hs[i], hs[i + 1])
}
