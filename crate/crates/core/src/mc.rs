//! Monte Carlo pricing of the stopping rule "exercise once `X ≤ H(S)`".
//!
//! `ln X` moves by exact Gaussian increments. The running maximum is taken
//! at grid times or, with the bridge correction, from the exact maximum of
//! the Brownian bridge between grid points. Every path draws from its own
//! generator seeded from `(seed, path index)`, so results do not depend on
//! how paths are spread over threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::FreeBoundary;
use crate::error::{invalid, Error, Result};
use crate::params::{classify_regime, compute_roots, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub bridge_correction: bool,
}

impl McConfig {
    /// `t_max = 50 / r`, bridge correction off.
    pub fn for_rate(r: f64, n_paths: usize, dt: f64, seed: u64) -> Self {
        McConfig {
            n_paths,
            dt,
            t_max: 50.0 / r,
            seed,
            bridge_correction: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be finite and > 0"));
        }
        if !(self.t_max >= self.dt && self.t_max.is_finite()) {
            return Err(invalid("t_max", "must be finite and >= dt"));
        }
        Ok(())
    }

    fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payoff {
    /// `(S^p / X − K)^+`
    V,
    /// `(S^p − K X)^+`
    U,
}

impl Payoff {
    fn eval(self, p: f64, k: f64, lx: f64, ls: f64) -> f64 {
        match self {
            Payoff::V => ((p * ls - lx).exp() - k).max(0.0),
            Payoff::U => ((p * ls).exp() - k * lx.exp()).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub n_stopped: usize,
    pub n_truncated: usize,
    /// Average over all paths of `e^{−r t_max}` times the payoff held at
    /// `t_max` by truncated paths.
    pub truncation_mass: f64,
    /// More than half of the paths never reached the boundary.
    pub degenerate: bool,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl McEstimate {
    pub fn truncated_fraction(&self) -> f64 {
        self.n_truncated as f64 / self.n_paths as f64
    }

    /// Truncation mass relative to the estimate.
    pub fn truncation_mass_fraction(&self) -> f64 {
        if self.mean > 0.0 {
            self.truncation_mass / self.mean
        } else if self.truncation_mass > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Generator for one path: xoshiro256++ seeded by SplitMix64 from the
/// master seed and the path index.
fn path_rng(seed: u64, path: usize) -> Xoshiro256PlusPlus {
    let mut z = seed ^ (path as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        chunk.copy_from_slice(&(x ^ (x >> 31)).to_le_bytes());
    }
    Xoshiro256PlusPlus::from_seed(key)
}

/// Random draws for one path.
struct PathNoise {
    rng: Xoshiro256PlusPlus,
}

impl PathNoise {
    fn new(seed: u64, path: usize) -> Self {
        PathNoise {
            rng: path_rng(seed, path),
        }
    }

    #[inline]
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// A 53-bit uniform on `]0, 1]`.
    #[inline]
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Largest `−ln U` for a 53-bit uniform `U ∈ ]0, 1]`.
const EXP_SAMPLE_MAX: f64 = 53.0 * std::f64::consts::LN_2;

/// One exact step of `(ln X, ln S)`.
#[derive(Debug, Clone, Copy)]
struct Stepper {
    drift: f64,
    vol: f64,
    /// `2σ²dt`.
    bridge: f64,
    /// `2σ²dt · EXP_SAMPLE_MAX / 4`.
    skip: f64,
    /// Steps with both ends more than this below the running maximum
    /// cannot set a new one.
    margin: f64,
    bridge_correction: bool,
}

impl Stepper {
    fn new(params: &ModelParams, cfg: &McConfig) -> Self {
        let sigma = params.sigma;
        let skip = 0.5 * sigma * sigma * cfg.dt * EXP_SAMPLE_MAX;
        Stepper {
            drift: (params.mu - 0.5 * sigma * sigma) * cfg.dt,
            vol: sigma * cfg.dt.sqrt(),
            bridge: 2.0 * sigma * sigma * cfg.dt,
            skip,
            margin: if cfg.bridge_correction {
                skip.sqrt() * (1.0 + 1e-12)
            } else {
                0.0
            },
            bridge_correction: cfg.bridge_correction,
        }
    }

    /// Advances `ln X` and returns the running maximum candidate of the step.
    #[inline]
    fn step(&self, noise: &mut PathNoise, lx: &mut f64, ls: f64) -> f64 {
        let a = *lx;
        let b = a + self.drift + self.vol * noise.normal();
        *lx = b;
        self.peak(noise, a, b, ls)
    }

    /// Running maximum candidate of a step from `a` to `b` under the
    /// current maximum `ls`.
    ///
    /// The bridge maximum is `(a + b + √((b − a)² + 2σ²dt·E)) / 2` with
    /// `E ~ Exp(1)`; it exceeds a level `ℓ ≥ a, b` exactly when
    /// `2σ²dt·E > 4(ℓ − a)(ℓ − b)`. `E` is drawn as `−ln U`, which never
    /// exceeds [`EXP_SAMPLE_MAX`], so the draw is skipped when that bound
    /// already rules out a new maximum.
    #[inline]
    fn peak(&self, noise: &mut PathNoise, a: f64, b: f64, ls: f64) -> f64 {
        if !self.bridge_correction {
            return b;
        }
        if b < ls && (ls - a) * (ls - b) > self.skip {
            return b;
        }
        let e = -noise.uniform().ln();
        let d = b - a;
        0.5 * (a + b + (d * d + self.bridge * e).sqrt())
    }
}

/// Upper bounds of `ln H` on buckets of `ln s`, valid because `H` is
/// increasing. Paths far above the boundary skip the exact evaluation.
struct BoundTable {
    base: f64,
    inv_width: f64,
    upper: Vec<f64>,
}

impl BoundTable {
    const WIDTH: f64 = 0.01;
    const SPAN: f64 = 40.0;

    fn new<F: Fn(f64) -> f64>(log_boundary: &F, base: f64) -> Self {
        let n = (Self::SPAN / Self::WIDTH) as usize;
        BoundTable {
            base,
            inv_width: 1.0 / Self::WIDTH,
            upper: (1..=n).map(|i| log_boundary(base + i as f64 * Self::WIDTH)).collect(),
        }
    }

    /// An upper bound of `ln H` at `ls`, or `None` outside the table.
    #[inline]
    fn bound(&self, ls: f64) -> Option<f64> {
        let pos = (ls - self.base) * self.inv_width;
        if pos >= 0.0 {
            self.upper.get(pos as usize).copied()
        } else {
            None
        }
    }
}

/// Per-path discounted payoffs for every boundary scale, plus truncation
/// data, in path order.
struct FamilyRun {
    values: Vec<f64>,
    stopped: Vec<bool>,
    tail: Vec<f64>,
    n_thetas: usize,
}

/// Simulates each path once and records the payoff under every scaled
/// boundary `θ · H`. `log_boundary` maps `ln s` to `ln H(s)`.
fn run_family<F>(
    params: &ModelParams,
    log_boundary: &F,
    thetas: &[f64],
    payoff: Payoff,
    x0: f64,
    s0: f64,
    cfg: &McConfig,
) -> FamilyRun
where
    F: Fn(f64) -> f64 + Sync,
{
    let nt = thetas.len();
    // Larger θ stops first along any path; visit them in that order.
    let mut order: Vec<usize> = (0..nt).collect();
    order.sort_by(|&i, &j| thetas[j].total_cmp(&thetas[i]));
    let log_thetas: Vec<f64> = order.iter().map(|&i| thetas[i].ln()).collect();

    let p = params.p();
    let k = params.k;
    let r = params.r;
    let stepper = Stepper::new(params, cfg);
    let n_steps = cfg.n_steps();
    let horizon = n_steps as f64 * cfg.dt;
    let tail_discount = (-r * horizon).exp();
    let table = BoundTable::new(log_boundary, s0.ln());

    let per_path = |path: usize| -> (Vec<f64>, Vec<bool>, f64) {
        // A local copy keeps the step constants in registers.
        let st = stepper;
        let mut noise = PathNoise::new(cfg.seed, path);
        let mut values = vec![0.0; nt];
        let mut stopped = vec![false; nt];
        let mut lx = x0.ln();
        let mut ls = s0.ln();
        let mut lh = log_boundary(ls);
        let mut next = 0;
        let mut record = |next: &mut usize, lx: f64, ls: f64, lh: f64, t: f64| {
            while *next < nt && lx <= log_thetas[*next] + lh {
                let slot = order[*next];
                values[slot] = (-r * t).exp() * payoff.eval(p, k, lx, ls);
                stopped[slot] = true;
                *next += 1;
            }
        };
        record(&mut next, lx, ls, lh, 0.0);
        let mut step = 0;
        // `bound ≥ lh` always; `stale` marks `lh` as lagging behind `ls`.
        let mut bound = lh;
        let mut stale = false;
        let mut level = log_thetas.get(next).copied().unwrap_or(f64::NEG_INFINITY);
        while next < nt && step < n_steps {
            // Run quietly while a step can neither stop nor set a new
            // maximum; the first step that might is handled below.
            let (lo, hi) = (level + bound, ls - st.margin);
            let mut a = lx;
            let mut b;
            loop {
                step += 1;
                b = a + st.drift + st.vol * noise.normal();
                if a >= hi || b >= hi || b <= lo || step >= n_steps {
                    break;
                }
                a = b;
            }
            lx = b;
            let peak = st.peak(&mut noise, a, b, ls);
            if peak > ls {
                ls = peak;
                match table.bound(ls) {
                    Some(b) => {
                        bound = b;
                        stale = true;
                    }
                    None => {
                        lh = log_boundary(ls);
                        bound = lh;
                        stale = false;
                    }
                }
            }
            if lx <= level + bound {
                if stale {
                    lh = log_boundary(ls);
                    bound = lh;
                    stale = false;
                }
                if lx <= level + lh {
                    record(&mut next, lx, ls, lh, step as f64 * cfg.dt);
                    level = log_thetas.get(next).copied().unwrap_or(f64::NEG_INFINITY);
                }
            }
        }
        let tail = if next < nt {
            tail_discount * payoff.eval(p, k, lx, ls)
        } else {
            0.0
        };
        (values, stopped, tail)
    };

    let rows: Vec<(Vec<f64>, Vec<bool>, f64)> = (0..cfg.n_paths).into_par_iter().map(per_path).collect();
    let mut run = FamilyRun {
        values: Vec::with_capacity(cfg.n_paths * nt),
        stopped: Vec::with_capacity(cfg.n_paths * nt),
        tail: Vec::with_capacity(cfg.n_paths),
        n_thetas: nt,
    };
    for (v, s, t) in rows {
        run.values.extend(v);
        run.stopped.extend(s);
        run.tail.push(t);
    }
    run
}

impl FamilyRun {
    fn n_paths(&self) -> usize {
        self.tail.len()
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        self.values.iter().skip(j).step_by(self.n_thetas).copied()
    }

    fn estimate(&self, j: usize, cfg: &McConfig) -> McEstimate {
        let n = self.n_paths();
        let (mean, std_err) = mean_and_se(self.column(j), n);
        let n_stopped = self
            .stopped
            .iter()
            .skip(j)
            .step_by(self.n_thetas)
            .filter(|&&s| s)
            .count();
        let n_truncated = n - n_stopped;
        let truncation_mass = self
            .stopped
            .iter()
            .skip(j)
            .step_by(self.n_thetas)
            .zip(&self.tail)
            .map(|(&s, &t)| if s { 0.0 } else { t })
            .sum::<f64>()
            / n as f64;
        McEstimate {
            mean,
            std_err,
            n_paths: n,
            n_stopped,
            n_truncated,
            truncation_mass,
            degenerate: 2 * n_truncated > n,
            dt: cfg.dt,
            t_max: cfg.t_max,
            seed: cfg.seed,
        }
    }

    /// Mean and standard error of the per-path difference of two columns.
    fn difference(&self, i: usize, j: usize) -> (f64, f64) {
        let n = self.n_paths();
        mean_and_se(self.column(i).zip(self.column(j)).map(|(a, b)| a - b), n)
    }
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    // Shifting by the first value keeps a constant sample exact: mean equal
    // to the value and a zero standard error.
    let shift = values.clone().next().unwrap_or(0.0);
    let offset = values.clone().map(|v| v - shift).sum::<f64>() / nf;
    let mean = shift + offset;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - shift - offset) * (v - shift - offset)).sum();
    (mean, (ss / (nf - 1.0) / nf).sqrt())
}

fn check_start(x0: f64, s0: f64) -> Result<()> {
    if !(x0 > 0.0 && s0 > 0.0 && x0 <= s0 && s0.is_finite()) {
        return Err(Error::Domain(format!(
            "starting point (x0 = {x0}, s0 = {s0}) must satisfy 0 < x0 <= s0"
        )));
    }
    Ok(())
}

/// Estimates the discounted payoff of stopping at the first grid time with
/// `X ≤ boundary(S)`. Paths still running at `t_max` contribute zero.
pub fn simulate_value<F>(
    params: &ModelParams,
    boundary: F,
    payoff: Payoff,
    x0: f64,
    s0: f64,
    cfg: &McConfig,
) -> Result<McEstimate>
where
    F: Fn(f64) -> f64 + Sync,
{
    cfg.validate()?;
    check_start(x0, s0)?;
    let log_boundary = |ls: f64| boundary(ls.exp()).ln();
    let run = run_family(params, &log_boundary, &[1.0], payoff, x0, s0, cfg);
    Ok(run.estimate(0, cfg))
}

/// As [`simulate_value`] with a solved boundary.
pub fn simulate_boundary(
    params: &ModelParams,
    fb: &FreeBoundary,
    payoff: Payoff,
    x0: f64,
    s0: f64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    simulate_value(params, |s| fb.eval_h(s).unwrap_or(f64::NAN), payoff, x0, s0, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub estimate: McEstimate,
    /// Mean of the per-path difference against `θ = 1`.
    pub diff_vs_unit: f64,
    /// Standard error of that difference under common random numbers.
    pub diff_std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub entries: Vec<ThetaEstimate>,
    pub best_theta: f64,
}

impl PerturbationReport {
    pub fn unit(&self) -> &ThetaEstimate {
        self.entries
            .iter()
            .find(|e| e.theta == 1.0)
            .expect("θ = 1 is always present")
    }

    /// Largest `(estimate(θ) − estimate(1)) / √(se_θ² + se_1²)` over `θ`.
    pub fn max_pooled_excess(&self) -> f64 {
        let unit = self.unit().estimate;
        self.entries
            .iter()
            .map(|e| {
                let pooled = (e.estimate.std_err.powi(2) + unit.std_err.powi(2)).sqrt();
                let gap = e.estimate.mean - unit.mean;
                if gap <= 0.0 {
                    gap
                } else if pooled > 0.0 {
                    gap / pooled
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Prices `θ · H` for every `θ` on the same simulated paths.
pub fn perturbation_test(
    params: &ModelParams,
    fb: &FreeBoundary,
    thetas: &[f64],
    x0: f64,
    s0: f64,
    cfg: &McConfig,
) -> Result<PerturbationReport> {
    cfg.validate()?;
    check_start(x0, s0)?;
    if let Some(bad) = thetas.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(invalid("thetas", format!("{bad} is not a positive scale")));
    }
    let unit = thetas
        .iter()
        .position(|&t| t == 1.0)
        .ok_or_else(|| invalid("thetas", "must include 1.0"))?;
    let log_boundary = |ls: f64| fb.eval_h(ls.exp()).map(f64::ln).unwrap_or(f64::NAN);
    let run = run_family(params, &log_boundary, thetas, Payoff::V, x0, s0, cfg);
    let entries: Vec<ThetaEstimate> = thetas
        .iter()
        .enumerate()
        .map(|(j, &theta)| {
            let (diff, se) = run.difference(j, unit);
            ThetaEstimate {
                theta,
                estimate: run.estimate(j, cfg),
                diff_vs_unit: diff,
                diff_std_err: se,
            }
        })
        .collect();
    let best_theta = entries
        .iter()
        .max_by(|a, b| a.estimate.mean.total_cmp(&b.estimate.mean))
        .map(|e| e.theta)
        .expect("non-empty thetas");
    Ok(PerturbationReport { entries, best_theta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub horizon: f64,
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthTable {
    pub rows: Vec<GrowthRow>,
    /// Least-squares slope of `ln mean` against the horizon.
    pub fitted_exponent: f64,
    pub strictly_increasing: bool,
}

/// Estimates `E[e^{−rt}(S_t^p / X_t − K)^+]` at fixed horizons for
/// parameters whose value is infinite.
pub fn divergence_probe(
    params: &ModelParams,
    x0: f64,
    s0: f64,
    horizons: &[f64],
    cfg: &McConfig,
) -> Result<GrowthTable> {
    let roots = compute_roots(params)?;
    let report = classify_regime(params, &roots);
    if !report.value_infinite {
        return Err(Error::Misuse(format!(
            "divergence probe needs m+1 > 0 or n+1-p < 0; got m+1 = {}, n+1-p = {}",
            report.m_plus_1, report.n_plus_1_minus_p
        )));
    }
    check_start(x0, s0)?;
    if horizons.is_empty() {
        return Err(invalid("horizons", "must not be empty"));
    }
    let mut sorted = horizons.to_vec();
    sorted.sort_by(f64::total_cmp);
    if !(sorted[0] > 0.0) || sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("horizons", "must be positive and distinct"));
    }
    let cfg = McConfig {
        t_max: *sorted.last().expect("non-empty"),
        ..*cfg
    };
    cfg.validate()?;
    let marks: Vec<usize> = sorted.iter().map(|h| (h / cfg.dt).round().max(1.0) as usize).collect();
    let p = params.p();
    let (k, r) = (params.k, params.r);
    let stepper = Stepper::new(params, &cfg);

    let per_path = |path: usize| -> Vec<f64> {
        let st = stepper;
        let mut noise = PathNoise::new(cfg.seed, path);
        let mut lx = x0.ln();
        let mut ls = s0.ln();
        let mut out = Vec::with_capacity(marks.len());
        let mut step = 0;
        for &mark in &marks {
            while step < mark {
                step += 1;
                let peak = st.step(&mut noise, &mut lx, ls);
                ls = ls.max(peak);
            }
            let t = mark as f64 * cfg.dt;
            out.push((-r * t).exp() * Payoff::V.eval(p, k, lx, ls));
        }
        out
    };
    let paths: Vec<Vec<f64>> = (0..cfg.n_paths).into_par_iter().map(per_path).collect();
    let n = paths.len();
    let rows: Vec<GrowthRow> = sorted
        .iter()
        .enumerate()
        .map(|(j, &horizon)| {
            let (mean, std_err) = mean_and_se(paths.iter().map(|row| row[j]), n);
            GrowthRow { horizon, mean, std_err }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean > 0.0)
        .map(|r| (r.horizon, r.mean.ln()))
        .collect();
    let fitted_exponent = if pts.len() >= 2 {
        let nf = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    let strictly_increasing = rows.windows(2).all(|w| w[1].mean > w[0].mean);
    Ok(GrowthTable {
        rows,
        fitted_exponent,
        strictly_increasing,
    })
}

/// Growth exponent of `E[e^{−rt} S_t^p / X_t]` implied by the violated
/// condition: `½σ² − (μ − ½σ²) − r` when `m + 1 > 0`, otherwise
/// `½σ²(p−1)² + (μ − ½σ²)(p−1) − r`.
pub fn divergence_exponent(params: &ModelParams) -> Result<f64> {
    let roots = compute_roots(params)?;
    let report = classify_regime(params, &roots);
    let s2 = params.sigma2();
    let nu = params.mu - 0.5 * s2;
    if report.m_plus_1 > 0.0 {
        Ok(0.5 * s2 - nu - params.r)
    } else if report.n_plus_1_minus_p < 0.0 {
        let q = params.p() - 1.0;
        Ok(0.5 * s2 * q * q + nu * q - params.r)
    } else {
        Err(Error::Misuse("assumption A holds; the value is finite".into()))
    }
}
