use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use watermark::boundary::SolverConfig;
use watermark::mc::McConfig;
use watermark::ModelParams;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Variant {
    V,
    U,
    VHat,
    UHat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Flat run configuration. Every key doubles as a long flag of the same name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drift of X.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Volatility of X.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Discount rate.
    #[arg(long, global = true)]
    pub r: Option<f64>,
    /// Strike.
    #[arg(long, global = true)]
    #[serde(alias = "K")]
    pub k: Option<f64>,
    /// Exponent of X in the payoff (default 1).
    #[arg(long, global = true)]
    pub a: Option<f64>,
    /// Exponent of S in the payoff; defaults to p · a.
    #[arg(long, global = true)]
    pub b: Option<f64>,
    /// Normalized exponent p = b / a.
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Anchor level of the separatrix shots.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Relative bisection tolerance on s_*.
    #[arg(long = "bisection_tol", global = true)]
    pub bisection_tol: Option<f64>,
    /// Required closeness of H/s^p (or H/s) to c at the end of the grid.
    #[arg(long = "tol_c", global = true)]
    pub tol_c: Option<f64>,
    #[arg(long, global = true)]
    pub x: Option<f64>,
    #[arg(long, global = true)]
    pub s: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub tmax: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sample the running maximum between grid points from the Brownian bridge.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub bridge: Option<bool>,
    /// Boundary scales for the perturbation test, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    /// Fixed horizons for the divergence probe, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub horizons: Option<Vec<f64>>,
    /// Output directory for written files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Also write boundary, envelope and asymptote curves.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub curves: Option<bool>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        RunConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

fn missing(field: &str) -> CliError {
    CliError::validation(format!("missing field `{field}`"))
}

impl RunConfig {
    /// `top` wins wherever it is set.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        overlay!(
            self,
            top,
            mu,
            sigma,
            r,
            k,
            a,
            b,
            p,
            delta,
            bisection_tol,
            tol_c,
            x,
            s,
            variant,
            paths,
            dt,
            tmax,
            seed,
            bridge,
            thetas,
            horizons,
            out,
            format,
            curves
        )
    }

    pub fn model_params(&self) -> Result<ModelParams, CliError> {
        let mu = self.mu.ok_or_else(|| missing("mu"))?;
        let sigma = self.sigma.ok_or_else(|| missing("sigma"))?;
        let r = self.r.ok_or_else(|| missing("r"))?;
        let k = self.k.ok_or_else(|| missing("k"))?;
        let a = self.a.unwrap_or(1.0);
        let b = match (self.b, self.p) {
            (Some(b), None) => b,
            (None, Some(p)) => p * a,
            (Some(b), Some(p)) if (b - p * a).abs() <= 1e-12 * b.abs().max(1.0) => b,
            (Some(_), Some(_)) => return Err(CliError::validation("fields `b` and `p` disagree: need b = p · a")),
            (None, None) => return Err(missing("p")),
        };
        Ok(ModelParams::new(mu, sigma, r, k, a, b)?)
    }

    pub fn solver(&self) -> SolverConfig {
        let mut cfg = SolverConfig {
            delta: self.delta,
            ..SolverConfig::default()
        };
        if let Some(tol) = self.bisection_tol {
            cfg.bisection_tol = tol;
        }
        if let Some(tol) = self.tol_c {
            cfg.shot.tol_c = tol;
        }
        cfg
    }

    pub fn mc(&self, r: f64) -> Result<McConfig, CliError> {
        let cfg = McConfig {
            n_paths: self.paths.unwrap_or(100_000),
            dt: self.dt.unwrap_or(1e-3),
            t_max: self.tmax.unwrap_or(50.0 / r),
            seed: self.seed.unwrap_or(1),
            bridge_correction: self.bridge.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn point(&self, default: Option<(f64, f64)>) -> Result<(f64, f64), CliError> {
        match (self.x, self.s, default) {
            (Some(x), Some(s), _) => Ok((x, s)),
            (None, None, Some(d)) => Ok(d),
            (None, _, _) => Err(missing("x")),
            (_, None, _) => Err(missing("s")),
        }
    }
}
