//! `watermark`: free boundaries, prices, checks and simulations for
//! perpetual options paying `(S^p / X − K)^+`.
//!
//! Exit codes: 0 success, 2 validation, 3 regime, 4 solver, 5 verification,
//! 6 Monte Carlo misuse, 1 anything else.

mod config;
mod output;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use watermark::boundary::{asymptote_c, solve_separatrix};
use watermark::mc::{divergence_exponent, divergence_probe, perturbation_test, simulate_boundary, Payoff};
use watermark::params::{classify_regime, compute_roots, normalize_exponents, tilde_params};
use watermark::value::{HattedSurface, ValueSurface, ViSampleConfig, ViTolerances};
use watermark::Error;

use config::{Format, RunConfig, Variant};
use output::{render, to_value};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
    /// Report still printed to stdout on failure.
    pub report: Option<String>,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
            report: None,
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
            report: None,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParam { .. } | Error::Domain(_) => 2,
            Error::Regime(_) => 3,
            Error::Solver(_) | Error::Numerical { .. } => 4,
            Error::Misuse(_) => 6,
        };
        CliError {
            code,
            message: e.to_string(),
            report: None,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "watermark", version, about = "Perpetual American watermark options")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat JSON config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    #[command(flatten)]
    flags: RunConfig,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Characteristic roots, regime classification and tilde parameters.
    Roots,
    /// Solve the free boundary and write it as CSV plus a JSON descriptor.
    Boundary,
    /// Price at (x, s).
    Price,
    /// Check the variational inequality on a sample of the wedge.
    Verify,
    /// Monte Carlo estimate, perturbation test (--thetas) or divergence probe (--horizons).
    Mc,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    Ok(base.overlay(cli.flags.clone()))
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), body)
        .map_err(|e| CliError::validation(format!("cannot write {}: {e}", dir.join(name).display())))
}

fn prepare_out(cfg: &RunConfig) -> Result<Option<&Path>, CliError> {
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))?;
            Ok(Some(dir.as_path()))
        }
        None => Ok(None),
    }
}

fn cmd_roots(cfg: &RunConfig) -> Result<String, CliError> {
    let raw = cfg.model_params()?;
    let (params, map) = normalize_exponents(&raw);
    let roots = compute_roots(&params)?;
    let regime = classify_regime(&params, &roots);
    let c = if regime.is_solvable() {
        asymptote_c(&roots, params.p(), params.k).ok()
    } else {
        None
    };
    let report = json!({
        "params": to_value(&raw)?,
        "normalized": to_value(&params)?,
        "state_exponent": map.exponent,
        "roots": to_value(&roots)?,
        "regime": to_value(&regime)?,
        "assumption_a": regime.assumption_a_holds,
        "value_infinite": regime.value_infinite,
        "c": c,
        "tilde": to_value(&tilde_params(&params))?,
    });
    Ok(render(&report))
}

fn cmd_boundary(cfg: &RunConfig) -> Result<String, CliError> {
    let raw = cfg.model_params()?;
    let (params, _) = normalize_exponents(&raw);
    let roots = compute_roots(&params)?;
    classify_regime(&params, &roots).require_solvable()?;
    let fb = solve_separatrix(&params, &roots, &cfg.solver())?;
    let descriptor = render(&to_value(&fb.descriptor())?);
    if let Some(dir) = prepare_out(cfg)? {
        write_file(dir, "boundary.csv", &fb.to_csv())?;
        write_file(dir, "boundary.json", &descriptor)?;
        if cfg.curves.unwrap_or(false) {
            write_file(dir, "curves.csv", &fb.curves_csv())?;
        }
    }
    Ok(match cfg.format.unwrap_or(Format::Json) {
        Format::Json => descriptor,
        Format::Csv if cfg.curves.unwrap_or(false) => fb.curves_csv(),
        Format::Csv => fb.to_csv(),
    })
}

fn require_unit_a(raw: &watermark::ModelParams, variant: &str) -> Result<(), CliError> {
    if raw.a != 1.0 {
        return Err(CliError::validation(format!(
            "variant {variant} needs a = 1; use {variant}_hat for general exponents"
        )));
    }
    Ok(())
}

fn cmd_price(cfg: &RunConfig) -> Result<String, CliError> {
    let raw = cfg.model_params()?;
    let (x, s) = cfg.point(None)?;
    let variant = cfg.variant.unwrap_or(Variant::V);
    let solver = cfg.solver();
    let (params, map) = normalize_exponents(&raw);
    if !(x > 0.0 && s > 0.0 && x <= s && s.is_finite()) {
        return Err(CliError::validation(format!("need 0 < x <= s, got x = {x}, s = {s}")));
    }

    if matches!(variant, Variant::V | Variant::VHat) {
        let roots = compute_roots(&params)?;
        let regime = classify_regime(&params, &roots);
        if regime.value_infinite && !regime.is_solvable() {
            let report = json!({
                "x": x, "s": s, "variant": to_value(&variant)?,
                "value": null, "valuation": "infinite", "region": null, "H_of_s": null,
            });
            return Err(CliError {
                code: 3,
                message: "value is infinite for these parameters".into(),
                report: Some(render(&report)),
            });
        }
    }

    let (value, surface) = match variant {
        Variant::V => {
            require_unit_a(&raw, "v")?;
            let surface = ValueSurface::new(&params, &solver)?;
            (surface.value_v(x, s)?, surface)
        }
        Variant::U => {
            require_unit_a(&raw, "u")?;
            let surface = ValueSurface::tilde(&params, &solver)?;
            (surface.value_u(x, s)?, surface)
        }
        Variant::VHat => {
            let hs = HattedSurface::v(&raw, &solver)?;
            (hs.value_v_hat(x, s)?, hs.surface)
        }
        Variant::UHat => {
            let hs = HattedSurface::u(&raw, &solver)?;
            (hs.value_u_hat(x, s)?, hs.surface)
        }
    };
    let (xa, sa) = map.apply(x, s);
    let region = surface.region(xa, sa)?;
    let h = surface.boundary.eval_h(sa)?.powf(1.0 / map.exponent);
    let report = json!({
        "x": x,
        "s": s,
        "variant": to_value(&variant)?,
        "value": value,
        "region": to_value(&region)?,
        "H_of_s": h,
    });
    Ok(render(&report))
}

fn cmd_verify(cfg: &RunConfig) -> Result<String, CliError> {
    let raw = cfg.model_params()?;
    let (params, _) = normalize_exponents(&raw);
    let surface = ValueSurface::new(&params, &cfg.solver())?;
    let tol = ViTolerances::default();
    let report = surface.verify_vi(&ViSampleConfig::default());
    let mut failures: Vec<&str> = report.failures(&tol);
    let bad_coefficients = surface
        .scaled_coefficients_on_grid()
        .iter()
        .filter(|(_, a, b)| !(*a > 0.0 && *b > 0.0))
        .count();
    if bad_coefficients > 0 {
        failures.push("coefficient_positivity");
    }
    let text = render(&json!({
        "report": to_value(&report)?,
        "tolerances": to_value(&tol)?,
        "nonpositive_coefficients": bad_coefficients,
        "failures": failures,
        "boundary": to_value(&surface.boundary.descriptor())?,
    }));
    if failures.is_empty() {
        Ok(text)
    } else {
        Err(CliError {
            code: 5,
            message: format!("verification failed: {}", failures.join(", ")),
            report: Some(text),
        })
    }
}

fn cmd_mc(cfg: &RunConfig) -> Result<String, CliError> {
    let raw = cfg.model_params()?;
    let (params, map) = normalize_exponents(&raw);
    if !map.is_identity() {
        return Err(CliError::validation("mc works on the normalized problem; set a = 1"));
    }
    let (x, s) = cfg.point(Some((1.0, 1.0)))?;
    let mc = cfg.mc(params.r)?;

    if let Some(horizons) = &cfg.horizons {
        let table = divergence_probe(&params, x, s, horizons, &mc)?;
        return Ok(render(&json!({
            "table": to_value(&table)?,
            "expected_exponent": divergence_exponent(&params)?,
            "n_paths": mc.n_paths,
            "dt": mc.dt,
            "seed": mc.seed,
        })));
    }

    let variant = cfg.variant.unwrap_or(Variant::V);
    if let Some(thetas) = &cfg.thetas {
        if variant != Variant::V {
            return Err(CliError::validation("the perturbation test prices variant v"));
        }
        let surface = ValueSurface::new(&params, &cfg.solver())?;
        let report = perturbation_test(&params, &surface.boundary, thetas, x, s, &mc)?;
        return Ok(render(&json!({
            "perturbation": to_value(&report)?,
            "max_pooled_excess": report.max_pooled_excess(),
            "closed_form": surface.value_v(x, s)?,
        })));
    }

    let (est, closed) = match variant {
        Variant::V => {
            let surface = ValueSurface::new(&params, &cfg.solver())?;
            let est = simulate_boundary(&params, &surface.boundary, Payoff::V, x, s, &mc)?;
            (est, surface.value_v(x, s)?)
        }
        Variant::U => {
            let surface = ValueSurface::tilde(&params, &cfg.solver())?;
            let est = simulate_boundary(&params, &surface.boundary, Payoff::U, x, s, &mc)?;
            (est, surface.value_u(x, s)?)
        }
        _ => return Err(CliError::validation("mc supports variants v and u")),
    };
    let z = if est.std_err > 0.0 {
        (est.mean - closed) / est.std_err
    } else {
        0.0
    };
    Ok(render(&json!({
        "mean": est.mean,
        "std_err": est.std_err,
        "n_paths": est.n_paths,
        "n_stopped": est.n_stopped,
        "n_truncated": est.n_truncated,
        "truncation_mass": est.truncation_mass,
        "degenerate": est.degenerate,
        "dt": est.dt,
        "t_max": est.t_max,
        "seed": est.seed,
        "bridge_correction": mc.bridge_correction,
        "variant": to_value(&variant)?,
        "closed_form": closed,
        "z_score": z,
    })))
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("WATERMARK_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::validation(format!("WATERMARK_THREADS = {v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<String, CliError> {
    configure_threads()?;
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Roots => cmd_roots(&cfg),
        Command::Boundary => cmd_boundary(&cfg),
        Command::Price => cmd_price(&cfg),
        Command::Verify => cmd_verify(&cfg),
        Command::Mc => cmd_mc(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Some(report) = &e.report {
                print!("{report}");
            }
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
