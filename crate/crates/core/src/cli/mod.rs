//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid configuration or usage, 3 numerical or
//! I/O failure, 4 a `verify` check failed.

pub mod config;
pub mod verify;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::bounds::{
    bayes_risk_exact, bound_asymptotic, bound_avg_conditional, bound_avg_theta, bound_conditional,
    bound_global, bound_ww, bound_ww_conditional, BoundResult, Flavor,
};
use crate::error::Error;
use crate::format::{fmt_opt, fmt_sig};
use crate::matrix_bounds::{mat_bound, matrix_to_csv, mse_matrix_exact, VectorEstimator};
use crate::optimize::{error_status, maximize, optimum_csv, sweep};
use crate::testfn::PsiFamily;
use config::{ConfigError, ModelConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "riskbound", version, about = "Bayes-risk lower bounds under squared-error loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Io {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output file (overrides output.csv_path)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact Bayes risk of the configured model
    Risk(Io),
    /// One bound as configured in the `bound` section
    Bound(Io),
    /// Bound values over the `sweep` grid
    Sweep(Io),
    /// Maximize the configured bound family over the `optimize` ranges
    Optimize(Io),
    /// Run the invariant battery for the configured model
    Verify(Io),
    /// Optimized bound families next to the exact risk
    Compare(Io),
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error(transparent)]
    Numeric(#[from] Error),
    #[error("{0} verify check(s) failed")]
    Verify(usize),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Read { .. } => EXIT_CONFIG,
            CliError::Numeric(Error::InvalidInput(_) | Error::InvalidSpec(_)) => EXIT_CONFIG,
            CliError::Numeric(_) | CliError::Write { .. } => EXIT_NUMERIC,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }
}

/// Runs the CLI on `argv` (program name first), writing reports to `out`
/// and diagnostics to `err`. Returns the process exit code.
pub fn run_with(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

fn load(io: &Io) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(&io.config).map_err(|source| CliError::Read {
        path: io.config.display().to_string(),
        source,
    })?;
    Ok(RunConfig::parse(&text)?)
}

/// Writes `text` to the output path when one is set, else to `out`.
fn emit(text: &str, path: Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(&p, text).map_err(|source| CliError::Write {
            path: p.display().to_string(),
            source,
        }),
        None => out.write_all(text.as_bytes()).map_err(|source| CliError::Write {
            path: "stdout".into(),
            source,
        }),
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let (io, run): (Io, fn(&RunConfig, &mut dyn Write, Option<PathBuf>) -> Result<(), CliError>) = match command {
        Command::Risk(io) => (io, cmd_risk),
        Command::Bound(io) => (io, cmd_bound),
        Command::Sweep(io) => (io, cmd_sweep),
        Command::Optimize(io) => (io, cmd_optimize),
        Command::Verify(io) => (io, cmd_verify),
        Command::Compare(io) => (io, cmd_compare),
    };
    let cfg = load(&io)?;
    for w in cfg.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
    let path = io.out.clone().or_else(|| cfg.output.csv_path.clone().map(PathBuf::from));
    run(&cfg, out, path)
}

fn cmd_risk(cfg: &RunConfig, out: &mut dyn Write, path: Option<PathBuf>) -> Result<(), CliError> {
    let digits = cfg.output.precision;
    let text = match &cfg.model {
        ModelConfig::Scalar(m) => {
            let r = bayes_risk_exact(m, &cfg.integration)?;
            format!("{}\n", fmt_sig(r.value.expect("exact risk is ok"), digits))
        }
        ModelConfig::Vector(v) => {
            let sigma = mse_matrix_exact(&v.model, &VectorEstimator::posterior_mean(&v.model), &cfg.integration)?;
            matrix_to_csv(&sigma, digits)
        }
    };
    emit(&text, path, out)
}

fn scalar_bound(cfg: &RunConfig) -> Result<BoundResult, CliError> {
    let model = cfg.scalar_model("bound")?;
    let b = cfg.require_bound()?;
    let ic = &cfg.integration;
    Ok(match b.scalar_flavor()? {
        Flavor::ExactRisk => bayes_risk_exact(model, ic)?,
        Flavor::Asymptotic => bound_asymptotic(model, ic)?,
        Flavor::Ww => bound_ww(model, b.require_h()?, b.require_s()?, ic)?,
        Flavor::WwConditional => bound_ww_conditional(model, b.require_h()?, b.require_s()?, b.scalar_y()?, ic)?,
        Flavor::Global => bound_global(model, &b.scalar_psi()?, ic)?,
        Flavor::Conditional => bound_conditional(model, &b.scalar_psi()?, b.scalar_y()?, ic)?,
        Flavor::AvgConditional => bound_avg_conditional(model, &b.scalar_psi()?, ic)?,
        Flavor::AvgTheta => bound_avg_theta(model, &b.scalar_psi()?, ic)?,
    })
}

fn cmd_bound(cfg: &RunConfig, out: &mut dyn Write, path: Option<PathBuf>) -> Result<(), CliError> {
    let digits = cfg.output.precision;
    let text = match &cfg.model {
        ModelConfig::Scalar(_) => {
            let r = scalar_bound(cfg)?;
            format!("{}\n{}\n", BoundResult::CSV_HEADER, r.csv_row(digits))
        }
        ModelConfig::Vector(v) => {
            let b = cfg.require_bound()?;
            let r = mat_bound(&v.model, &b.vector_psi()?, &b.matrix_flavor()?, &cfg.integration)?;
            if !r.is_ok() {
                return Err(Error::NonFinite(format!("matrix bound status {}", r.status.as_str())).into());
            }
            matrix_to_csv(&r.bound_matrix, digits)
        }
    };
    emit(&text, path, out)
}

fn swept_family(cfg: &RunConfig) -> Result<(PsiFamily, Flavor), CliError> {
    let b = cfg.require_bound()?;
    let family = b.require_family()?;
    if !matches!(family, PsiFamily::Ww | PsiFamily::Cond) {
        return Err(ConfigError {
            key: "bound.family".into(),
            message: "must be ww or cond".into(),
        }
        .into());
    }
    let flavor = b.scalar_flavor()?;
    let ok = match flavor {
        Flavor::Global | Flavor::AvgConditional | Flavor::AvgTheta => true,
        Flavor::Ww => family == PsiFamily::Ww,
        _ => false,
    };
    if !ok {
        return Err(ConfigError {
            key: "bound.flavor".into(),
            message: format!("flavor {} cannot be optimized over (h, s) for this family", flavor.as_str()),
        }
        .into());
    }
    Ok((family, flavor))
}

fn cmd_sweep(cfg: &RunConfig, out: &mut dyn Write, path: Option<PathBuf>) -> Result<(), CliError> {
    let model = cfg.scalar_model("sweep")?;
    let (family, flavor) = swept_family(cfg)?;
    let grid = cfg.sweep.as_ref().ok_or_else(|| ConfigError {
        key: "sweep".into(),
        message: "missing required section".into(),
    })?;
    let table = sweep(model, family, flavor, &grid.h_grid, &grid.s_grid, &cfg.integration)?;
    emit(&table.to_csv(cfg.output.precision), path, out)
}

fn cmd_optimize(cfg: &RunConfig, out: &mut dyn Write, path: Option<PathBuf>) -> Result<(), CliError> {
    let model = cfg.scalar_model("optimize")?;
    let (family, flavor) = swept_family(cfg)?;
    let ranges = cfg.optimize.as_ref().ok_or_else(|| ConfigError {
        key: "optimize".into(),
        message: "missing required section".into(),
    })?;
    if flavor == Flavor::Ww && ranges.s_range.1 >= 1.0 {
        return Err(ConfigError {
            key: "optimize.s_range".into(),
            message: "the ww flavor needs s below 1".into(),
        }
        .into());
    }
    let opt = maximize(model, family, flavor, ranges.h_range, ranges.s_range, &cfg.integration)?;
    emit(&optimum_csv(&opt, cfg.output.precision), path, out)
}

fn cmd_verify(cfg: &RunConfig, out: &mut dyn Write, path: Option<PathBuf>) -> Result<(), CliError> {
    let checks = match &cfg.model {
        ModelConfig::Scalar(m) => verify::scalar_battery(m, &cfg.integration)?,
        ModelConfig::Vector(v) => verify::vector_battery(&v.model, &cfg.integration)?,
    };
    let failed = checks.iter().filter(|c| !c.passed).count();
    let mut text: String = checks.iter().map(|c| c.line() + "\n").collect();
    text.push_str(&format!("{} checks, {} failed\n", checks.len(), failed));
    emit(&text, path, out)?;
    if failed > 0 {
        return Err(CliError::Verify(failed));
    }
    Ok(())
}

/// Default ranges used by `compare` when the config has no `optimize` section.
pub const DEFAULT_H_RANGE: (f64, f64) = (0.1, 3.0);
pub const DEFAULT_S_RANGE: (f64, f64) = (0.1, 0.9);

pub const COMPARE_HEADER: &str = "family,flavor,h,s,value,exact_risk,tightness,status";

fn cmd_compare(cfg: &RunConfig, out: &mut dyn Write, path: Option<PathBuf>) -> Result<(), CliError> {
    let model = cfg.scalar_model("compare")?;
    let ic = &cfg.integration;
    let digits = cfg.output.precision;
    let (h_range, s_range) = cfg
        .optimize
        .as_ref()
        .map_or((DEFAULT_H_RANGE, DEFAULT_S_RANGE), |o| (o.h_range, o.s_range));
    let risk = bayes_risk_exact(model, ic)?.value.expect("exact risk is ok");
    let row = |family: &str, flavor: &str, h: Option<f64>, s: Option<f64>, value: Option<f64>, status: &str| {
        format!(
            "{family},{flavor},{},{},{},{},{},{status}\n",
            fmt_opt(h, digits),
            fmt_opt(s, digits),
            fmt_opt(value, digits),
            fmt_sig(risk, digits),
            fmt_opt(value.map(|v| v / risk), digits),
        )
    };
    let mut text = format!("{COMPARE_HEADER}\n");
    text.push_str(&row("exact", "exact_risk", None, None, Some(risk), "ok"));
    // the joint-ratio family needs s < 1
    let ww_s = (s_range.0, s_range.1.min(0.99));
    for (family, flavor, s_range) in [
        (PsiFamily::Ww, Flavor::Ww, ww_s),
        (PsiFamily::Cond, Flavor::AvgTheta, s_range),
    ] {
        let line = match maximize(model, family, flavor, h_range, s_range, ic) {
            Ok(o) => row(
                family.as_str(),
                flavor.as_str(),
                Some(o.h_star),
                Some(o.s_star),
                Some(o.value),
                o.result.status.as_str(),
            ),
            Err(e @ (Error::AllDegenerate | Error::ConditionViolated { .. } | Error::NonRegular(_))) => {
                row(family.as_str(), flavor.as_str(), None, None, None, error_status(&e))
            }
            Err(e) => return Err(e.into()),
        };
        text.push_str(&line);
    }
    let asym = bound_asymptotic(model, ic)?;
    text.push_str(&row("fisher", "asymptotic", None, None, asym.value, asym.status.as_str()));
    emit(&text, path, out)
}
