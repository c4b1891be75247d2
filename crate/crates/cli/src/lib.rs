//! `sfm` command-line front end.
//!
//! [`run_command`] takes an argument vector and returns the exit code and
//! both output streams, so the whole CLI is testable in-process. Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 numerical failure.

pub mod json;
mod table;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sfm_core::classify::{investor_reports, matches_published, ClassifyInputs, ScenarioGenerator};
use sfm_core::dataset::{bundled, growth_series, load_series, MarketSeries};
use sfm_core::mc::{validate_identities_with, DEFAULT_DRAWS, DEFAULT_SEED};
use sfm_core::model::{euler_gap, Eq3Variant, LnExMode, ModelOptions, ModelParams};
use sfm_core::moments::{estimate_moments, lognormality_gap, MomentSet, VarianceConvention};
use sfm_core::solver::{
    manifold_distance, residual_floor, solve, tau_grid, trace_manifold, ConvergenceReason,
    SolverConfig,
};
use sfm_core::SfmError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CommandOutcome {
    fn ok(stdout: String) -> Self {
        CommandOutcome {
            exit_code: EXIT_OK,
            stdout,
            stderr: String::new(),
        }
    }

    fn fail(exit_code: i32, stderr: String) -> Self {
        CommandOutcome {
            exit_code,
            stdout: String::new(),
            stderr,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sfm", version, about = "Sufficiency factor model calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample moments of the series and the lognormality gap (JSON).
    Moments(MomentsArgs),
    /// Damped least-squares solve of the four-equation system.
    Solve(SolveArgs),
    /// Trace the one-parameter solution curve over a tau grid.
    Manifold(ManifoldArgs),
    /// Monte Carlo check of the lognormal covariance identities.
    Validate(ValidateArgs),
    /// Certain/uncertain utility and risk-attitude labels for both investors.
    Classify(ClassifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Canonical CSV: year,consumption,equity_return,riskfree_return
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "sample")]
    variance: VarianceConvention,
}

#[derive(Debug, Args)]
struct OptionArgs {
    #[arg(long, default_value = "printed")]
    eq3: Eq3Variant,
    #[arg(long, default_value = "arithmetic")]
    lnex: LnExMode,
}

impl OptionArgs {
    fn options(&self) -> ModelOptions {
        ModelOptions {
            eq3: self.eq3,
            lnex: self.lnex,
        }
    }
}

#[derive(Debug, Args)]
struct MomentsArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: OptionArgs,
    #[arg(long, allow_negative_numbers = true, default_value_t = ModelParams::CANONICAL_START.beta)]
    beta0: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = ModelParams::CANONICAL_START.omega)]
    omega0: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = ModelParams::CANONICAL_START.delta)]
    delta0: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = ModelParams::CANONICAL_START.tau)]
    tau0: f64,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug, Args)]
struct ManifoldArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: OptionArgs,
    #[arg(long, allow_negative_numbers = true)]
    tau_min: f64,
    #[arg(long, allow_negative_numbers = true)]
    tau_max: f64,
    /// Number of grid intervals; the curve has steps + 1 points.
    #[arg(long)]
    steps: usize,
    /// Report the distance from BETA,OMEGA,DELTA,TAU to the curve.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    target: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Series for the market case; the bundled 1889-1978 file if omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    year: i32,
    #[arg(long)]
    beta: f64,
    #[arg(long, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long)]
    sfom_equity: f64,
    #[arg(long)]
    sfom_riskfree: f64,
    #[arg(long, default_value = "returns")]
    scenarios: ScenarioGenerator,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

pub fn run_command<I, S>(argv: I) -> CommandOutcome
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    CommandOutcome::ok(e.to_string())
                }
                _ => CommandOutcome::fail(EXIT_USAGE, e.to_string()),
            };
        }
    };
    let result = match cli.command {
        Command::Moments(args) => cmd_moments(&args),
        Command::Solve(args) => cmd_solve(&args),
        Command::Manifold(args) => cmd_manifold(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::Classify(args) => cmd_classify(&args),
    };
    match result {
        Ok(outcome) => outcome,
        Err(err) => {
            let code = if err.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_NUMERICAL
            };
            CommandOutcome::fail(code, format!("error: {err}\n"))
        }
    }
}

type CmdResult = Result<CommandOutcome, SfmError>;

fn load_moments(args: &DataArgs) -> Result<(MarketSeries, MomentSet), SfmError> {
    let series = load_series(&args.data)?;
    let m = estimate_moments(&growth_series(&series), args.variance)?;
    Ok((series, m))
}

fn options_json(options: ModelOptions, variance: VarianceConvention) -> Value {
    json!({
        "eq3": options.eq3.as_str(),
        "lnex": options.lnex.as_str(),
        "variance": variance.as_str(),
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("core types serialise to JSON")
}

fn cmd_moments(args: &MomentsArgs) -> CmdResult {
    let (_, m) = load_moments(&args.data)?;
    let mut value = to_value(&m);
    value["gap"] = json!(lognormality_gap(&m));
    Ok(CommandOutcome::ok(json::to_canonical_string(&value)))
}

fn cmd_solve(args: &SolveArgs) -> CmdResult {
    let (_, m) = load_moments(&args.data)?;
    let initial = ModelParams::new(args.beta0, args.omega0, args.delta0, args.tau0)?;
    let cfg = SolverConfig {
        initial,
        max_iterations: args.max_iterations,
        options: args.model.options(),
        ..SolverConfig::default()
    };
    let sol = solve(&m, &cfg)?;
    let value = json!({
        "params": to_value(&sol.params),
        "residuals": to_value(&sol.residuals),
        "rank": sol.numerical_rank,
        "singular_values": sol.jacobian_singular_values.to_vec(),
        "gap": sol.gap,
        "residual_floor": residual_floor(sol.gap),
        "euler_gap": euler_gap(&m, &sol.params),
        "converged": sol.converged.as_str(),
        "iterations": sol.iterations,
        "options": options_json(cfg.options, args.data.variance),
    });
    let text = match args.format {
        Format::Json => json::to_canonical_string(&value),
        Format::Table => table::solution(&sol, &m, cfg.options, args.data.variance),
    };
    if sol.converged == ConvergenceReason::MaxIterations {
        let msg = format!(
            "error: solver stopped after {} iterations without converging\n{text}",
            sol.iterations
        );
        return Ok(CommandOutcome::fail(EXIT_NUMERICAL, msg));
    }
    Ok(CommandOutcome::ok(text))
}

fn cmd_manifold(args: &ManifoldArgs) -> CmdResult {
    if args.target.as_ref().is_some_and(|t| t.len() != 4) {
        return Ok(CommandOutcome::fail(
            EXIT_USAGE,
            "error: --target takes BETA,OMEGA,DELTA,TAU\n".into(),
        ));
    }
    let (_, m) = load_moments(&args.data)?;
    let grid = tau_grid(args.tau_min, args.tau_max, args.steps)?;
    let curve = trace_manifold(&m, &grid, args.model.options())?;
    let target = match &args.target {
        Some(v) => Some(ModelParams::new(v[0], v[1], v[2], v[3])?),
        None => None,
    };
    let mut value = json!({
        "options": options_json(args.model.options(), args.data.variance),
        "gap": lognormality_gap(&m),
        "points": curve.iter().map(to_value).collect::<Vec<_>>(),
    });
    if let Some(t) = target {
        value["target"] = to_value(&t);
        value["target_distance"] = json!(manifold_distance(&curve, &t));
    }
    let text = match args.format {
        Format::Json => json::to_canonical_string(&value),
        Format::Table => {
            table::manifold(&curve, value.get("target_distance").and_then(Value::as_f64))
        }
    };
    Ok(CommandOutcome::ok(text))
}

fn cmd_validate(args: &ValidateArgs) -> CmdResult {
    if args.draws < 10_000 {
        return Ok(CommandOutcome::fail(
            EXIT_USAGE,
            "error: --draws must be at least 10000\n".into(),
        ));
    }
    let series = match &args.data {
        Some(path) => load_series(path)?,
        None => bundled(),
    };
    let m = estimate_moments(&growth_series(&series), VarianceConvention::Sample)?;
    let report = validate_identities_with(&m, args.draws, args.seed);
    let text = match args.format {
        Format::Json => json::to_canonical_string(&to_value(&report)),
        Format::Table => table::validation(&report),
    };
    if report.all_pass {
        Ok(CommandOutcome::ok(text))
    } else {
        Ok(CommandOutcome::fail(EXIT_NUMERICAL, text))
    }
}

fn cmd_classify(args: &ClassifyArgs) -> CmdResult {
    let series = load_series(&args.data)?;
    let inputs = ClassifyInputs {
        year: args.year,
        beta: args.beta,
        tau: args.tau,
        sfom_equity: args.sfom_equity,
        sfom_riskfree: args.sfom_riskfree,
        generator: args.scenarios,
    };
    let rows = investor_reports(&series, &inputs)?;
    let text = match args.format {
        Format::Json => {
            let rows: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let mut v = to_value(r);
                    v["matches_published"] = json!(matches_published(r));
                    v
                })
                .collect();
            json::to_canonical_string(&json!({
                "scenarios": args.scenarios.as_str(),
                "rows": rows,
            }))
        }
        Format::Table => table::investors(&rows),
    };
    Ok(CommandOutcome::ok(text))
}
