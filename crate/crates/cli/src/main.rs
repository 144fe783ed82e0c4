use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rasper::concordance::Measure;
use rasper::selection::Criterion;
use rasper::RasperError;
use serde::Serialize;

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "rasper", version, about = "Rank-association penalized regression")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads; defaults to the available cores. Results do not
    /// depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Fit at fixed (lambda, alpha), or a least-squares baseline.
    Fit(FitArgs),
    /// Choose (lambda, alpha) on a grid by LOOCV or AIC.
    Select(SelectArgs),
    /// Append RMST jackknife pseudovalues to a survival CSV.
    Pseudo(PseudoArgs),
    /// Nomogram scores and the ranks they induce.
    Score(ScoreArgs),
    /// Run a simulation setting.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON schema sidecar; alternatively give the column flags below.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, conflicts_with = "schema")]
    pub outcome: Option<String>,
    #[arg(long, value_delimiter = ',', conflicts_with = "schema")]
    pub conventional: Vec<String>,
    #[arg(long, value_delimiter = ',', conflicts_with = "schema")]
    pub novel: Vec<String>,
    /// External risk score column; larger values predict a larger outcome.
    #[arg(long, conflicts_with = "schema")]
    pub score: Option<String>,
    #[arg(long, conflicts_with = "schema")]
    pub id: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct RankArgs {
    #[arg(long, default_value = "spearman")]
    pub measure: Measure,
    /// Marginalize the ranking parameters over sampled novel covariates.
    #[arg(long)]
    pub marginalized: bool,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Smoothing scale; defaults to 0.1 times the norm of the least-squares
    /// slope on the standardized design.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Disable squared extrapolation of the MM map.
    #[arg(long)]
    pub plain_mm: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Rasper,
    Ridge,
    Ols,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub rank: RankArgs,
    #[arg(long, value_enum, default_value_t = FitMethod::Rasper)]
    pub method: FitMethod,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub rank: RankArgs,
    /// Grid bounds default to n-scaled values: lambda in [0.01n, 1000n],
    /// alpha in [1e-4 n, 100n]. Zero is always included.
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub lambda_steps: usize,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub alpha_steps: usize,
    /// Evaluate a single point instead of a grid.
    #[arg(long, requires = "alpha", conflicts_with_all = ["lambda_min", "lambda_max", "alpha_min", "alpha_max"])]
    pub lambda: Option<f64>,
    #[arg(long, requires = "lambda")]
    pub alpha: Option<f64>,
    #[arg(long, default_value = "loocv")]
    pub criterion: Criterion,
    /// Kendall tau between fitted values and external scores along the
    /// lambda path at the chosen alpha.
    #[arg(long)]
    pub trace_lambda: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PseudoArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "time")]
    pub time: String,
    /// Event indicator column, 1 = event observed.
    #[arg(long, default_value = "event")]
    pub event: String,
    /// Truncation time, months.
    #[arg(long, default_value_t = rasper::survival::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value = "pseudo_rmst")]
    pub column: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "psa")]
    pub psa: String,
    #[arg(long, default_value = "visceral_mets")]
    pub visceral: String,
    #[arg(long, default_value = "ecog_ge2")]
    pub ecog: String,
    #[arg(long, default_value = "days_to_progression")]
    pub days: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    HighRcFar,
    LowRc,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub setting: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Overrides the setting's replication count.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Overrides the setting's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &RasperError) -> u8 {
    match err {
        RasperError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a, &cli.command),
        Command::Select(a) => commands::select(a, &cli.command),
        Command::Pseudo(a) => commands::pseudo(a, &cli.command),
        Command::Score(a) => commands::score(a, &cli.command),
        Command::Simulate(a) => commands::simulate(a, &cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
