//! `localcar`: elicit boundary priors, fit localised CAR models and run the
//! simulation study from the command line.

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input (exit 2).
    Input(String),
    /// The numerics broke down (exit 3).
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<localcar::error::Error> for CliError {
    fn from(e: localcar::error::Error) -> Self {
        if e.is_input() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "localcar", version, about = "Localised CAR models with elicited boundary priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Elicit border priors from earlier-period counts.
    Elicit(ElicitArgs),
    /// Fit a global or localised model with several chains.
    Fit(FitArgs),
    /// Write simulated replicate datasets.
    Simulate(ConfigArgs),
    /// Run the replicate study comparing the four models.
    Study(ConfigArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Geary,
    Moran,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct ElicitArgs {
    /// Counts CSV with header `area,y,e[,x1,...]`.
    #[arg(long)]
    pub counts: PathBuf,
    /// Adjacency file: area count, then one `k j` pair per line.
    #[arg(long)]
    pub adjacency: PathBuf,
    #[arg(long, value_enum, default_value = "geary")]
    pub method: Method,
    /// Remove covariate effects estimated by a Poisson GLM first.
    #[arg(long)]
    pub covariates: bool,
    /// Add 0.5 to every count before taking logs.
    #[arg(long)]
    pub zero_correct: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorChoice {
    /// Global Leroux model, all border weights fixed at 1.
    Leroux,
    /// Independent Bernoulli(p0) border weights.
    FlatA,
    /// Shared Uniform(0, 1) probability.
    PriorB,
    /// Per-border Uniform(0, 1) probabilities.
    PriorC,
    /// Elicited Geary prior read from `--prior-file`.
    Geary,
    /// Elicited Moran prior read from `--prior-file`.
    Moran,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    Covariate,
    Boundary,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub counts: PathBuf,
    #[arg(long)]
    pub adjacency: PathBuf,
    #[arg(long, value_enum, default_value = "leroux")]
    pub prior: PriorChoice,
    /// `k,j,p` CSV written by `elicit`; required for the geary and moran priors.
    #[arg(long)]
    pub prior_file: Option<PathBuf>,
    /// Border probability for the flat prior.
    #[arg(long, default_value_t = 0.5)]
    pub p0: f64,
    #[arg(long, value_enum, default_value = "covariate")]
    pub mode: ModeChoice,
    #[arg(long, default_value_t = localcar::sampler::DEFAULT_CHAINS)]
    pub chains: usize,
    #[arg(long, default_value_t = 50_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 50_000)]
    pub keep: usize,
    /// Store every `thin`-th kept iteration.
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct ConfigArgs {
    /// Flat JSON document of simulation (and, for `study`, sampler) settings.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Elicit(a) => commands::elicit(a),
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Study(a) => commands::study(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
