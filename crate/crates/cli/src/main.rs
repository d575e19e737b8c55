//! `stgp`: simulate, fit, forecast, score and compare spatio-temporal GP
//! count models.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Manifest(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] stgp::Error),
    #[error("not converged: R-hat >= {threshold} for {}", params.join(", "))]
    Convergence {
        threshold: f64,
        params: Vec<String>,
        summary: String,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Convergence { .. } => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "stgp",
    version,
    about = "Spatio-temporal Gaussian-process models for weekly disease counts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Run configuration (TOML).
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Random seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Model preset (model1 to model6); overrides the configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Chain worker threads; overrides the configuration.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic panel from the configured model.
    Simulate(RunArgs),
    /// Fit the configured model by HMC.
    Fit(RunArgs),
    /// Forecast counts after the training window.
    Predict(RunArgs),
    /// Score a fit with PSIS-LOO, CRPS and a posterior predictive p-value.
    Evaluate(RunArgs),
    /// Rank evaluated runs by looic.
    Compare {
        /// Report files or evaluated run directories.
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(p) = &args.preset {
        cfg.model.preset = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Simulate(a) => commands::cmd_simulate(&load(&a)?, &a.out),
        Command::Fit(a) => commands::cmd_fit(&load(&a)?, &a.out),
        Command::Predict(a) => commands::cmd_predict(&load(&a)?, &a.out),
        Command::Evaluate(a) => commands::cmd_evaluate(&load(&a)?, &a.out),
        Command::Compare { reports, out } => commands::cmd_compare(&reports, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CliError::Convergence { summary, .. } = &e {
                print!("{summary}");
            }
            if let CliError::Core(stgp::Error::Sampler { trace, .. }) = &e {
                let tail: Vec<String> = trace.iter().rev().take(10).rev().map(|s| format!("{s:.3e}")).collect();
                eprintln!("last warmup step sizes: {}", tail.join(" "));
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
