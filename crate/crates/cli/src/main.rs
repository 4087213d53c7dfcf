//! `lineqgp`: fit, sample, predict, estimate and benchmark constrained GP
//! models from a TOML config and CSV data.

mod artifact;
mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "lineqgp", version, about = "Gaussian process regression under linear inequality constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (overrides the config `output`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Condition on the data and compute the MAP; writes model.json.
    Fit(Common),
    /// Sample the truncated posterior; writes chain.csv and diagnostics.json.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Model written by `fit` (default: <out>/model.json).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Posterior mean, 90% band and MAP curve; writes prediction.csv.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Chain written by `sample` (default: <out>/chain.csv).
        #[arg(long, value_name = "PATH")]
        chain: Option<PathBuf>,
    },
    /// Maximum (constrained) likelihood estimation; writes estimation.json.
    Estimate(Common),
    /// Sampler efficiency table; writes benchmark.csv.
    Benchmark(Common),
}

fn context(c: Common) -> Result<Context, CliError> {
    let config = RunConfig::load(&c.config)?;
    Context::new(config, c.seed, c.out, c.quiet)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(c) => commands::fit(&context(c)?),
        Command::Sample { common, model } => {
            let ctx = context(common)?;
            let model = model.unwrap_or_else(|| ctx.out.join("model.json"));
            commands::sample(&ctx, &model)
        }
        Command::Predict { common, model, chain } => {
            let ctx = context(common)?;
            let model = model.unwrap_or_else(|| ctx.out.join("model.json"));
            let chain = chain.unwrap_or_else(|| ctx.out.join("chain.csv"));
            commands::predict(&ctx, &model, &chain)
        }
        Command::Estimate(c) => commands::estimate(&context(c)?),
        Command::Benchmark(c) => commands::benchmark(&context(c)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
