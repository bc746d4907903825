//! `fairval` command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 config error, 3 numerical
//! nonconvergence.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use run::CliError;

#[derive(Parser)]
#[command(name = "fairval", version, about = "Two-step fair valuation of hybrid insurance liabilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated paths (overrides the config).
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate equity and mortality scenarios and export them as CSV.
    Simulate(RunArgs),
    /// One-period hedging strategies and fair values.
    ValueOnePeriod(RunArgs),
    /// Backward-recursive valuation with per-period diagnostics.
    ValueDynamic {
        #[command(flatten)]
        run: RunArgs,
        /// Value a scenario export written by `simulate` instead of simulating.
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
    /// Print the summary of a result directory.
    Report {
        /// Result directory written by a `value-*` command.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config whose `[output] dir` names the result directory.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.override_run(args.seed, args.paths);
    let out = cfg.out_dir(args.out.clone())?;
    Ok((cfg, out))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let (cfg, out) = load(&args)?;
            run::simulate(&cfg, &out)
        }
        Command::ValueOnePeriod(args) => {
            let (cfg, out) = load(&args)?;
            run::value_one_period(&cfg, &out)
        }
        Command::ValueDynamic { run: args, scenarios } => {
            let (cfg, out) = load(&args)?;
            run::value_dynamic(&cfg, &out, scenarios.as_deref())
        }
        Command::Report { out, config } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            run::report(&run::out_dir(cfg.as_ref(), out)?)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
