//! `mimik` experiment driver.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::OutDir;

#[derive(Parser)]
#[command(name = "mimik", version, about = "CTMC approximations of correlated diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a generator; writes generator.csv and validation.json.
    Build(Common),
    /// Evolve a point mass; writes the joint pmf/CDF, marginals and moments.
    Evolve(Common),
    /// Fit a local correlation field to a target copula.
    FitCopula(Common),
    /// Error sweep over grid spacings; writes rates.csv and slope.json.
    Converge(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("MIMIK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::schema(format!("MIMIK_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::schema(e.to_string()))
}

fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    configure_threads()?;
    let (Command::Build(c) | Command::Evolve(c) | Command::FitCopula(c) | Command::Converge(c)) = &cli.command;
    let cfg = ExperimentConfig::load(&c.config)?;
    let seed = c.seed.or(cfg.seed).unwrap_or(0);
    let mut out = OutDir::create(&c.out)?;
    let res = match &cli.command {
        Command::Build(_) => commands::cmd_build(&cfg, &mut out),
        Command::Evolve(_) => commands::cmd_evolve(&cfg, &mut out),
        Command::FitCopula(_) => commands::cmd_fit_copula(&cfg, &mut out),
        Command::Converge(_) => commands::cmd_converge(&cfg, &mut out, seed),
    };
    for f in out.written() {
        println!("{}", c.out.join(f).display());
    }
    res.map(|_| out.written().to_vec())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mimik: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
