mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;
use config::Run;

#[derive(Parser)]
#[command(
    name = "lccm",
    version,
    about = "Latent class choice models and posterior analysis"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fit the latent class choice model.
    Estimate,
    /// Posterior class membership from a fitted model.
    Posterior,
    /// Posterior-weighted indicator profiles with F and pairwise t tests.
    Profile,
    /// Fractional multinomial logit of posteriors on covariates.
    Fmnl,
    /// Exploratory factor analysis of the indicators.
    Efa,
    /// Generate a synthetic panel.
    Simulate,
    /// FMNL vs simultaneous vs sequential membership estimates.
    Compare,
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let run = Run::load(cli.config.as_deref(), cli.seed, cli.out.clone())?;
    match cli.command {
        Command::Estimate => commands::cmd_estimate(&run),
        Command::Posterior => commands::cmd_posterior(&run),
        Command::Profile => commands::cmd_profile(&run),
        Command::Fmnl => commands::cmd_fmnl(&run),
        Command::Efa => commands::cmd_efa(&run),
        Command::Simulate => commands::cmd_simulate(&run),
        Command::Compare => commands::cmd_compare(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: estimation did not converge; results written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
