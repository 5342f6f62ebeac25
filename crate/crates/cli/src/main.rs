//! wavemeta: experiment harness for the stochastic damped wave toolkit.
//!
//!   wavemeta <subcommand> --config <path> [--seed N] [--workers N] [--out DIR]
//!
//! Subcommands map to the analysis pipelines: decay, attract, simulate,
//! quasipotential, exit-mc, classify-boundary, exit-rates, control. Every
//! artifact embeds the resolved config and toolkit version; the exit
//! status is 0 iff all invoked assertions pass.

mod commands;
mod config;
mod output;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use output::OutputDir;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "wavemeta", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to WAVEMETA_WORKERS, then logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Artifact filename prefix.
    #[arg(long, global = true, default_value = "wavemeta")]
    prefix: String,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the E-norm decay rate of the damped semigroup.
    Decay,
    /// Attraction certificate: rho_0 recursion plus sampled verification.
    Attract,
    /// Integrate one path (deterministic or stochastic).
    Simulate,
    /// Minimize the rate functional to a target.
    Quasipotential,
    /// Exit-time/exit-place Monte Carlo over an eps list.
    #[command(name = "exit-mc")]
    ExitMc,
    /// Classify a boundary point and construct its witness control.
    #[command(name = "classify-boundary")]
    ClassifyBoundary,
    /// J1/J2 exit-rate tables over a boundary sample.
    #[command(name = "exit-rates")]
    ExitRates,
    /// Exact linear/nonlinear controllability construction.
    Control,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(all_pass) => std::process::exit(if all_pass { 0 } else { 1 }),
        Err(err) => {
            let record = serde_json::json!({
                "error": format!("{err:#}"),
            });
            eprintln!("{record}");
            std::process::exit(2);
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let workers = cli
        .workers
        .or_else(|| {
            std::env::var("WAVEMETA_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("worker pool")?;
    }
    let config_path = cli
        .config
        .context("--config <path> is required")?;
    let text = std::fs::read_to_string(&config_path)
        .with_context(|| format!("read {}", config_path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = OutputDir::new(&cli.out, &cli.prefix)?;
    let (results, verdicts) = match cli.command {
        Command::Decay => commands::decay(&cfg, &out)?,
        Command::Attract => commands::attract(&cfg, &out)?,
        Command::Simulate => commands::simulate(&cfg, &out)?,
        Command::Quasipotential => commands::quasipotential(&cfg, &out)?,
        Command::ExitMc => commands::exit_mc(&cfg, &out)?,
        Command::ClassifyBoundary => commands::classify_boundary(&cfg, &out)?,
        Command::ExitRates => commands::exit_rates(&cfg, &out)?,
        Command::Control => commands::control(&cfg, &out)?,
    };
    for v in &verdicts {
        v.print();
    }
    let path = out.write_summary(&cfg, &results, &verdicts)?;
    println!("summary: {}", path.display());
    Ok(verdicts.iter().all(|v| v.pass))
}
