use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use mfbo_cli::commands;
use mfbo_cli::config::{ExperimentConfig, Overrides};
use mfbo_core::engine::AcquisitionChoice;

#[derive(Parser)]
#[command(name = "mfbo", version, about = "Multi-fidelity cost-aware Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded optimization repetitions and write histories and summaries.
    Optimize(Common),
    /// Fit on the initial data and report the fidelity manifold and exclusion verdicts.
    Manifold(Common),
    /// Relative error of every low-fidelity source against the high-fidelity one.
    Rrmse(Common),
    /// Held-out error of the multi-source emulator against a high-fidelity-only fit.
    Emulate(Common),
    /// Registered benchmark problems.
    List,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark name (see `list`).
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Repetitions run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory (default: $MFBO_OUT_DIR, then ./mfbo-out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_af)]
    af: Option<AcquisitionChoice>,
    /// Keep every source instead of screening them on the initial data.
    #[arg(long)]
    no_exclude: bool,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    stagnation: Option<usize>,
}

fn parse_af(s: &str) -> Result<AcquisitionChoice, String> {
    s.parse()
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply(&Overrides {
            problem: self.problem.clone(),
            seed: self.seed,
            reps: self.reps,
            out: self.out.clone(),
            af: self.af,
            no_exclude: self.no_exclude,
            budget: self.budget,
            stagnation: self.stagnation,
        });
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Optimize(c) => commands::optimize(&c.load()?, c.jobs),
        Command::Manifold(c) => commands::manifold(&c.load()?),
        Command::Rrmse(c) => commands::rrmse_table(&c.load()?),
        Command::Emulate(c) => commands::emulate(&c.load()?),
        Command::List => {
            print!("{}", commands::list());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
