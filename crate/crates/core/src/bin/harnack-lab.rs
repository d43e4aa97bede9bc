use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use harnack_lab::runner::{run, RunConfig, RunOptions, Stage, EXIT_CONFIG};

/// Geometric-flow Harnack laboratory: evolve a torus metric, solve the backward heat equation,
/// and check Harnack estimates and evolution identities.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// all, run-flow, solve-heat, check, verify-identities or convergence.
    #[arg(long, default_value = "all")]
    stage: Stage,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random space-time pairs and random field draws (overrides `check.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Refinement levels of the convergence stage (overrides `check.levels`).
    #[arg(long)]
    levels: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let opts = RunOptions { stage: cli.stage, out: cli.out, seed: cli.seed, levels: cli.levels };
    let outcome = run(&config, &opts);
    for line in &outcome.report {
        println!("{line}");
    }
    ExitCode::from(outcome.exit_code as u8)
}
