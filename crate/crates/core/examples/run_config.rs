//! Drives the staged runner from a TOML file, like the command-line tool does.
//!
//!     cargo run --example run_config -- examples/configs/static_flat_c.toml [stage]

use std::path::PathBuf;

use harnack_lab::{run, RunConfig, RunOptions, Stage};

fn main() -> harnack_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/static_flat_c.toml").into()));
    let stage: Stage = args.next().as_deref().unwrap_or("all").parse()?;

    let config = RunConfig::load(&path)?;
    let outcome = run(&config, &RunOptions { stage, ..RunOptions::default() });
    for line in &outcome.report {
        println!("{line}");
    }
    for a in &outcome.artifacts {
        println!("wrote {}", a.display());
    }
    std::process::exit(outcome.exit_code);
}
