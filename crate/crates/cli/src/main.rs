//! `vpn-reserve <command> --scenario <path> --out <dir> [--seed N]`
//!
//! Runs one solver on a TOML scenario and writes CSV tables plus a
//! `manifest.toml`. On failure it prints a single JSON object on stderr
//! and exits with a nonzero status.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vpn_reserve::runner::{run, Command, RunError};
use vpn_reserve::scenario::{load_scenario, ScenarioError};

#[derive(Debug, Parser)]
#[command(name = "vpn-reserve", version, about = "Dynamic VPN bandwidth reservation solvers")]
struct Args {
    /// One of: bellman, stationary, ergodicity, hierarchy, ce, game, pg
    command: Command,
    /// Scenario file in TOML
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's master seed
    #[arg(long)]
    seed: Option<u64>,
}

fn kind(err: &RunError) -> &'static str {
    match err {
        RunError::Scenario(ScenarioError::Io { .. }) | RunError::Io { .. } | RunError::Csv(_) => "io",
        RunError::Scenario(_) => "scenario",
        RunError::Unsupported { .. } => "unsupported",
        _ => "solver",
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = load_scenario(&args.scenario)
        .map_err(RunError::from)
        .and_then(|mut scenario| {
            if let Some(seed) = args.seed {
                scenario.seed = seed;
            }
            run(args.command, &scenario, &args.out)
        });
    match result {
        Ok(artifact) => {
            for file in &artifact.manifest.files {
                println!("{}", artifact.out_dir.join(&file.name).display());
            }
            println!("{}", artifact.out_dir.join("manifest.toml").display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            let line = serde_json::json!({
                "error": kind(&err),
                "command": args.command.name(),
                "message": err.to_string(),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
