//! `trimfit`: generate instances, fit single components, recover all
//! components, compute diagnostics and run scripted experiments.
//!
//! Exit codes: 0 success, 1 error, 2 not converged within `max_rounds`,
//! 3 partial recovery.

mod commands;
mod config;
mod experiment;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;

#[derive(Parser, Debug)]
#[command(
    name = "trimfit",
    version,
    about = "Iterative least trimmed squares for mixed linear regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a dataset CSV and its ground-truth sidecar from a config.
    Generate(commands::GenerateArgs),
    /// Fit one component with ILTS or its gradient variant.
    Fit(commands::FitArgs),
    /// Recover every component.
    Global(commands::GlobalArgs),
    /// Separation, feature regularity and affine error of an instance.
    Diagnose(commands::DiagnoseArgs),
    /// Run a configured experiment over several seeds.
    Experiment { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Global(a) => commands::global(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Experiment { config } => experiment::experiment(config),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Ok(Outcome::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
