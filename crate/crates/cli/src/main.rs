//! `dcepk`: simulate phantoms, fit or learn PK maps, evaluate results.
//!
//! Exit codes: 0 success, 2 configuration or dimension error, 3 I/O error,
//! 4 more than half of the masked voxels failed to fit, 5 non-finite
//! training loss. Standard output carries one JSON summary line.

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dcepk_cli::commands::{
    cmd_evaluate, cmd_fit, cmd_infer, cmd_simulate, cmd_train, EvaluateArgs, FitArgs, InferArgs, SimulateArgs, TrainArgs,
};

#[derive(Parser)]
#[command(name = "dcepk", version, about = "DCE-MRI pharmacokinetic parameter estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom and write its volumes, AIF and configuration.
    Simulate(SimulateArgs),
    /// Fit PK maps voxel by voxel with least squares.
    Fit(FitArgs),
    /// Train a generator; writes checkpoints and a loss CSV.
    Train(TrainArgs),
    /// Estimate PK maps and the plasma curve from a series.
    Infer(InferArgs),
    /// Compare PK maps and write a metrics CSV and optional SVG figure.
    Evaluate(EvaluateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
