use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod settings;

use commands::{AblateArgs, DeriveArgs, EvalArgs, GenArgs, GradcheckArgs, PlotArgs, TrainArgs};

/// Contextual-attention hand detection toolkit.
///
/// Exit status: 0 on success, 1 when a check fails or training diverges,
/// 2 on usage or input errors.
#[derive(Parser, Debug)]
#[command(name = "handctx", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-difference check of the attention and loss gradients
    Gradcheck(GradcheckArgs),
    /// Derive hand annotations from keypoint detections
    Derive(DeriveArgs),
    /// Train the toy detector on synthetic scenes
    Train(TrainArgs),
    /// Score detections (or a checkpoint) with AP and orientation accuracy
    Eval(EvalArgs),
    /// Train a matrix of configurations over several seeds
    Ablate(AblateArgs),
    /// Write synthetic scenes and their annotations
    Gen(GenArgs),
    /// Render a precision/recall CSV as SVG
    Plot(PlotArgs),
}

/// What a successful run concluded.
pub enum Outcome {
    Done,
    CheckFailed,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use handctx::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Diverged { .. } | Error::Numeric(_) | Error::Constraint(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Derive(a) => commands::derive(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gen(a) => commands::gen(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
