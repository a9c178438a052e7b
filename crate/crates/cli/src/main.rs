use std::process::ExitCode;

use clap::{Parser, Subcommand};
use st3d_cli::commands::{self, EvalArgs, PlotArgs, SimulateArgs, TrackArgs};
use st3d_cli::CliResult;

/// Stereo 3D object tracking experiments.
#[derive(Debug, Parser)]
#[command(name = "st3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scenario and render its cues and images.
    Simulate(SimulateArgs),
    /// Track a simulated scenario.
    Track(TrackArgs),
    /// Compute CLEAR MOT metrics for one or more hypothesis files.
    Eval(EvalArgs),
    /// Draw a bird's-eye view of trajectories.
    Plot(PlotArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(a).map(drop),
        Command::Track(a) => commands::track(a).map(drop),
        Command::Eval(a) => commands::eval(a).map(drop),
        Command::Plot(a) => commands::plot(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code())
        }
    }
}
