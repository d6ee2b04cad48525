mod bench;
mod evaluate;
mod fit;
mod report;
mod run;
mod synth;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Monocular visual odometry from precomputed optical flow.
#[derive(Parser)]
#[command(name = "flowvo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Estimate a trajectory (and depth dumps) from a directory of flows.
    Run(run::RunArgs),
    /// Score trajectories against ground truth.
    EvalOdometry(evaluate::OdometryArgs),
    /// Score a depth map against ground-truth disparity.
    EvalDepth(evaluate::DepthArgs),
    /// Calibrate the residual model from flow errors.
    FitResidual(fit::FitArgs),
    /// Write a synthetic scene with ground truth to disk.
    Synth(synth::SynthArgs),
    /// Time the pipeline components on a synthetic scene.
    Benchmark(bench::BenchArgs),
}

/// Marks failures caused by the estimation itself rather than bad input.
#[derive(Debug)]
pub struct Numerical(pub String);

impl fmt::Display for Numerical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numerical {}

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run::run(a),
        Command::EvalOdometry(a) => evaluate::odometry(a),
        Command::EvalDepth(a) => evaluate::depth(a),
        Command::FitResidual(a) => fit::fit(a),
        Command::Synth(a) => synth::synth(a),
        Command::Benchmark(a) => bench::benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Numerical>()) {
                ExitCode::from(EXIT_NUMERICAL)
            } else {
                ExitCode::from(EXIT_INPUT)
            }
        }
    }
}
