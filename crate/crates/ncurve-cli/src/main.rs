//! `ncurve` — generate, fit, predict, evaluate, and export plot data for
//! mixtures of Bézier curves with Gaussian control points.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod cmd_eval;
mod cmd_fit;
mod cmd_gen;
mod cmd_plotdata;
mod cmd_predict;
mod common;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ncurve::NCurveError;

use crate::common::Globals;

#[derive(Parser)]
#[command(
    name = "ncurve",
    version,
    about = "Probabilistic sequence modeling with Bézier curves whose control points are Gaussian"
)]
struct Cli {
    /// Base RNG seed for the active command
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress human-readable summary lines (artifacts are still written)
    #[arg(long, global = true)]
    quiet: bool,

    /// Output path: a directory for `gen`, the main artifact file otherwise
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a built-in toy dataset (toy1..toy5)
    Gen(cmd_gen::GenArgs),
    /// Fit a curve mixture to sequences, optionally conditioned on a prefix
    Fit(cmd_fit::FitArgs),
    /// Emit a model's per-index mixture parameters and its most likely trajectory
    Predict(cmd_predict::PredictArgs),
    /// Score a model against ground-truth sequences (FDE, NLL, RMSE)
    Eval(cmd_eval::EvalArgs),
    /// Emit per-component mean/sigma/3-sigma envelope CSV plus optional samples
    Plotdata(cmd_plotdata::PlotdataArgs),
}

fn exit_code(err: &NCurveError) -> i32 {
    match err {
        NCurveError::NonFiniteLoss { .. }
        | NCurveError::NotPositiveDefinite
        | NCurveError::NotPositiveSemiDefinite => 3,
        _ => 2,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let globals = Globals { seed: cli.seed, quiet: cli.quiet, out: cli.out };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen::run(&globals, &args),
        Command::Fit(args) => cmd_fit::run(&globals, &args),
        Command::Predict(args) => cmd_predict::run(&globals, &args),
        Command::Eval(args) => cmd_eval::run(&globals, &args),
        Command::Plotdata(args) => cmd_plotdata::run(&globals, &args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
