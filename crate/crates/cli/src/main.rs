//! `ledclock`: render synthetic captures, decode LED-clock timestamps, fit
//! and apply clock models, align tracks and evaluate synchronization.
//!
//! Exit codes: 0 success, 2 input or schema error, 3 no usable frames or
//! samples.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Returns early with an input error (exit code 2).
macro_rules! invalid {
    ($($t:tt)*) => {
        return Err($crate::io::Failure::Input(anyhow::anyhow!($($t)*)))
    };
}

mod align;
mod decode;
mod eval;
mod io;
mod render;
mod timing;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Parser)]
#[command(name = "ledclock", version, about = "LED-clock exposure timestamping and multi-stream synchronization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Board geometry JSON (defaults to the built-in board).
    #[arg(long, global = true)]
    geometry: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic frame sequence (or tracker fiducials) with ground truth.
    Render(render::RenderArgs),
    /// Decode exposure windows from PGM frames or tracker JSON lines.
    Decode(decode::DecodeArgs),
    /// Decode tracker JSON lines (same as `decode --mode ftk`).
    FtkDecode(decode::DecodeArgs),
    /// Fit the local-to-global clock model of one stream.
    Fit(timing::FitArgs),
    /// Map local timestamps to the global timeline with a fitted model.
    Retime(timing::RetimeArgs),
    /// Resample 2D tracks of several streams at common global times.
    Align(align::AlignArgs),
    /// Compute a synchronization metric.
    Eval(eval::EvalArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Image,
    Ir,
    Ftk,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(a) => render::run(&a),
        Command::Decode(a) => decode::run(&a),
        Command::FtkDecode(a) => decode::run(&decode::DecodeArgs { mode: Mode::Ftk, ..a }),
        Command::Fit(a) => timing::fit(&a),
        Command::Retime(a) => timing::retime(&a),
        Command::Align(a) => align::run(&a),
        Command::Eval(a) => eval::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
