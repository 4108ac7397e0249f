//! `sutura` command line: dataset synthesis, cross-validated training,
//! threshold-sweep evaluation, single-frame decoding, and curve merging.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or flag combinations),
//! 2 runtime failure (IO, bad file contents, training errors).

mod commands;
mod range;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "sutura",
    version,
    about = "Suture landmark detection: synthetic data, training, and evaluation"
)]
struct Cli {
    /// Worker threads for batch forward passes. 1 (the default) guarantees
    /// bit-identical reruns; higher values only change wall time, not
    /// results, because frames are merged in input order.
    #[arg(long, global = true, env = "SUTURA_THREADS", default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with exact landmark labels
    Synth(commands::synth::SynthArgs),
    /// Train with surgery-level k-fold cross validation
    Train(commands::train::TrainArgs),
    /// Sweep decode thresholds for a checkpoint and write the curve CSV
    Eval(commands::eval::EvalArgs),
    /// Decode one heatmap or image into landmark coordinates
    Decode(commands::decode::DecodeArgs),
    /// Merge per-fold curve CSVs into one cross-fold curve
    Curves(commands::curves::CurvesArgs),
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive as "errors" but are
            // successful output; real parse problems are usage errors,
            // remapped from clap's default exit code 2 to 1.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = if cli.threads == 0 {
        Err(CliError::Usage("--threads must be at least 1".into()))
    } else {
        match cli.command {
            Command::Synth(args) => commands::synth::run(&args),
            Command::Train(args) => commands::train::run(&args),
            Command::Eval(args) => commands::eval::run(&args, cli.threads),
            Command::Decode(args) => commands::decode::run(&args),
            Command::Curves(args) => commands::curves::run(&args),
        }
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
