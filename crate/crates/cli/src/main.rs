//! `lmc`: train, align and compare MLPs, and run the transport-rate
//! experiments. Every command reads one JSON config and writes CSV/JSON
//! results plus an echo of the config into `--out`.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lmc", version, about = "Neuron alignment and linear mode connectivity experiments")]
struct Cli {
    /// Worker threads; falls back to LMC_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    /// JSON config for the command.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "lmc-out")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train an MLP and write a checkpoint.
    Train(RunArgs),
    /// Align checkpoint B to checkpoint A and report per-layer costs.
    Align(RunArgs),
    /// Loss along the linear path between two checkpoints.
    Barrier(RunArgs),
    /// Per-layer activation deviation along the linear path.
    Deviations(RunArgs),
    /// Approximate dimensions of a checkpoint's weight and activation matrices.
    Dim(RunArgs),
    /// Two-sample transport cost against sample size.
    Rates(RunArgs),
    /// Transport rate for an approximately low-dimensional Gaussian.
    Lowdim(RunArgs),
    /// Matching cost of isotropic Gaussian weight rows against width.
    Lowerbound(RunArgs),
    /// Naive against covariance-weighted matching for low-rank inputs.
    Gain(RunArgs),
    /// Half-network dropout error against the W1 distance of the halves.
    Dropout(RunArgs),
    /// Two-layer mean-field networks trained independently, then aligned.
    Meanfield(RunArgs),
    /// Train a pair of MNIST MLPs, align by every method, tabulate.
    #[command(name = "repro-mnist")]
    ReproMnist(RunArgs),
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let from_env = std::env::var("LMC_THREADS").ok();
    let threads = match (flag, from_env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(v.trim().parse().with_context(|| format!("LMC_THREADS={v:?} is not a count"))?),
        (None, None) => None,
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Align(a) => commands::align(&a),
        Command::Barrier(a) => commands::barrier(&a),
        Command::Deviations(a) => commands::deviations(&a),
        Command::Dim(a) => commands::dim(&a),
        Command::Rates(a) => commands::rates(&a),
        Command::Lowdim(a) => commands::lowdim(&a),
        Command::Lowerbound(a) => commands::lowerbound(&a),
        Command::Gain(a) => commands::gain(&a),
        Command::Dropout(a) => commands::dropout(&a),
        Command::Meanfield(a) => commands::meanfield(&a),
        Command::ReproMnist(a) => commands::repro_mnist(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
