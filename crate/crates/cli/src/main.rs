//! `thmm`: simulate, fit, decode and evaluate topological HMMs.

mod commands;
mod config;
mod io;

use clap::{Parser, Subcommand};
use commands::Overrides;
use config::ConfigError;
use std::path::PathBuf;
use std::process::ExitCode;
use thmm::ThmmError;

#[derive(Debug, Parser)]
#[command(name = "thmm", version, about = "Hidden Markov models over sample-path observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for simulation or fitting (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative log-likelihood tolerance for Baum-Welch.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    /// Number of independent fits; the best log-likelihood wins.
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Gaussian smoothing bandwidth as a fraction of [0, 1].
    #[arg(long, global = true)]
    bandwidth: Option<f64>,
    #[arg(long = "grid-points", global = true)]
    grid_points: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset; writes a paths CSV and a true-labels CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Fit a model to a paths CSV; writes model JSON.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Most probable state sequence under a fitted model.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted labels to the truth: ARI, aligned confusion
    /// table and an optional SVG state trace.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Kernel-smooth every path of a paths CSV (needs --bandwidth).
    Smooth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ThmmError>() {
            return match e {
                ThmmError::InvalidInput(_) => 2,
                ThmmError::DimensionMismatch(_) => 4,
                _ => 3,
            };
        }
        if cause.is::<ConfigError>() {
            return 2;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let o = Overrides {
        seed: cli.seed,
        tol: cli.tol,
        max_iter: cli.max_iter,
        restarts: cli.restarts,
        bandwidth: cli.bandwidth,
        grid_points: cli.grid_points,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Simulate { config, paths, labels } => commands::simulate(config, paths, labels, &o),
        Command::Fit { config, data, out } => commands::fit_model(config, data, out, &o),
        Command::Decode { model, data, out } => commands::decode(model, data, out, &o),
        Command::Evaluate { truth, pred, out, svg } => commands::evaluate(truth, pred, out, svg.as_deref(), &o),
        Command::Smooth { data, out } => commands::smooth(data, out, &o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
