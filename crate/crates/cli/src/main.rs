#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lvcal::ArchitectureMode;

use crate::commands::VolInput;
use crate::config::{Overrides, RunConfig};

/// Neural put-surface calibration with Dupire local volatility extraction.
#[derive(Parser, Debug)]
#[command(name = "lvcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags below take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Existing files in it are never overwritten.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Master seed for training, chain noise and Monte Carlo.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<ArchitectureMode>,
    /// Calendar penalty weight.
    #[arg(long, global = true)]
    lambda1: Option<f64>,
    /// Butterfly penalty weight.
    #[arg(long, global = true)]
    lambda2: Option<f64>,
    /// Dupire band penalty weight.
    #[arg(long, global = true)]
    lambda3: Option<f64>,
    /// Lower end of the admissible half-variance band.
    #[arg(long, global = true)]
    band_low: Option<f64>,
    /// Upper end of the admissible half-variance band.
    #[arg(long, global = true)]
    band_high: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Epochs trained with all penalties off before they are switched on.
    #[arg(long, global = true)]
    warmup: Option<usize>,
    /// Side of an auxiliary penalty grid over the unit square (0 = off).
    #[arg(long, global = true)]
    aux_grid: Option<usize>,
    /// Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Monte Carlo time steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
}

fn parse_mode(s: &str) -> Result<ArchitectureMode, String> {
    s.parse().map_err(|e: lvcal::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize training and test chains from the configured local volatility.
    Generate,
    /// Fit a network to a quote file.
    Calibrate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Start from this model instead of a fresh initialization.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Count arbitrage violations and report fit errors and surfaces.
    Audit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Extract the local volatility grid of a trained model.
    Localvol {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Reprice quotes by Monte Carlo under a local volatility.
    Backtest {
        /// `truth`, a model `.json`, or a `T,K,value,flag` grid CSV.
        #[arg(long)]
        vol_source: String,
        /// Quotes to reprice.
        #[arg(long)]
        train: PathBuf,
    },
    /// Black–Scholes implied volatilities of a quote file.
    ImpliedVol {
        #[arg(long, alias = "train")]
        quotes: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<lvcal::Error>(),
            Some(lvcal::Error::Diverged { .. } | lvcal::Error::NoSolution(_) | lvcal::Error::Lattice(_))
        )
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = cli.common;
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: common.seed,
        mode: common.mode,
        lambda: [common.lambda1, common.lambda2, common.lambda3],
        band: [common.band_low, common.band_high],
        epochs: common.epochs,
        learning_rate: common.learning_rate,
        warmup: common.warmup,
        aux_grid: common.aux_grid,
        paths: common.paths,
        steps: common.steps,
    });
    cfg.validate()?;
    let out = &common.out;
    match cli.command {
        Command::Generate => commands::generate(&cfg, out),
        Command::Calibrate { train, test, init_checkpoint } => {
            commands::calibrate(&cfg, &train, test.as_deref(), init_checkpoint.as_deref(), out)
        }
        Command::Audit { checkpoint, train, test } => {
            commands::audit(&cfg, &checkpoint, train.as_deref(), test.as_deref(), out)
        }
        Command::Localvol { checkpoint } => commands::localvol(&cfg, &checkpoint, out),
        Command::Backtest { vol_source, train } => commands::backtest(&cfg, &VolInput::parse(&vol_source), &train, out),
        Command::ImpliedVol { quotes } => commands::implied_vols(&cfg, &quotes, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
