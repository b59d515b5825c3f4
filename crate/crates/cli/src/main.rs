//! `segattn`: data generation, training, evaluation, ablations, profiling
//! and gradient checking.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 usage or config error,
//! 3 numeric failure.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "segattn", version, about = "Multi-scale attention segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Pooling,
    Branches,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (PPM images, PGM masks, manifest).
    GenData {
        #[arg(long)]
        out: std::path::PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value = "32x32")]
        size: String,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes checkpoint.bin, best.bin and report.csv.
    Train {
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        /// Dataset manifest (overrides `data` in the config).
        #[arg(long)]
        data: Option<std::path::PathBuf>,
        #[arg(long)]
        out: std::path::PathBuf,
        /// Palette file for color masks.
        #[arg(long)]
        palette: Option<std::path::PathBuf>,
        /// Overrides `epochs` from the config.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint; prints per-class IoU and writes metrics.csv.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<std::path::PathBuf>,
        #[arg(long)]
        data: std::path::PathBuf,
        #[arg(long, default_value = ".")]
        out: std::path::PathBuf,
        #[arg(long)]
        palette: Option<std::path::PathBuf>,
        /// Score the ground truth against itself instead of a model.
        #[arg(long)]
        oracle: bool,
        /// Class count for `--oracle` without a checkpoint.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
    /// Train one model per setting of an architecture axis; writes ablation.csv.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        #[arg(long)]
        data: Option<std::path::PathBuf>,
        #[arg(long, default_value = ".")]
        out: std::path::PathBuf,
        #[arg(long)]
        palette: Option<std::path::PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Run the variants concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Print `input_size,flops,params,ms,fps` for a config.
    Profile {
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        #[arg(long, default_value = "32x32")]
        input_size: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
    },
    /// Finite-difference check of every parameter gradient of a tiny model.
    Gradcheck {
        /// Model config; defaults to a minimal model using every layer type.
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "8x8")]
        size: String,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::GenData {
            out,
            n,
            size,
            classes,
            seed,
        } => commands::gen_data(&out, n, &size, classes, seed),
        Command::Train {
            config,
            data,
            out,
            palette,
            epochs,
        } => commands::train(config.as_deref(), data.as_deref(), &out, palette.as_deref(), epochs),
        Command::Eval {
            checkpoint,
            data,
            out,
            palette,
            oracle,
            classes,
            batch,
        } => commands::eval(
            checkpoint.as_deref(),
            &data,
            &out,
            palette.as_deref(),
            oracle,
            classes,
            batch,
        ),
        Command::Ablate {
            axis,
            config,
            data,
            out,
            palette,
            epochs,
            parallel,
        } => commands::ablate(
            axis,
            config.as_deref(),
            data.as_deref(),
            &out,
            palette.as_deref(),
            epochs,
            parallel,
        ),
        Command::Profile {
            config,
            input_size,
            batch,
            warmup,
            iters,
        } => commands::profile(config.as_deref(), &input_size, batch, warmup, iters),
        Command::Gradcheck {
            config,
            tol,
            step,
            seed,
            size,
            batch,
            inject_fault,
        } => commands::gradcheck(config.as_deref(), tol, step, seed, &size, batch, inject_fault),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
