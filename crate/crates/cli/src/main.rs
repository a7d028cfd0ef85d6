//! `mpool`: trajectory prediction pipeline driver.
//!
//! Subcommands: `preprocess` (CSV to scene samples), `synth` (generate a
//! synthetic dataset), `train`, `eval`, and `compare`. Exit codes: 0 on
//! success, 2 for usage/config/data errors, 3 for numerical failures.

mod commands;
mod kvconfig;
mod manifest;
mod settings;

use clap::{Parser, Subcommand};
use mpool_core::dataset::Units;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mpool", version, about = "Vehicle trajectory prediction with interchangeable neighbor-pooling strategies")]
struct Cli {
    /// Worker thread cap for evaluation (fallback: MP_THREADS env var).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a trajectory CSV and write train/val/test scene samples.
    Preprocess {
        /// Input CSV (canonical or NGSIM column names).
        #[arg(long)]
        input: PathBuf,
        /// Distance units of the input file.
        #[arg(long, value_parser = ["feet", "meters"])]
        units: String,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional key = value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Split shuffle seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic highway dataset with known labels.
    Synth {
        /// Mainline lane count (the on-ramp is lanes + 1).
        #[arg(long, default_value_t = 4)]
        lanes: u32,
        #[arg(long, default_value_t = 32)]
        vehicles: usize,
        /// Maneuver mix as keep:left:right:merge weights.
        #[arg(long, default_value = "0.4:0.2:0.2:0.2")]
        mix: String,
        /// Acceleration mix as const:speed:slow weights.
        #[arg(long, default_value = "0.5:0.25:0.25")]
        accel_mix: String,
        /// Gaussian position noise sigma in meters.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Track length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Maneuver onset lead before the anchor, in seconds (0 = onset
        /// after the anchor; positive makes labels separable from history).
        #[arg(long, default_value_t = 0.0)]
        lead: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model on a preprocessed dataset directory.
    Train {
        /// Dataset directory (train.bin / val.bin).
        #[arg(long)]
        data: PathBuf,
        /// Pooling strategy: slstm | csp | sgan | polar | polar_vr.
        #[arg(long)]
        pooling: String,
        /// Enable the maneuver recognition module.
        #[arg(long, value_parser = ["on", "off"], default_value = "on")]
        maneuvers: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the report as JSON here as well.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare several checkpoints side by side per maneuver class.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("MP_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn run(cli: Cli) -> mpool_core::Result<()> {
    let threads = thread_count(cli.threads);
    match cli.command {
        Command::Preprocess {
            input,
            units,
            out,
            config,
            seed,
        } => commands::cmd_preprocess(&input, Units::from_key(&units)?, &out, &config, seed),
        Command::Synth {
            lanes,
            vehicles,
            mix,
            accel_mix,
            noise,
            duration,
            lead,
            seed,
            out,
            config,
        } => commands::cmd_synth(
            lanes, vehicles, &mix, &accel_mix, noise, duration, lead, seed, &out, &config,
        ),
        Command::Train {
            data,
            pooling,
            maneuvers,
            config,
            out,
            seed,
        } => commands::cmd_train(&data, &pooling, maneuvers == "on", &config, &out, seed),
        Command::Eval { ckpt, data, report } => commands::cmd_eval(&ckpt, &data, &report, threads),
        Command::Compare { ckpt, data, report } => {
            commands::cmd_compare(&ckpt, &data, &report, threads)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
