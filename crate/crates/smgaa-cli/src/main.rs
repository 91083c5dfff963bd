//! `smgaa`: operational surface of the short-utterance spoofing detector.
//!
//! Subcommands compose into the full pipeline:
//!   synth → degrade → featurize → train → eval
//! with `inspect` reporting model complexity. Every command is deterministic
//! under fixed (config, seed); batch commands tolerate per-file failures and
//! exit nonzero after reporting them.

mod commands;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "smgaa",
    about = "Short-utterance audio spoofing detection pipeline",
    version
)]
pub struct Cli {
    /// Key = value configuration file overlaid on defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for synthesis, degradation, and training.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for corpus-level commands (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output directory; required by every command that writes files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Cepstral front end; overrides the configured kind.
    #[arg(long, global = true, value_parser = ["mfcc", "lfcc", "cqcc"])]
    pub feature: Option<String>,

    /// Clip durations to process: 0.5, 1.0, 1.5, 2.0, or all.
    #[arg(long, global = true, default_value = "all")]
    pub duration: String,

    /// Transmission conditions to process: c0..c5 or all.
    #[arg(long, global = true, default_value = "all")]
    pub condition: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the separable synthetic WAV corpus with its manifest.
    Synth {
        /// Clips per class per duration.
        #[arg(long)]
        n_per_class: usize,
    },
    /// Extract cepstral features for every manifest clip.
    Featurize {
        /// Input WAV manifest.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Re-encode manifest clips under the selected transmission conditions.
    Degrade {
        /// Input WAV manifest.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train one model per selected duration from a feature manifest.
    Train {
        /// Input feature manifest (paths to .smgt tensors).
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score a feature manifest with trained checkpoints and write the
    /// per-condition report.
    Eval {
        /// Trained checkpoint; repeat for one row per duration.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Input feature manifest (paths to .smgt tensors).
        #[arg(long)]
        manifest: PathBuf,
        /// Timed forward passes for the real-time factor (0 skips timing).
        #[arg(long, default_value_t = 3)]
        rtf_trials: usize,
    },
    /// Print the parameter and FLOP budget per duration.
    Inspect,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("SMGAA_LOG", "info"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth { n_per_class } => commands::synth(&cli, *n_per_class),
        Command::Featurize { manifest } => commands::featurize(&cli, manifest),
        Command::Degrade { manifest } => commands::degrade(&cli, manifest),
        Command::Train { manifest } => commands::train(&cli, manifest),
        Command::Eval { checkpoint, manifest, rtf_trials } => {
            commands::eval(&cli, checkpoint, manifest, *rtf_trials)
        }
        Command::Inspect => commands::inspect(&cli),
    };

    match outcome {
        Ok(commands::Outcome::Clean) => ExitCode::SUCCESS,
        Ok(commands::Outcome::PartialFailures(n)) => {
            log::error!("{n} item(s) failed; outputs for the rest were written");
            ExitCode::FAILURE
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
