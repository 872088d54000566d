//! `freemark`: train a host, derive and escrow watermark keys, attack, verify,
//! and run the experiment suite.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success; for `verify`, the suspect is a copy |
//! | 1 | `verify`: the suspect is not a copy |
//! | 2 | bad arguments or configuration |
//! | 3 | training diverged |
//! | 4 | key derivation failed (solver did not converge, or degenerate input) |
//! | 5 | no scaling factor satisfied the offset constraint |
//! | 6 | suspect architecture does not match the key |
//! | 7 | watermark does not match the escrowed commitment |
//! | 8 | experiment finished with failed cells |
//! | 9 | I/O, decoding or stored-data integrity error |

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use freemark_core::Error;

#[derive(Debug, Parser)]
#[command(name = "freemark", version, about = "Non-invasive white-box watermarking for small MLPs")]
pub struct Cli {
    /// TOML configuration file (`--plan` is accepted as an alias).
    #[arg(long, global = true, visible_alias = "plan", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set keygen.margin=2.0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Seed for the command's own randomness (training, keygen, fine-tune,
    /// forging, or the experiment master seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print machine-readable JSON on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Key store root.
    #[arg(long, global = true, env = "FREEMARK_STORE", default_value = "freemark-store")]
    pub store: PathBuf,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the host model described by the configuration.
    Train {
        /// Checkpoint path; `<out>.trigger` and `<out>.json` are written alongside.
        #[arg(long, default_value = "model.fmck")]
        out: PathBuf,
    },
    /// Derive secret keys for a watermark and register them in the key store.
    Keygen {
        #[arg(long)]
        model: PathBuf,
        /// Trigger set file (default: `<model>.trigger`).
        #[arg(long)]
        trigger: Option<PathBuf>,
        /// Hidden-layer index (0-based).
        #[arg(long)]
        layer: Option<usize>,
        /// Existing watermark hex file; a random one is drawn otherwise.
        #[arg(long)]
        watermark: Option<PathBuf>,
        /// Length of a randomly drawn watermark.
        #[arg(long)]
        bits: Option<usize>,
        /// Where the owner's watermark is written (default: `<model>.watermark`).
        #[arg(long)]
        watermark_out: Option<PathBuf>,
        /// Key record copy (default: `<model>.key`).
        #[arg(long)]
        key_out: Option<PathBuf>,
        #[arg(long, default_value = "owner")]
        owner: String,
    },
    /// Extract the watermark bits a suspect model carries under a registered key.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        key_id: String,
        /// Also write the result as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide whether a suspect model is a copy. Exit 0 = copy, 1 = not a copy.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        key_id: String,
        /// The owner's watermark hex file.
        #[arg(long)]
        watermark: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Watermark-removal and false-claim attacks.
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Run the security, integrity and robustness experiments.
    Experiment {
        /// Report directory.
        #[arg(long, default_value = "freemark-report")]
        out: PathBuf,
        /// Disable the data-parallel cells.
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum AttackCommand {
    /// Zero every weight with magnitude below eta.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eta: f64,
        /// Restrict to these dense-layer indices (comma separated).
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune on the configured dataset with some layers frozen.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Frozen dense-layer indices (comma separated).
        #[arg(long, value_delimiter = ',')]
        freeze: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score random key pairs against a model and summarize their BERs.
    Forge {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        key_id: String,
        #[arg(long)]
        watermark: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Extract with this alpha instead of the genuine one.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0} experiment cell(s) failed")]
    ExperimentFailed(usize),
    #[error("{0}")]
    Integrity(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::ExperimentFailed(_) => 8,
            CliError::Integrity(_) => 9,
            CliError::Core(e) => match e {
                Error::TrainingDiverged { .. } => 3,
                Error::NonConvergence { .. } | Error::ZeroAuxiliary | Error::DegenerateActivation => 4,
                Error::AlphaSearchExhausted { .. } => 5,
                Error::IncompatibleArchitecture(_) => 6,
                Error::CommitmentMismatch => 7,
                Error::Io(_)
                | Error::Json(_)
                | Error::Decode(_)
                | Error::Integrity(_)
                | Error::NotFound(_)
                | Error::TriggerMismatch => 9,
                _ => 2,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
