use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hgpu::cli::{self, CliError};
use hgpu::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "hgpu",
    about = "Zero-shot video object segmentation via hierarchical graph message passing, desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/val dataset described by the config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes checkpoint, loss curve, and resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment sequences with a trained checkpoint.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset split directory (manifest.txt) or single sequence directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against ground truth (CSV + JSON report).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification of every layer type and the
    /// end-to-end model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the report file (stdout only when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Test hook: corrupt the named op's backward (negative control).
        #[arg(long)]
        corrupt: Option<String>,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))
}

fn run() -> Result<(), CliError> {
    cli::init_thread_pool();
    match Cli::parse().command {
        Command::GenData { config, seed } => {
            let mut cfg = load_config(&config)?;
            cli::apply_overrides(&mut cfg, seed, None);
            cli::cmd_gen_data(&cfg)
        }
        Command::Train { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            cli::apply_overrides(&mut cfg, seed, out);
            cli::cmd_train(&cfg).map(|_| ())
        }
        Command::Infer {
            config,
            checkpoint,
            data,
            out,
        } => {
            let cfg = load_config(&config)?;
            cli::cmd_infer(&cfg, &checkpoint, &data, &out)
        }
        Command::Eval { pred, gt, out } => cli::cmd_eval(&pred, &gt, &out).map(|_| ()),
        Command::Gradcheck { seed, out, corrupt } => {
            cli::cmd_gradcheck(seed, corrupt, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hgpu: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
