//! `focus`: train, evaluate, and poke at adaptive-filter sequence models.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use focus_core::FocusError;

mod commands;
mod config;

/// Shared run configuration: a key=value file, raw overrides, and sugar
/// flags for the knobs that change most often. Precedence: named flag >
/// --set > file > default.
#[derive(Args, Debug)]
pub struct CfgArgs {
    /// Key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. --set lr=3e-4 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// RNG seed (falls back to $FOCUS_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Task: recall or char
    #[arg(long)]
    pub task: Option<String>,
    /// Sequence length
    #[arg(long = "L")]
    pub l: Option<usize>,
    /// Model width
    #[arg(long)]
    pub d: Option<usize>,
    /// Number of layers
    #[arg(long)]
    pub n_layers: Option<usize>,
    /// Peak learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Batch size
    #[arg(long)]
    pub batch: Option<usize>,
    /// Epoch cap
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Recall samples to generate
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Replace the hypernetwork with static learned coefficients
    #[arg(long)]
    pub ablation: bool,
    /// Byte corpus for the char task
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Parser)]
#[command(name = "focus", about = "Adaptive IIR filtering sequence models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoint, log, and metrics
    Train {
        #[command(flatten)]
        cfg: CfgArgs,
        /// Output directory for artifacts
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Use a pre-generated sample cache instead of generating data
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on held-out data
    Eval {
        #[command(flatten)]
        cfg: CfgArgs,
        /// Checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use a pre-generated sample cache instead of generating data
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Emit per-bin filter magnitude responses for one input sequence
    InspectFilters {
        /// Checkpoint holding the model and its config
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample cache to draw the input sequence from
        #[arg(long)]
        data: Option<PathBuf>,
        /// Which sample to inspect
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Which layer's filters to inspect
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Output directory for filters.csv
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Seed for the generated sample when no cache is given
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time the forward pass against a full-attention reference
    Bench {
        /// Sequence lengths to time
        #[arg(long, value_delimiter = ',', default_values_t = [1024, 2048, 4096, 8192, 16384])]
        ls: Vec<usize>,
        /// Model width
        #[arg(long, default_value_t = 32)]
        d: usize,
        /// Timing repetitions (fastest wins)
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Output directory for bench.csv
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Generate a recall sample cache
    GenData {
        #[command(flatten)]
        cfg: CfgArgs,
        /// Output directory for data.bin
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> focus_core::Result<()> {
    match cli.cmd {
        Cmd::Train { cfg, out, data } => commands::cmd_train(&cfg, &out, data.as_deref()),
        Cmd::Eval { cfg, checkpoint, data } => commands::cmd_eval(&cfg, &checkpoint, data.as_deref()),
        Cmd::InspectFilters { checkpoint, data, sample, layer, out, seed } => {
            commands::cmd_inspect(&checkpoint, data.as_deref(), sample, layer, &out, seed)
        }
        Cmd::Bench { ls, d, reps, out } => commands::cmd_bench(&ls, d, reps, &out),
        Cmd::GenData { cfg, out } => commands::cmd_gen_data(&cfg, &out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            FocusError::Config(_) => 2,
            FocusError::Tensor(_) | FocusError::Format(_) | FocusError::Io(_) => 3,
            FocusError::Diverged { .. } => 4,
        };
        std::process::exit(code);
    }
}
