//! `grainsparse` command-line front end.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for data errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grainsparse::GrainShape;

mod commands;
mod config;

/// Usage or configuration problem (exit status 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "grainsparse",
    version,
    about = "Granularity-aware pruning, sparse encoding and dataflow simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model manifest; overrides the config's `model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Granularities (comma separated: fine, vector, kernel, filter).
    #[arg(long, value_delimiter = ',')]
    pub granularity: Vec<GrainShape>,
    /// Prune every layer once to this weight density instead of using saved masks.
    #[arg(long)]
    pub density: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Arch {
    Toy,
    Alexnet,
    Vgg16,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic model (manifest plus weight blobs).
    Synth {
        #[arg(long, value_enum)]
        arch: Arch,
        /// Divide VGG-16 channel widths by this factor.
        #[arg(long, default_value_t = 1)]
        width_div: usize,
        /// VGG-16 input size (multiple of 16).
        #[arg(long, default_value_t = 224)]
        input: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Iterative pruning per granularity; writes masks and density/score curves.
    Prune(Common),
    /// Per-layer sensitivity scan per granularity.
    Sensitivity(Common),
    /// Write sparse encodings of every layer.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Use a k-means codebook with this many bits per layer instead of linear codes.
        #[arg(long)]
        codebook_bits: Option<u8>,
    },
    /// Storage ratio of the encoded model against dense 8-bit weights.
    StorageReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Output memory references of the sparse dataflow.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Activation densities: one for all layers or one per layer.
        #[arg(long, value_delimiter = ',')]
        act_density: Vec<f64>,
        /// Activation manifest; overrides generated activations.
        #[arg(long)]
        activations: Option<PathBuf>,
    },
    /// FLOPs of the pruned model (dense if no masks are given).
    Flops {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Density, FLOPs, storage and memory-reference table per granularity.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<granularity>/masks.json` (default: the output directory).
        #[arg(long)]
        masks_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        act_density: Vec<f64>,
    },
    /// Density and storage ratio at a target score on a pruning curve.
    Interp {
        #[arg(long)]
        curve: PathBuf,
        /// Target score (accuracy) to interpolate at.
        #[arg(long, allow_negative_numbers = true)]
        accuracy: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            arch,
            width_div,
            input,
            seed,
            out,
        } => commands::synth(arch, width_div, input, seed, &out),
        Command::Prune(common) => commands::prune(&common),
        Command::Sensitivity(common) => commands::sensitivity(&common),
        Command::Encode {
            common,
            masks,
            codebook_bits,
        } => commands::encode(&common, masks.as_deref(), codebook_bits),
        Command::StorageReport { common, masks } => {
            commands::storage_report(&common, masks.as_deref())
        }
        Command::Simulate {
            common,
            masks,
            act_density,
            activations,
        } => commands::simulate(&common, masks.as_deref(), &act_density, activations),
        Command::Flops { common, masks } => commands::flops(&common, masks.as_deref()),
        Command::Report {
            common,
            masks_dir,
            act_density,
        } => commands::report(&common, masks_dir, &act_density),
        Command::Interp {
            curve,
            accuracy,
            out,
        } => commands::interp(&curve, accuracy, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
