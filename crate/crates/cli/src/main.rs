//! `nio`: synthesize data, train, evaluate, sweep, embed and plot.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "nio", version, about = "Latent neural integral operators on spatiotemporal signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run config; omitted keys take their defaults
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config)
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Cell {
    /// Window length in frames (default: first of `tp_values`)
    #[arg(long)]
    tp: Option<usize>,
    /// Seed of the cell (default: first of `seeds`)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic recording into the output directory
    Synth {
        #[command(flatten)]
        common: Common,
        /// Dataset seed (default: the config's synthetic seed)
        #[arg(long)]
        seed: Option<u64>,
        /// File name of the dataset container
        #[arg(long, default_value = "dataset.niot")]
        name: String,
    },
    /// Train one model and write a checkpoint plus a per-epoch loss CSV
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
    },
    /// Score a checkpoint on the test split; writes metrics.csv and metrics.json
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
        /// Checkpoint to read (default: the config's checkpoint in the output directory)
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Run every (tp, seed) cell; writes report.csv, aggregates.csv and report.json
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Compare raw windows and model latents: embedding.csv and knn.json
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
        /// Checkpoint to embed with; without one a model is trained first
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Neighbors for k-NN
        #[arg(long, default_value_t = nio_core::latent::KNN_NEIGHBORS)]
        k: usize,
        /// Monte Carlo splits for k-NN
        #[arg(long, default_value_t = nio_core::latent::KNN_SPLITS)]
        splits: usize,
        /// Test fraction of each k-NN split
        #[arg(long, default_value_t = nio_core::latent::KNN_TEST_FRAC)]
        test_frac: f64,
    },
    /// Render an embedding CSV (x,y,label,source) as an SVG scatter plot
    Plot {
        /// Embedding CSV to read
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        /// SVG file to write
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Only plot rows of this source (raw_data or model_latent)
        #[arg(long)]
        source: Option<String>,
    },
}

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<nio_core::Error> for Failure {
    fn from(e: nio_core::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = nio_core::exec::init_threads_from_env()
        .map_err(Failure::from)
        .and_then(|_| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("nio: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("nio: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth { common, seed, name } => commands::synth(&common, seed, &name),
        Command::Train { common, cell } => commands::train(&common, &cell),
        Command::Eval {
            common,
            cell,
            checkpoint,
        } => commands::eval(&common, &cell, checkpoint),
        Command::Sweep { common } => commands::sweep(&common),
        Command::Embed {
            common,
            cell,
            checkpoint,
            k,
            splits,
            test_frac,
        } => commands::embed(&common, &cell, checkpoint, k, splits, test_frac),
        Command::Plot { input, out, source } => svg::plot(&input, &out, source.as_deref()),
    }
}
