//! Command-line front end: dataset synthesis, training, evaluation,
//! ablation sweeps, graph export and plotting.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, UsageError};

#[derive(Debug, Parser)]
#[command(name = "stfgcn", version, about = "Graph-network modulation recognition from raw I/Q frames")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Validate a dataset file and its manifest and print a census.
    ConvertCheck(ConvertCheckArgs),
    /// Train a model and evaluate it on the held-out split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train one model per requested variant and tabulate test accuracy.
    Ablate(AblateArgs),
    /// Write the node and edge lists of one sample's graph.
    ExportGraph(ExportGraphArgs),
    /// Render columns of a CSV file as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Channel and SNR-grid preset: rml16-like, rml22-like or ideal.
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 20)]
    pub per_cell: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated scheme names; label k is the k-th entry.
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<String>>,
    /// Comma-separated SNRs in dB, or `lo:hi:step`.
    #[arg(long)]
    pub snrs: Option<String>,
    #[arg(long, default_value_t = 128)]
    pub gamma: usize,
    #[arg(long)]
    pub samples_per_symbol: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConvertCheckArgs {
    pub dataset: PathBuf,
}

/// Options shared by commands that train.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds the split, initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run every stage serially.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// `test` re-derives the held-out split; `all` scores every record.
    #[arg(long, default_value = "test")]
    pub subset: String,
    /// Split seed and ratios; must match the training run for `test`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub split: String,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Also write an accuracy-vs-SNR SVG.
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub adjacency: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub poolgat: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub inputs: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExportGraphArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// `initial`, or `poolK` for the output of the K-th PoolGAT layer.
    #[arg(long, default_value = "initial")]
    pub stage: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Edges with weight at or below this are dropped.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub x: String,
    /// One or more comma-separated column names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub y: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "")]
    pub title: String,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}
