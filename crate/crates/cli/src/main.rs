//! `rangex`: generate data, train, fit range experts and explain queries.

mod commands;
mod manifest;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::spec::MethodArgs;

#[derive(Parser, Debug)]
#[command(name = "rangex", version, about = "Range-expert explanations for regression models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset CSV.
    Gen(GenArgs),
    /// Train an MLP on a dataset CSV.
    Train(TrainArgs),
    /// Fit a range-expert bank to a model's predictions.
    FitExperts(FitExpertsArgs),
    /// Fit surrogate heads (needed for LRP through experts).
    FitSurrogate(FitSurrogateArgs),
    /// Explain a query for selected samples.
    Explain(ExplainArgs),
    /// Write per-sample attribution matrices for later queries.
    Precompute(PrecomputeArgs),
    /// Compare naive and query explanations by ABC and run the subtraction sweep.
    Evaluate(EvaluateArgs),
    /// Summarize an evaluate output directory.
    Report(ReportArgs),
    /// Replay the command recorded in a manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest` or `<out>/manifest.txt`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Target column; defaults to the last column.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
#[value(rename_all = "snake_case")]
pub enum GenKind {
    Friedman,
    RangeStrategy,
    Wind,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    pub kind: GenKind,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Experts (range_strategy).
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Ground-truth side file; defaults to `<out stem>.truth.csv`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 12.0)]
    pub rated_speed: f64,
    #[arg(long, default_value_t = 2000.0)]
    pub rated_power: f64,
    #[arg(long, default_value_t = 15.0)]
    pub max_misalignment: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Hidden widths, comma separated.
    #[arg(long, default_value = "64,32")]
    pub hidden: String,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.003)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerName,
}

#[derive(Args, Debug)]
pub struct FitExpertsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub experts: usize,
    /// Custom breakpoints relative to the smallest prediction, starting at 0.
    #[arg(long)]
    pub breakpoints: Option<String>,
    #[arg(long)]
    pub bounded_top: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
#[value(rename_all = "snake_case")]
pub enum InitName {
    CopyTop,
    Pca,
    Zeros,
}

#[derive(Args, Debug)]
pub struct FitSurrogateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, value_enum, default_value = "pca")]
    pub init: InitName,
    /// Layer whose input the heads read; defaults to the output layer.
    #[arg(long)]
    pub attach: Option<usize>,
    #[arg(long)]
    pub dropout: bool,
    #[arg(long)]
    pub freeze_bias: bool,
    /// Samples used for the Shapley agreement probe.
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub bank: PathBuf,
    /// `step:ref=<f>`, `sigmoid:center=<f>,temp=<f>` or `weights:<f>,...`
    #[arg(long)]
    pub query: String,
    /// `all`, or indices and ranges such as `0,4,10..20`.
    #[arg(long, default_value = "0")]
    pub rows: String,
    /// Answer from a precompute directory instead of the model.
    #[arg(long)]
    pub from_basis: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_basis")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_basis")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[command(flatten)]
    pub method: MethodArgs,
    /// `zero`, `mean`, `fixed:<f>,...` or `conditional:ref=<f>[,delta=..][,draws=..][,seed=..]`
    #[arg(long, default_value = "mean")]
    pub baseline: String,
    /// basis_sum | direct
    #[arg(long, default_value = "direct")]
    pub mode: String,
}

#[derive(Args, Debug)]
pub struct PrecomputeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub rows: String,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, default_value = "mean")]
    pub baseline: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoredName {
    Model,
    Query,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    /// Defaults to a step at the top breakpoint.
    #[arg(long)]
    pub query: Option<String>,
    /// `<lo>,<hi>` on the prediction; defaults to the top expert's range.
    #[arg(long)]
    pub slice: Option<String>,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, default_value = "mean")]
    pub naive_baseline: String,
    /// Defaults to conditional draws at the snapped step reference.
    #[arg(long)]
    pub query_baseline: Option<String>,
    /// Occlusion reference; defaults like `--query-baseline`.
    #[arg(long)]
    pub eval_baseline: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value = "direct")]
    pub mode: String,
    #[arg(long, value_enum, default_value = "model")]
    pub scored: ScoredName,
    /// Also render the subtraction curves as SVG.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory of `evaluate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub svg: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match commands::run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
