use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "costdet",
    version,
    about = "Cost-sensitive two-stage lesion detection experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Train one model per seed with the given costs.
    Train(TrainArgs),
    /// Evaluate checkpoints on a dataset split and emit a metric table.
    Evaluate(EvaluateArgs),
    /// Sweep the detection threshold for one checkpoint.
    Sweep(SweepArgs),
    /// Compare a cost-trained checkpoint against a threshold-adjusted baseline.
    Compare(CompareArgs),
    /// Run a multi-seed, multi-regime experiment from a config file.
    Experiment(ExperimentArgs),
    /// Print the metric tables of a finished experiment directory.
    Report(ReportArgs),
    /// Write a ground-truth oracle checkpoint (reports every lesion with probability 1).
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON generator config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CostArgs {
    #[arg(long)]
    pub alpha_lesion: Option<f64>,
    #[arg(long)]
    pub beta_lesion: Option<f64>,
    #[arg(long)]
    pub alpha_slice: Option<f64>,
    #[arg(long)]
    pub beta_slice: Option<f64>,
    /// Add the slice-level cost-sensitive loss.
    #[arg(long)]
    pub use_slice_loss: bool,
}

#[derive(Debug, Args, Clone)]
pub struct EvalArgs {
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    #[arg(long, default_value_t = 6)]
    pub max_det: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Slices counted in the lesion FP-per-slice denominator.
    #[arg(long, value_enum, default_value_t = FpArg::All)]
    pub fp_denominator: FpArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FpArg {
    All,
    PositiveOnly,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training seed (repeatable); one model per seed.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub cost: CostArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub augment: bool,
    /// Save a checkpoint every N epochs in addition to the final one.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    #[arg(long, default_value_t = 6)]
    pub max_det: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file (repeatable); one table column each.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Threshold grid as `start:stop:step` (inclusive).
    #[arg(long, default_value = "0.1:0.9:0.1")]
    pub grid: String,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model whose threshold is swept.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Cost-trained model evaluated at `--threshold`.
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long, default_value = "0.05:0.95:0.05")]
    pub grid: String,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config; defaults are used for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the config's seed list (repeatable).
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `experiment`.
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub out: PathBuf,
}
