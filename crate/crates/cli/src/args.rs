use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dualspace::baselines::BaselineKind;
use dualspace::dataset::Modality;
use dualspace::trainer::Ablation;

#[derive(Debug, Parser)]
#[command(
    name = "dualspace",
    version,
    about = "Dual-subspace audio-visual cross-modal retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset with a stratified split.
    Synth(SynthArgs),
    /// Train the four branches and fit the retrieval head.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Fit and evaluate a CCA, Cluster-CCA or random baseline.
    Baseline(BaselineArgs),
    /// Compare analytic and finite-difference gradients on default-width nets.
    Gradcheck(GradcheckArgs),
    /// Write retrieval embeddings of one modality.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 128)]
    pub d_audio: usize,
    #[arg(long, default_value_t = 1024)]
    pub d_visual: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.3)]
    pub cross_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each class assigned to the training split.
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    /// Seed of the split shuffle; defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory; overrides `data` in --config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; overrides `out` in --config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run config: training fields plus `data` and `out`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tie the hidden layers of the explicit and implicit branches.
    #[arg(long)]
    pub share_ex_im: bool,
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    /// Covariance ridge of the correlation loss and the fusion layer.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Comma-separated hidden widths of the audio branches.
    #[arg(long, value_delimiter = ',')]
    pub audio_hidden: Option<Vec<usize>>,
    /// Comma-separated hidden widths of the visual branches.
    #[arg(long, value_delimiter = ',')]
    pub visual_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub fusion_dim: Option<usize>,
    /// Skip per-feature standardization of the inputs.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rows to evaluate; `test` falls back to all rows when the dataset has no split.
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    pub split: Subset,
    /// Comma-separated precision scopes.
    #[arg(long, value_delimiter = ',')]
    pub scopes: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_baseline)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Projection width; defaults to the number of classes.
    #[arg(long)]
    pub k_out: Option<usize>,
    /// A number, or `auto` to select on a holdout of the training split.
    #[arg(long, default_value = "auto", value_parser = parse_ridge)]
    pub ridge: RidgeArg,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, value_delimiter = ',')]
    pub scopes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgeArg {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Step sizes to try; the first one decides the exit code.
    #[arg(long = "epsilon", default_values_t = [1e-5])]
    pub epsilons: Vec<f64>,
    /// Also write the full per-tensor reports here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_modality)]
    pub modality: Modality,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub split: Subset,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: dualspace::Error| e.to_string())
}

fn parse_baseline(s: &str) -> Result<BaselineKind, String> {
    s.parse().map_err(|e: dualspace::Error| e.to_string())
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|e: dualspace::Error| e.to_string())
}

fn parse_ridge(s: &str) -> Result<RidgeArg, String> {
    if s == "auto" {
        return Ok(RidgeArg::Auto);
    }
    match s.parse::<f64>() {
        Ok(r) if r.is_finite() && r >= 0.0 => Ok(RidgeArg::Fixed(r)),
        _ => Err(format!("expected `auto` or a finite ridge >= 0, got {s:?}")),
    }
}
