use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::output::Format;

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "normlens", version, about = "Normalization and attention-shift experiments")]
pub struct Cli {
    /// Write the report to this file instead of stdout.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,

    /// Report format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize token vectors from an embedding file.
    #[command(subcommand)]
    Norm(NormCommand),
    /// Attention-shift studies.
    #[command(subcommand)]
    Shift(ShiftCommand),
    /// Dot-product sign flips under standardization.
    Signflip(SignflipArgs),
    /// Entropy lower bound of UnitNorm attention.
    #[command(subcommand)]
    Elb(ElbCommand),
    /// UnitNorm gradient identities against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Embedding file with one token per row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub input_format: String,
    /// Read at most this many tokens.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NormArgs {
    /// batch_norm, layer_norm_theory, layer_norm_practice, rms_norm or unit_norm.
    #[arg(long, default_value = "unit_norm")]
    pub method: String,
    /// UnitNorm modulus.
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    pub k: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Fail on near-zero token norms instead of mapping them to zero.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum NormCommand {
    /// Apply a normalization to every token in a file.
    Apply(NormApplyArgs),
}

#[derive(Debug, Args)]
pub struct NormApplyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Token dimension.
    #[arg(long = "D")]
    pub dim: usize,
    /// Split the pool into sequences of this length; defaults to one sequence.
    #[arg(long = "L")]
    pub seq_len: Option<usize>,
    #[command(flatten)]
    pub norm: NormArgs,
}

#[derive(Debug, Subcommand)]
pub enum ShiftCommand {
    /// Compare attention before and after normalization over seeded sets.
    Study(ShiftStudyArgs),
}

#[derive(Debug, Args)]
pub struct ShiftStudyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Token dimension.
    #[arg(long = "D", default_value_t = 256)]
    pub dim: usize,
    /// Synthetic feature mean, scalar or one value per feature.
    /// Defaults to 6 sigma / D^(1/4).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub mu: Vec<f64>,
    /// Synthetic feature variance, scalar or one value per feature.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub sigma2: Vec<f64>,
    #[arg(long = "L", default_value_t = 64)]
    pub seq_len: usize,
    #[arg(long = "N", default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub sets: usize,
    /// Methods to compare; `unit_norm@K` selects a modulus per entry.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "unit_norm,rms_norm,layer_norm_practice,layer_norm_theory,batch_norm"
    )]
    pub methods: Vec<String>,
    /// Default UnitNorm modulus.
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    pub k: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Directory for one report per (method, set).
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct SignflipArgs {
    #[command(subcommand)]
    pub action: Option<SignflipCommand>,
    #[command(flatten)]
    pub estimate: EstimateArgs,
}

#[derive(Debug, Subcommand)]
pub enum SignflipCommand {
    /// Evaluate the flip conditions for a model.
    Check(ModelArgs),
    /// Monte Carlo flip probability (the default action).
    Estimate(EstimateArgs),
    /// Flip probability along the corollary boundary for several D.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long = "D", default_value_t = 256)]
    pub dim: usize,
    /// Mean of every coordinate of x; defaults to 6 sigma / D^(1/4).
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Mean of y; defaults to the mean of x.
    #[arg(long, allow_negative_numbers = true)]
    pub mu_y: Option<f64>,
    /// Variance of y; defaults to the variance of x.
    #[arg(long)]
    pub sigma2_y: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// `model` standardizes with the true parameters, `token` with
    /// per-token statistics.
    #[arg(long, default_value = "model")]
    pub mode: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "81,256,625,1296")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum ElbCommand {
    /// ELB sampled over a range of k.
    Curve(CurveArgs),
    /// Solve ELB(k) = log(L) / 2.
    K50(K50Args),
    /// k50 over a grid of (L, D).
    Landscape(LandscapeArgs),
    /// Closed form against a brute-force grid search.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long = "L", default_value_t = 1024)]
    pub seq_len: usize,
    #[arg(long = "D", default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub k_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub k_max: f64,
    #[arg(long, default_value_t = 401)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct K50Args {
    #[arg(long = "L", default_value_t = 1024)]
    pub seq_len: usize,
    #[arg(long = "D", default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[arg(long = "Ls", value_delimiter = ',', default_value = "64,128,256,512,1024")]
    pub seq_lens: Vec<usize>,
    #[arg(long = "Ds", value_delimiter = ',', default_value = "64,128,256,512,1024")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long = "Ls", value_delimiter = ',', default_value = "2,3,4")]
    pub seq_lens: Vec<usize>,
    #[arg(
        long = "ks",
        value_delimiter = ',',
        default_value = "-1,0,1,1.5",
        allow_negative_numbers = true
    )]
    pub ks: Vec<f64>,
    #[arg(long = "Ds", value_delimiter = ',', default_value = "1,4,64")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 2001)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    pub k: f64,
}
