//! `ssg`: scaled spatial guidance, spectral priors and the multi-scale codec
//! from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes: 0 success, 1 usage or config error, 2 domain or shape
/// error, 3 IO or format error.
#[derive(Parser, Debug)]
#[command(name = "ssg", version, about = "Scaled spatial guidance and spectral priors for next-scale generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a prior at a larger size from previous-scale logits
    Dse(DseArgs),
    /// Apply guidance to logits, or verify the closed form numerically
    Guide(GuideArgs),
    /// Encode features to multi-scale token maps, or decode them back
    #[command(subcommand)]
    Codec(CodecCommand),
    /// Generate every scale with the oracle predictor and write report.csv
    Run(RunArgs),
    /// Teacher-force the first scales, generate the rest, write report.csv
    Complete(RunArgs),
    /// Run the prior/decay ablation grid and write ablation.csv
    Ablation(RunArgs),
    /// Radial log-amplitude difference between two tensors
    Analyze(AnalyzeArgs),
    /// Time guidance against a dense predictor step
    Bench(BenchArgs),
    /// Synthesize a reference feature tensor
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
pub struct DseArgs {
    /// Previous-scale logits tensor
    #[arg(long = "in", value_name = "TENSOR")]
    pub input: PathBuf,
    /// Output tensor
    #[arg(long, value_name = "TENSOR")]
    pub out: PathBuf,
    /// Target size
    #[arg(long, value_name = "HxW")]
    pub target: String,
    /// nearest, linear, dse or dse_zero
    #[arg(long, default_value = "dse")]
    pub mode: String,
    /// Interpolation inside the spectral modes: nearest or linear
    #[arg(long, default_value = "linear")]
    pub interp: String,
    /// Copy low-band coefficients without the amplitude gain
    #[arg(long)]
    pub raw_copy: bool,
}

#[derive(Args, Debug)]
pub struct GuideArgs {
    /// Current-scale logits tensor
    #[arg(long, value_name = "TENSOR", required_unless_present = "verify")]
    pub logits: Option<PathBuf>,
    /// Prior tensor of the same shape
    #[arg(long, value_name = "TENSOR", required_unless_present = "verify")]
    pub prior: Option<PathBuf>,
    /// Guidance scale
    #[arg(long, required_unless_present = "verify", allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Output tensor
    #[arg(long, value_name = "TENSOR", required_unless_present = "verify")]
    pub out: Option<PathBuf>,
    /// Check the closed-form maximizer on random instances instead
    #[arg(long, conflicts_with_all = ["logits", "prior", "beta", "out"])]
    pub verify: bool,
    /// Instance dimension for --verify
    #[arg(long, default_value_t = 32, requires = "verify")]
    pub dim: usize,
    /// Number of instances for --verify
    #[arg(long, default_value_t = 100, requires = "verify")]
    pub trials: usize,
    /// Seed for --verify
    #[arg(long, default_value_t = 0, requires = "verify")]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum CodecCommand {
    /// Quantize a feature tensor into one token map per scale
    Encode(EncodeArgs),
    /// Rebuild features from token maps
    Decode(DecodeArgs),
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Feature tensor, H x W x C
    #[arg(long, value_name = "TENSOR")]
    pub feature: PathBuf,
    /// Comma-separated scales, coarse to fine
    #[arg(long, default_value = "1x1,2x2,4x4,8x8")]
    pub ladder: String,
    /// Codebook tensor (V x 1 x C) or gen:V,C,seed; C may be the letter C
    #[arg(long, default_value = "gen:32,C,0")]
    pub codebook: String,
    /// Upsampling operator: nearest or linear
    #[arg(long, default_value = "linear")]
    pub upsample: String,
    /// Output directory for tokens_K.nsgt and codebook.nsgt
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Directory written by `codec encode`
    #[arg(long, value_name = "DIR")]
    pub tokens: PathBuf,
    /// Comma-separated scales, coarse to fine
    #[arg(long, default_value = "1x1,2x2,4x4,8x8")]
    pub ladder: String,
    /// Codebook tensor or gen:V,C,seed [default: DIR/codebook.nsgt]
    #[arg(long)]
    pub codebook: Option<String>,
    /// Upsampling operator: nearest or linear
    #[arg(long, default_value = "linear")]
    pub upsample: String,
    /// Output feature tensor
    #[arg(long, value_name = "TENSOR")]
    pub out: PathBuf,
}

/// Flags mirror the config keys; a flag overrides the same key in --config.
#[derive(Args, Debug)]
pub struct RunArgs {
    /// key=value config file
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Reference feature tensor [key: reference]
    #[arg(long, value_name = "TENSOR")]
    pub reference: Option<String>,
    /// Scale ladder, e.g. 1x1,2x2,4x4,8x8 [key: ladder]
    #[arg(long)]
    pub ladder: Option<String>,
    /// Codebook tensor or gen:V,C,seed [key: codebook, default gen:32,C,0]
    #[arg(long)]
    pub codebook: Option<String>,
    /// Codec upsampling: nearest or linear [key: upsample]
    #[arg(long)]
    pub upsample: Option<String>,
    /// Initial guidance scale [key: beta0, default 1.0]
    #[arg(long, allow_negative_numbers = true)]
    pub beta0: Option<String>,
    /// linear or constant [key: decay]
    #[arg(long)]
    pub decay: Option<String>,
    /// nearest, linear, dse or dse_zero [key: prior, default dse]
    #[arg(long)]
    pub prior: Option<String>,
    /// Interpolation inside spectral priors [key: interp]
    #[arg(long)]
    pub interp: Option<String>,
    /// true to drop the low-band amplitude gain [key: raw_copy]
    #[arg(long)]
    pub raw_copy: Option<String>,
    /// Logits the next prior is built from: raw or guided [key: prior_source]
    #[arg(long)]
    pub prior_source: Option<String>,
    /// false for the unguided baseline [key: ssg]
    #[arg(long)]
    pub ssg: Option<String>,
    /// Sampling temperature [key: temperature]
    #[arg(long)]
    pub temperature: Option<String>,
    /// true for argmax decoding [key: argmax]
    #[arg(long)]
    pub argmax: Option<String>,
    /// Oracle redundancy weight [key: lambda, default 0.5]
    #[arg(long)]
    pub lambda: Option<String>,
    /// Oracle noise level [key: sigma, default 1.0]
    #[arg(long)]
    pub sigma: Option<String>,
    /// Oracle one-hot logit height [key: logit_scale, default 8.0]
    #[arg(long)]
    pub logit_scale: Option<String>,
    /// Oracle noise seed [key: oracle_seed]
    #[arg(long)]
    pub oracle_seed: Option<String>,
    /// Seeds, e.g. 0..49 or 1,4,9 [key: seeds]
    #[arg(long)]
    pub seeds: Option<String>,
    /// Teacher-forced scales for complete [key: prefix, default 1]
    #[arg(long)]
    pub prefix: Option<String>,
    /// parallel or sequential [key: exec]
    #[arg(long)]
    pub exec: Option<String>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// First tensor
    #[arg(long, value_name = "TENSOR")]
    pub a: PathBuf,
    /// Second tensor, same shape
    #[arg(long, value_name = "TENSOR")]
    pub b: PathBuf,
    /// Previous-scale size, marks bins at or above its Nyquist radius
    #[arg(long, value_name = "HxW")]
    pub prev: Option<String>,
    /// Output CSV
    #[arg(long, value_name = "CSV", default_value = "profile.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Previous-scale sizes with vocabulary; each step runs at twice the size
    #[arg(long, default_value = "8x8x256,16x16x512")]
    pub sizes: String,
    /// Timed repetitions per operation, at least 10
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Output CSV
    #[arg(long, value_name = "CSV", default_value = "bench.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// blobs or checkerboard
    #[arg(long, default_value = "blobs")]
    pub kind: String,
    /// Tensor size
    #[arg(long, value_name = "HxWxC", default_value = "8x8x4")]
    pub size: String,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output tensor
    #[arg(long, value_name = "TENSOR")]
    pub out: PathBuf,
    /// Also write a PGM (1 channel) or PPM (3 channels) preview
    #[arg(long, value_name = "IMAGE")]
    pub preview: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
