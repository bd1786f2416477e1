mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand};
use dirwrap::uncertainty::Method;

/// Default scenario seed when neither --seed nor DW_SEED is given.
pub const DEFAULT_SEED: u64 = 20_200_226;

#[derive(Debug, Parser)]
#[command(name = "dirwrap", version, about = "Dirichlet uncertainty wrapper for black-box classifiers")]
pub struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, env = "DW_SEED")]
    pub seed: Option<u64>,

    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic source/target shift scenario.
    Synth(SynthArgs),
    /// Train the simulated black-box classifier on source data.
    BbTrain(BbTrainArgs),
    /// Query a black box for every example of a dataset.
    BbPredict(BbPredictArgs),
    /// Train the uncertainty wrapper on labelled target data.
    WrapTrain(WrapTrainArgs),
    /// Compute one uncertainty score per example.
    Score(ScoreArgs),
    /// Sweep the rejection curve of a scores file.
    Reject(RejectArgs),
    /// Render curves, charts and the summary table.
    Report(ReportArgs),
    /// Check the wrapper-loss gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

fn flip_rate(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=0.5).contains(&v) {
        Ok(v)
    } else {
        Err(format!("flip rate must lie in [0, 0.5], got {v}"))
    }
}

fn layer_size(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("layer sizes must be positive".to_string()),
        Ok(n) => Ok(n),
        Err(e) => Err(format!("bad layer size {s:?}: {e}")),
    }
}

fn method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n_source: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_target: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    /// Rotation of the target domain in degrees.
    #[arg(long, default_value_t = 35.0)]
    pub rotation: f64,
    #[arg(long, default_value_t = 1.5)]
    pub translation: f64,
    /// Target label noise, at most 0.5.
    #[arg(long, default_value_t = 0.05, value_parser = flip_rate)]
    pub flip: f64,
    /// Output directory for the six split files and the manifest.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

/// How text examples become feature vectors.
#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Embedding table (`token v1 … vd` per line) for averaged embeddings.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Buckets of the hashed bag of words used when no table is given.
    #[arg(long, default_value_t = 256)]
    pub hash_dim: usize,
}

#[derive(Debug, Args)]
pub struct BbTrainArgs {
    /// Source training split.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value_t = 80)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Hidden layer sizes, comma separated.
    #[arg(long, default_value = "32,32", value_delimiter = ',', value_parser = layer_size)]
    pub hidden: Vec<usize>,
    #[arg(long, default_value = "blackbox.json")]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "endpoint"])))]
pub struct BbPredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Simulated black-box model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Base URL of a remote prediction service.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value = "predictions.jsonl")]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct WrapTrainArgs {
    /// Labelled target-domain split.
    #[arg(long)]
    pub data: PathBuf,
    /// Black-box predictions for `--data`.
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda: f64,
    /// Monte Carlo samples per example during training.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 80)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value = "wrapper.json")]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to the model path with a `.loss.csv` suffix.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub preds: PathBuf,
    /// baseline-entropy, sampled-entropy or var-ratios.
    #[arg(long, value_parser = method)]
    pub method: Method,
    /// Trained wrapper; required by the sampling methods.
    #[arg(long)]
    pub wrapper: Option<PathBuf>,
    /// Monte Carlo samples per example.
    #[arg(long, default_value_t = dirwrap::uncertainty::DEFAULT_SCORING_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value = "scores.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct RejectArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Comma-separated rejected fractions; defaults to 0.00, 0.01, …, 0.50.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, default_value = "curve.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Curve file, optionally labelled as LABEL=PATH. Repeat per method.
    #[arg(long = "curve", required = true)]
    pub curves: Vec<String>,
    #[arg(long, default_value = "target")]
    pub dataset: String,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub items: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Command::Score(a) = &cli.command {
        if a.method.uses_wrapper() && a.wrapper.is_none() {
            Cli::command()
                .error(
                    ErrorKind::MissingRequiredArgument,
                    format!("--method {} needs --wrapper", a.method),
                )
                .exit();
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
