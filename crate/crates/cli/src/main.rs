use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "dss", version, about = "Salient object detection with short connections")]
struct Cli {
    /// Log per-epoch and per-image progress.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    GenData(GenDataArgs),
    /// Train a network from a manifest.
    Train(TrainArgs),
    /// Predict saliency maps with a trained checkpoint.
    Infer(InferArgs),
    /// Refine saliency maps with the fully connected CRF.
    Crf(CrfArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Train and evaluate one network per short-connection pattern.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Side length in pixels, a multiple of 32.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Index of the first sample; disjoint ranges give disjoint splits.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's training manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pattern: Option<String>,
    /// Output directory for `model.dssp`, `model.json` and `loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Network description; defaults to the JSON beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single PPM input; `--out` is then the output PGM.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub image: Option<PathBuf>,
    /// Batch input; `--out` is then a directory receiving `<id>.pgm`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the six side outputs and the fusion map.
    #[arg(long)]
    pub dump_sides: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct CrfArgs {
    /// Single PGM saliency map.
    #[arg(long, requires = "image", conflicts_with = "pred_dir")]
    pub saliency: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Directory of `<id>.pgm` maps, refined for every manifest entry.
    #[arg(long, requires = "manifest", required_unless_present = "saliency")]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// JSON file with CRF parameters; flags below override it.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub sigma_alpha: Option<f64>,
    #[arg(long)]
    pub sigma_beta: Option<f64>,
    #[arg(long)]
    pub sigma_gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// `dataset-mean` or `per-image`.
    #[arg(long, default_value = "dataset-mean")]
    pub mode: String,
    /// Output directory for `report.json` and `pr.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated pattern names.
    #[arg(long, default_value = "none,pattern1,pattern2,pattern3")]
    pub patterns: String,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = commands::init_threads().and_then(|()| match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Crf(a) => commands::crf(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
