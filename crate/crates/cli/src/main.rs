//! `grounding`: dataset tooling, training, prediction and evaluation for
//! LiDAR visual grounding.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grounding_model::baseline::ReferenceMode;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod commands;
mod config;
mod viz;

use config::RunFile;

#[derive(Debug, Parser)]
#[command(name = "grounding", version, about = "LiDAR 3D visual grounding toolkit")]
struct Cli {
    /// Directory every relative path is resolved against; created if missing.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    /// Run seed, pushed into every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run file (see docs/cli.md).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More logging (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and filter raw annotation records into grounding samples.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic corpus with train/test splits.
    Synth(SynthArgs),
    /// Caption and paraphrase sampled frames into new prompts.
    Annotate(AnnotateArgs),
    /// Train the detect-then-match baseline.
    TrainBaseline(TrainBaselineArgs),
    /// Train the one-stage BEV grounding model.
    TrainBevgrounding(TrainBevArgs),
    /// Write a prediction file for a sample file.
    Predict(PredictArgs),
    /// Score prediction files against ground truth.
    Eval(EvalArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
    /// Render bird's-eye plots of samples and predictions.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Raw records, one JSON object per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "samples.jsonl")]
    out: PathBuf,
    #[arg(long, default_value = "diagnostics.jsonl")]
    diagnostics: PathBuf,
    /// Base directory of `lidar_ref` paths (default: the input's directory).
    #[arg(long)]
    lidar_root: Option<PathBuf>,
    /// Minimum points inside the referred box.
    #[arg(long)]
    min_points: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    prompts_per_scene: Option<usize>,
    /// Corpus directory.
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    /// Fraction of scenes held out for `test.jsonl`.
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Candidate frames.
    #[arg(long)]
    frames: PathBuf,
    /// Camera calibration (default: calib.json beside the frames).
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    rate: Option<f64>,
    /// Cap on requests in flight.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Offline mock captioner and paraphraser.
    #[arg(long)]
    mock: bool,
    #[arg(long, default_value = "annotated.jsonl")]
    out: PathBuf,
    #[arg(long, default_value = "failures.jsonl")]
    failures: PathBuf,
    #[arg(long, default_value = "review_queue.jsonl")]
    review: PathBuf,
}

#[derive(Debug, Args)]
struct TrainBaselineArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Detector proposals; without it the synthetic detector runs and its
    /// output is written next to the matcher.
    #[arg(long)]
    proposals: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value = "matcher.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainBevArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Point clouds only (the -L variant): no camera branch, no fine-tuning.
    #[arg(long)]
    lidar_only: bool,
    /// Continue from a checkpoint with training state.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// Cap on optimizer steps per stage.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Camera calibration (default: calib.json beside the samples).
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value = "bevgrounding.ckpt")]
    out: PathBuf,
    /// Per-step losses, JSON lines.
    #[arg(long, default_value = "train_log.jsonl")]
    log: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "method", required = true, multiple = false)]
struct Method {
    /// BEV grounding checkpoint.
    #[arg(long, group = "method")]
    checkpoint: Option<PathBuf>,
    /// Trained match head.
    #[arg(long, group = "method")]
    matcher: Option<PathBuf>,
    /// Reference selector.
    #[arg(long, group = "method")]
    reference: Option<ReferenceMode>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    samples: PathBuf,
    #[command(flatten)]
    method: Method,
    /// Detector proposals for the matcher and reference modes; without it
    /// the synthetic detector runs.
    #[arg(long)]
    proposals: Option<PathBuf>,
    /// Repeat a reference selector with seeds seed..seed+N, one file each.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value = "predictions.jsonl")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum IouArg {
    Bev,
    #[value(name = "3d")]
    ThreeD,
    Both,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Prediction files; several are averaged as trials.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pred: Vec<PathBuf>,
    /// Ground-truth samples.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    iou: IouArg,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5])]
    thresholds: Vec<f64>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Also write the statistics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VizArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Baseline predictions, drawn blue.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// BEV grounding predictions, drawn green.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Samples to render (default from the run file).
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value = "viz")]
    out: PathBuf,
}

/// Bad flags, values or config keys.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Every attempted frame failed at the remote clients.
#[derive(Debug)]
pub struct RemoteExhausted(pub String);

impl std::fmt::Display for RemoteExhausted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RemoteExhausted {}

/// Resolved global options shared by the subcommands.
pub struct Ctx {
    pub out: PathBuf,
    pub run: RunFile,
}

impl Ctx {
    pub fn path(&self, p: &Path) -> PathBuf {
        self.out.join(p)
    }

    pub fn seed(&self) -> u64 {
        self.run.seed()
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use grounding_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<RemoteExhausted>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) | E::Encoder(_) => 1,
                E::Client(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut run = match &cli.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    if let Some(s) = cli.seed.or(run.seed) {
        run.apply_seed(s);
    }
    std::fs::create_dir_all(&cli.output_dir)
        .map_err(|e| grounding_core::Error::io(&cli.output_dir, e))?;
    let ctx = Ctx {
        out: cli.output_dir,
        run,
    };
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Annotate(a) => commands::annotate(&ctx, a),
        Command::TrainBaseline(a) => commands::train_baseline(&ctx, a),
        Command::TrainBevgrounding(a) => commands::train_bev(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::Viz(a) => viz::viz(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
