//! `bgseg`: train, run and score the two-stage background/foreground model and the
//! classic baselines on CDNet-layout sequences.

mod commands;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bgseg", version, about = "Background reconstruction and foreground segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the three-step training schedule; writes step1..3 checkpoints and losses.csv.
    Train(RunArgs),
    /// Write a reconstructed background and a foreground mask per frame.
    Infer(RunArgs),
    /// Score a checkpoint or a directory of masks against the ground truth.
    Eval(EvalArgs),
    /// F-measure of a threshold classifier over θ ∈ [0, 0.5].
    Sweep(SweepArgs),
    /// Render a synthetic sequence in CDNet layout.
    Synth(SynthArgs),
    /// Write the stage-1 background reconstruction per frame.
    Reconstruct(RunArgs),
    /// PCA background model fitted on the training half of each sequence.
    Pca(RunArgs),
    /// Streaming robust PCA over each sequence.
    Rpca(RunArgs),
}

/// Flags shared by every command that reads a run configuration.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration (see configs/).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile: desk or paper.
    #[arg(long)]
    profile: Option<String>,
    /// Override one config key, e.g. `--set training.steps.0.iterations=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set training.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// A sequence, a category directory or a dataset root.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    All,
    Train,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Model to run; mutually exclusive with --masks.
    #[arg(long, conflicts_with = "masks")]
    checkpoint: Option<PathBuf>,
    /// Output of `infer`, `pca` or `rpca`: `<dir>/<category>/<sequence>/mask/binNNNNNN.png`.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Directory for reports.csv; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Pca,
    Rpca,
    /// Threshold on the stage-1 reconstruction of a trained checkpoint.
    Baseline1,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Rpca => "rpca",
            Method::Baseline1 => "baseline1",
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Scene {
    MovingSquare,
    Camouflage,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Scene::MovingSquare)]
    scene: Scene,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the number of frames.
    #[arg(long)]
    frames: Option<usize>,
    /// Sequence directory to create.
    #[arg(long)]
    out: PathBuf,
}

/// A problem with the invocation itself rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<bgseg::Error>() {
            return match e {
                bgseg::Error::Config(_) | bgseg::Error::InvalidArgument(_) => 2,
                bgseg::Error::NonFinite(_) => 4,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a, true),
        Command::Reconstruct(a) => commands::infer(&a, false),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Pca(a) => commands::pca(&a),
        Command::Rpca(a) => commands::rpca(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
