//! `proxyformer` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use proxyformer::geometry::NormalEigen;
use proxyformer::nn::CdVariant;

#[derive(Parser, Debug)]
#[command(name = "proxyformer", version, about = "Point cloud completion with proxies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic training shapes with viewpoint occlusion.
    GenData(GenDataArgs),
    /// Split a ground-truth cloud into existing and missing parts against a partial scan.
    ExtractMissing(ExtractArgs),
    /// Train a model and write a loss log and checkpoints.
    Train(TrainArgs),
    /// Complete a partial cloud with a trained checkpoint.
    Complete(CompleteArgs),
    /// Evaluate predicted clouds against ground truth.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Time each model stage and verify the parameter count.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Fixture {
    /// Unit cube surface; the partial scan lacks the top face.
    CubeMinusFace,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Model profile: pcn, shapenet55, toy or tiny.
    #[arg(long, default_value = "toy")]
    profile: String,
    /// Override a config field, e.g. `--set depth=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of shapes.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write a fixed fixture instead of random shapes.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// GT points for the fixture.
    #[arg(long, default_value_t = 4096)]
    fixture_points: usize,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    partial: PathBuf,
    /// Output directory for existing/missing clouds and summary.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    beta: f64,
    #[arg(long, default_value_t = 0.01)]
    threshold: f64,
    /// Neighbors for normal estimation.
    #[arg(long, default_value_t = 16)]
    k_normal: usize,
    #[arg(long, value_enum, default_value = "smallest")]
    normal_eigen: EigenArg,
    /// JSON array of GT indices known to be missing; adds accuracy to the summary.
    #[arg(long)]
    expected_missing: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EigenArg {
    Smallest,
    Largest,
}

impl From<EigenArg> for NormalEigen {
    fn from(e: EigenArg) -> Self {
        match e {
            EigenArg::Smallest => NormalEigen::Smallest,
            EigenArg::Largest => NormalEigen::Largest,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CdArg {
    L1,
    L2,
}

impl From<CdArg> for CdVariant {
    fn from(c: CdArg) -> Self {
        match c {
            CdArg::L1 => CdVariant::L1,
            CdArg::L2 => CdVariant::L2,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for loss.jsonl and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Alignment loss weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Chamfer variant used in the loss.
    #[arg(long, value_enum)]
    cd: Option<CdArg>,
    #[arg(long)]
    lr: Option<f64>,
    /// Samples per step; defaults to the whole data set.
    #[arg(long)]
    batch: Option<usize>,
    /// Also write a checkpoint every this many steps.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    /// Checkpoint written by train (its .json sidecar must sit next to it).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    partial: PathBuf,
    /// Output directory for coarse, dense and complete clouds.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the random position encoding.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file extension.
    #[arg(long, default_value = "pcf", value_parser = ["pcf", "xyz"])]
    format: String,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted cloud, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth cloud, or a directory with the same layout as --pred.
    #[arg(long)]
    gt: PathBuf,
    /// Partial input(s), enabling fidelity.
    #[arg(long)]
    partial: Option<PathBuf>,
    /// Directory of reference shapes, enabling MMD.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// DCD temperature.
    #[arg(long, default_value_t = 1000.0)]
    dcd_alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    fscore_threshold: f64,
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Profile of the end-to-end check.
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameters sampled by the end-to-end check.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Print every individual check.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Forward passes to time.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::ExtractMissing(a) => commands::extract_missing(a),
        Command::Train(a) => commands::train(a),
        Command::Complete(a) => commands::complete(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
