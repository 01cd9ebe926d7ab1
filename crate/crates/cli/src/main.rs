mod commands;
mod common;
mod error;
mod settings;

use clap::{Args, Parser, Subcommand};
use error::CliError;
use settings::Settings;
use std::path::PathBuf;
use std::process::ExitCode;

/// Gated-fusion LRP toolkit: synthetic data, toy models, explanations,
/// prototypes and perturbation benchmarks.
#[derive(Debug, Parser)]
#[command(name = "gatelrp", version)]
struct Cli {
    /// Key-value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-sample parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic flood/road/car dataset.
    GenData(GenDataArgs),
    /// Build a toy model and save it in graph format.
    BuildModel(BuildModelArgs),
    /// Fit a model to a dataset with plain SGD.
    Train(TrainArgs),
    /// Explain one prediction: heatmaps, concept vectors and the conservation ledger.
    Explain(ExplainArgs),
    /// Fit or apply concept-relevance prototypes.
    #[command(subcommand)]
    Prototypes(PrototypesCommand),
    /// Channel-perturbation benchmark of concept rankings.
    EvalPerturb(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of scenes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Image side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Cars per scene as `min,max`.
    #[arg(long)]
    pub cars: Option<String>,
    /// Car colors, comma separated (white, dark, red, yellow).
    #[arg(long)]
    pub palette: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildModelArgs {
    /// `toy-pid` or `toy-det`.
    #[arg(long)]
    pub arch: Option<String>,
    /// `handcrafted` or `random` (random needs --seed).
    #[arg(long)]
    pub weights: Option<String>,
    /// Channels of the stem and branches (default 8).
    #[arg(long)]
    pub width: Option<usize>,
    /// Channels of the toy-pid head convolutions (default 16; toy-det 8).
    #[arg(long)]
    pub head_width: Option<usize>,
    /// Input side in pixels (default 64).
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Build every convolution without a bias vector.
    #[arg(long)]
    pub no_bias: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model directory (model.json + weights.bin).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Passes over the dataset.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size (default 8).
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Model directory (model.json + weights.bin).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// RGB PNG to explain.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Sample id used in artifact names.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Output head; defaults to the model's first explainable head.
    #[arg(long)]
    pub head: Option<String>,
    /// Class to explain; defaults to 1 (flood) for dense heads and 0 for grid heads.
    #[arg(long)]
    pub class: Option<usize>,
    /// Grid cell `row,col` for detection heads; defaults to the head's peak.
    #[arg(long)]
    pub cell: Option<String>,
    /// Class-index mask PNG whose pixels equal --class form the region;
    /// defaults to the predicted region.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Rule assignment, e.g. `epsilon:0`, `Conv2D=zplus,head.cls=epsilon:0.01`.
    #[arg(long)]
    pub rules: Option<String>,
    /// Comma-separated layer ids; defaults to the head's penultimate conv.
    #[arg(long)]
    pub layers: Option<String>,
    /// Concept-conditioned heatmaps rendered per layer.
    #[arg(long)]
    pub top_m: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum PrototypesCommand {
    /// Fit a Gaussian mixture to the concept vectors of a dataset.
    Fit(ProtoFitArgs),
    /// Assign one sample to a fitted prototype store.
    Assign(ProtoAssignArgs),
}

#[derive(Debug, Args)]
pub struct ProtoFitArgs {
    /// Model directory (model.json + weights.bin).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Layer whose channels are the concepts; defaults to the head's penultimate conv.
    #[arg(long)]
    pub layer: Option<String>,
    /// Mixture components.
    #[arg(long)]
    pub k: Option<usize>,
    /// Outlier percentile, in (0, 50].
    #[arg(long)]
    pub q: Option<f64>,
    /// Output head; defaults to the model's first explainable head.
    #[arg(long)]
    pub head: Option<String>,
    /// Class to explain; defaults to 1 for dense heads and 0 for grid heads.
    #[arg(long)]
    pub class: Option<usize>,
    /// Rule assignment, as for `explain`.
    #[arg(long)]
    pub rules: Option<String>,
    /// Concepts listed per prototype.
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Reference samples per concept.
    #[arg(long)]
    pub refs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProtoAssignArgs {
    /// `prototypes.json` written by `prototypes fit`.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Model directory; defaults to the one recorded in the store.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// RGB PNG to assign.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Dataset directory, used with --index instead of --image.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sample index within --data.
    #[arg(long)]
    pub index: Option<usize>,
    /// Rule assignment; defaults to the one recorded in the store.
    #[arg(long)]
    pub rules: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model directory (model.json + weights.bin).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated methods: lrp, gradient, gradcam, activation, random.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated layer ids; defaults to the hidden convs before the classifier.
    #[arg(long)]
    pub layers: Option<String>,
    /// Samples drawn from the dataset.
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed of the sample draw, kept apart from --seed so that --seed only
    /// reaches the Random baseline.
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Output head; defaults to the model's first explainable head.
    #[arg(long)]
    pub head: Option<String>,
    /// Class to explain; defaults to 1 for dense heads and 0 for grid heads.
    #[arg(long)]
    pub class: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::load(cli.config.as_deref(), cli.out, cli.seed)?;
    if let Some(jobs) = settings.pick(cli.jobs, "jobs")? {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(CliError::usage)?;
    }
    match cli.command {
        Command::GenData(a) => commands::data::gen_data(&settings, a),
        Command::BuildModel(a) => commands::model::build_model(&settings, a),
        Command::Train(a) => commands::model::train(&settings, a),
        Command::Explain(a) => commands::explain::explain(&settings, a),
        Command::Prototypes(PrototypesCommand::Fit(a)) => commands::prototypes::fit(&settings, a),
        Command::Prototypes(PrototypesCommand::Assign(a)) => commands::prototypes::assign(&settings, a),
        Command::EvalPerturb(a) => commands::eval::eval_perturb(&settings, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
