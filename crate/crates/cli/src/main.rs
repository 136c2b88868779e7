use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use haptic_core::dataset::Variant;
use haptic_core::model::ModelConfig;
use haptic_core::trainer::{ExperimentConfig, ExperimentKind};

mod commands;

use commands::CliError;

/// Force-trace biometrics: synthesize, filter, train, evaluate, sweep, verify.
#[derive(Parser, Debug)]
#[command(name = "haptic", version, args_override_self = true)]
struct Cli {
    /// Root for default output locations.
    #[arg(long, global = true, env = "HAPTIC_OUT_DIR", default_value = "haptic-out")]
    out_root: PathBuf,

    /// Worker threads for model training and feature extraction (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of raw traces plus a manifest.
    Synth(SynthArgs),
    /// EMA-filter every raw trace of a manifest.
    Filter(FilterArgs),
    /// Train every model of a user-id or task experiment.
    TrainExperiment(TrainArgs),
    /// Re-evaluate trained checkpoints on their held-out splits.
    EvalExperiment(EvalArgs),
    /// Accuracy as a function of training samples per class.
    Sweep(SweepArgs),
    /// Compare model gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 15)]
    users: usize,
    /// Number of tasks; the first seven are the letters a–g.
    #[arg(long, default_value_t = 7)]
    tasks: usize,
    #[arg(long, default_value_t = 120)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trial duration range `lo,hi` in seconds, before per-user speed scaling.
    #[arg(long, default_value = "2,4", value_parser = parse_range)]
    duration: (f64, f64),
    /// Output directory [default: <out-root>/data].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = haptic_core::signal::DEFAULT_EMA_ALPHA)]
    alpha: f32,
    /// Output directory [default: the manifest's directory].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Clone)]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "user-id")]
    kind: ExperimentKind,
    #[arg(long, default_value = "raw")]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Resampled sequence length [default: 512 for user-id, 64 for task].
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Train on unnormalized features.
    #[arg(long)]
    no_normalize: bool,
}

impl ExperimentArgs {
    fn config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(self.kind, self.variant);
        let t = &mut cfg.train;
        t.seed = self.seed;
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.learning_rate = self.lr.unwrap_or(t.learning_rate);
        t.lr_min = self.lr_min.unwrap_or(t.lr_min);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.train_per_class = self.train_per_class.unwrap_or(t.train_per_class);
        t.test_per_class = self.test_per_class.unwrap_or(t.test_per_class);
        t.normalize = !self.no_normalize;
        let m = &mut cfg.model;
        m.seq_len = self.seq_len.unwrap_or(m.seq_len);
        m.d_model = self.d_model.unwrap_or(m.d_model);
        m.num_heads = self.heads.unwrap_or(m.num_heads);
        m.ffn_dim = self.ffn_dim.unwrap_or(m.ffn_dim);
        m.num_layers = self.layers.unwrap_or(m.num_layers);
        m.dropout = self.dropout.unwrap_or(m.dropout);
        cfg
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Output directory [default: <out-root>/<kind>-<variant>].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by train-experiment.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Report directory [default: <checkpoints>/reports].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Training sizes per class [default: 5, 10, …, 100].
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Output CSV [default: <out-root>/sweep-<kind>-<variant>.csv].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    coords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    seq_len: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    /// Negative control: corrupt the ReLU backward pass.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

impl GradcheckArgs {
    fn model(&self) -> ModelConfig {
        ModelConfig::standard(self.classes, self.seq_len)
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(lo)?, num(hi)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
        .and_then(|()| dispatch(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let root = &cli.out_root;
    match &cli.command {
        Command::Synth(a) => commands::synth(a, root),
        Command::Filter(a) => commands::filter(a),
        Command::TrainExperiment(a) => commands::train_experiment(a, root),
        Command::EvalExperiment(a) => commands::eval_experiment(a),
        Command::Sweep(a) => commands::sweep(a, root),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}
