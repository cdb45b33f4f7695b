mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::UsageError;

#[derive(Parser)]
#[command(name = "gin", version, about = "Graph intention network CTR pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic click log plus train and test samples.
    GenData(GenDataArgs),
    /// Segment a click log into sessions and build the co-occurrence graph.
    BuildGraph(BuildGraphArgs),
    /// Train a model and write a checkpoint and training log.
    Train(TrainArgs),
    /// Score one or more checkpoints on a sample file.
    Eval(EvalArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct Common {
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Falls back to the GIN_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Directory receiving clicks.tsv, train.tsv and test.tsv.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    num_items: Option<usize>,
    #[arg(long)]
    num_clusters: Option<usize>,
    #[arg(long)]
    num_users: Option<usize>,
    #[arg(long)]
    sessions_per_user: Option<usize>,
    #[arg(long)]
    bridge_prob: Option<f64>,
    #[arg(long)]
    sparsity_mix: Option<f64>,
    #[arg(long)]
    ctr_signal: Option<f64>,
    #[arg(long)]
    holdout_frac: Option<f64>,
    #[arg(long)]
    samples_per_user: Option<usize>,
    #[arg(long)]
    test_samples_per_user: Option<usize>,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[command(flatten)]
    common: Common,
    /// Click log TSV: user, timestamp, query, item.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Co-occurrence window in clicks [default: 1]
    #[arg(long)]
    window: Option<usize>,
    /// Query similarity threshold for staying in a session [default: 0.3]
    #[arg(long)]
    jaccard: Option<f64>,
    /// Largest gap inside a session [default: 1800]
    #[arg(long)]
    session_gap_secs: Option<u64>,
    /// Drop clicks older than this many days before the newest one.
    #[arg(long)]
    max_age_days: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    /// Diffusion depth K [default: 2]
    #[arg(long)]
    depth: Option<usize>,
    /// Top-N neighbors per hop [default: 10]
    #[arg(long)]
    neighbors: Option<usize>,
    /// Embedding width [default: 16]
    #[arg(long)]
    dim: Option<usize>,
    /// Most recent clicks kept per sample [default: 20]
    #[arg(long)]
    clicks: Option<usize>,
    /// gin or sumpool-base [default: gin]
    #[arg(long)]
    aggregator: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Training samples TSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Graph file from build-graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Training log path [default: <output>.log]
    #[arg(long)]
    log: Option<PathBuf>,
    /// Samples scored for the final metrics [default: the training input]
    #[arg(long)]
    eval_input: Option<PathBuf>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    batch: Option<usize>,
    /// Gradient workers [default: 1]
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Samples TSV.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Repeat to compare several models in one report.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Report path; the report is also printed.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// [default: 8]
    #[arg(long)]
    dim: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    depth: Option<usize>,
    /// [default: 3]
    #[arg(long)]
    neighbors: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::BuildGraph(a) => commands::build_graph(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
