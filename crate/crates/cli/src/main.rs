use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use firecast_core::metrics::Baseline;
use firecast_core::sampling::Split;
use firecast_core::ModelKind;

mod commands;
mod map;

#[derive(Parser)]
#[command(name = "firecast", version, about = "Spatio-temporal wildfire occurrence forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic datacube with a known fire process.
    GenSynthetic(GenArgs),
    /// Print the header and variable summary of a datacube.
    CubeInfo(CubeArgs),
    /// Train one model and write its checkpoints and training log.
    Train(TrainArgs),
    /// Score a checkpoint or a naive baseline on one split and append a results row.
    Evaluate(EvalArgs),
    /// Train and evaluate a grid of configurations.
    Ablate(AblateArgs),
    /// Export a map of fire confidence scores at one time step.
    PredictMap(MapArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON generator configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CubeArgs {
    #[arg(long)]
    cube: PathBuf,
}

#[derive(Args, Clone)]
struct RunOptions {
    /// JSON training configuration (schedule, batch size, subsampling).
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// JSON model configuration; must match --model.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// JSON split definition with train_years, val_years and test_years.
    #[arg(long)]
    split_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_samples_per_epoch: Option<usize>,
    #[arg(long)]
    max_val_samples: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    model: ModelKind,
    #[arg(long, default_value_t = 12)]
    ts: usize,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    radius: usize,
    /// Grid-graph neighbours including the vertex itself (default: min(9, vertices)).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for checkpoints, log and experiment echo.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunOptions,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<Baseline>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Results CSV to append to.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    ts: usize,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    radius: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    split_config: Option<PathBuf>,
    /// Scores a seeded random subset of this many samples.
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "convlstm")]
    model: Vec<ModelKind>,
    #[arg(long, value_delimiter = ',', default_value = "36")]
    ts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,12,16,20,24")]
    horizon: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7")]
    radius: Vec<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for results.csv, table.csv and per-run artifacts.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    max_eval_samples: Option<usize>,
    #[command(flatten)]
    run: RunOptions,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Time index of the most recent input step.
    #[arg(long)]
    t_idx: usize,
    /// Output directory for map.csv and map.pgm.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(&a),
        Command::CubeInfo(a) => commands::cube_info(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::PredictMap(a) => commands::predict_map(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
