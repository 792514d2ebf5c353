mod cmd;
mod config;
mod plot;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Diffusion-based ECG heartbeat synthesis: generation, imputation and forecasting.
#[derive(Parser, Debug)]
#[command(name = "cardiodiff", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write artifacts to exactly this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parent for timestamped run directories [env: CARDIODIFF_RUN_ROOT, default: ./runs].
    #[arg(long)]
    pub run_root: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse WFDB records (or draw the synthetic corpus) into train/test beat files.
    Ingest(cmd::IngestArgs),
    /// Train the denoiser on a beats CSV.
    Train(cmd::TrainArgs),
    /// Sample new beats per class.
    Generate(cmd::GenerateArgs),
    /// Fill a gap in each input beat.
    Impute(cmd::ImputeArgs),
    /// Predict each beat from its predecessor.
    Forecast(cmd::ForecastArgs),
    /// Compare a synthetic beat set against real beats.
    Evaluate(cmd::EvaluateArgs),
    /// Classifier trained on real beats versus real plus generated beats.
    AugmentEval(cmd::AugmentArgs),
    /// Print the effective configuration.
    Config(cmd::ConfigArgs),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(a) => cmd::ingest(a),
        Command::Train(a) => cmd::train(a),
        Command::Generate(a) => cmd::generate(a),
        Command::Impute(a) => cmd::impute(a),
        Command::Forecast(a) => cmd::forecast(a),
        Command::Evaluate(a) => cmd::evaluate(a),
        Command::AugmentEval(a) => cmd::augment_eval(a),
        Command::Config(a) => cmd::show_config(a),
    }
}
