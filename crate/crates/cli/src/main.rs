mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "drowsinet", version, about = "EEG drowsiness regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Band-pass, decimate and re-reference every recording.
    Preprocess(DataArgs),
    /// Write per-subject PSD features and labels.
    Features(DataArgs),
    /// Train one algorithm on all subjects but the target and predict it.
    Run(RunArgs),
    /// Leave-one-subject-out comparison of the configured algorithms.
    Compare(DataArgs),
    /// Re-emit the tables from a saved report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with `n_subjects`, `seed`, `null_coupling` and `profile`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_s: Option<f64>,
    /// Decouple the latent drowsiness from EEG and response times.
    #[arg(long)]
    null_coupling: bool,
}

/// Pipeline overrides shared by every data-processing command. Each flag
/// mirrors the config field of the same name.
#[derive(Debug, Args)]
struct PipelineArgs {
    /// Pipeline configuration JSON; flags override it, it overrides defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated algorithm ids (RR, RR_SMLR, EEGNET_RAW, EEGNET_PSD, EEGNET_PSD_SMLR).
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    #[arg(long)]
    n_repeats: Option<usize>,
    #[arg(long)]
    n_bootstrap: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory containing dataset.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Subject held out and predicted.
    #[arg(long)]
    target: String,
    #[arg(long)]
    algorithm: String,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// A report.json written by `compare`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Features(a) => commands::features(a),
        Command::Run(a) => commands::run(a),
        Command::Compare(a) => commands::compare(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("drowsinet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
