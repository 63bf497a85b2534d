//! Pipeline commands behind the `journey` binary. Each command reads its
//! inputs, writes record files plus a summary table into `--out`, and always
//! leaves a `manifest.json` there.

pub mod backend;
pub mod commands;
pub mod config;
pub mod error;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use journey::cohort::Partition;
use journey::par::Executor;
use journey::sampling::TaskSelection;

use crate::config::{BackendKind, Horizons, MockKind, PipelineConfig, RiskSource};
use crate::error::ErrorRecord;
use crate::run::Run;

#[derive(Debug, Parser)]
#[command(name = "journey", version, about = "Build prompt datasets from patient event logs and evaluate model forecasts and event risk")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for all random streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core). Also caps in-flight remote requests.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic event log and its ground truth.
    Simulate(SimulateArgs),
    /// Ingest an event log and write the cohort store and prompt/target dataset.
    BuildDataset(BuildArgs),
    /// Sample forecasts from a backend and score them with MASE.
    EvaluateForecast(ForecastArgs),
    /// Score event risk per horizon with IPCW C-index and Brier score.
    EvaluateEvents(EventsArgs),
    /// Recompute conditioned, monotone event probabilities from stored assessments.
    Calibrate(CalibrateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::BuildDataset(_) => "build-dataset",
            Command::EvaluateForecast(_) => "evaluate-forecast",
            Command::EvaluateEvents(_) => "evaluate-events",
            Command::Calibrate(_) => "calibrate",
        }
    }

    pub fn out(&self) -> &PathBuf {
        match self {
            Command::Simulate(a) => &a.out,
            Command::BuildDataset(a) => &a.out,
            Command::EvaluateForecast(a) => &a.out,
            Command::EvaluateEvents(a) => &a.out,
            Command::Calibrate(a) => &a.out,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub variables: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Event log (delimited text with a header row, or JSON lines).
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Task families, e.g. `forecast,events,buckets`.
    #[arg(long)]
    pub tasks: Option<TaskSelection>,
    #[arg(long)]
    pub splits_per_line: Option<usize>,
    #[arg(long)]
    pub subset_passes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Directory of recorded completions and scores for `--backend fixture`.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Mock forecast noise, in units of each variable's train standard deviation.
    #[arg(long)]
    pub mock_noise: Option<f64>,
    #[arg(long, value_enum)]
    pub mock_strategy: Option<MockKind>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Cohort store written by `build-dataset`.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Dataset written by `build-dataset`. Without it, forecast-only prompts
    /// are built from the cohort.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Completions sampled per prompt.
    #[arg(long)]
    pub m_samples: Option<usize>,
    /// Variable-subset passes per split.
    #[arg(long)]
    pub subset_passes: Option<usize>,
    #[arg(long)]
    pub partition: Option<Partition>,
    /// Restrict the report to the k variables with the highest copy-forward error on train.
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EventsArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Comma-separated horizons in weeks.
    #[arg(long)]
    pub horizons: Option<Horizons>,
    /// Comma-separated event names.
    #[arg(long, value_delimiter = ',')]
    pub events: Option<Vec<String>>,
    #[arg(long)]
    pub partition: Option<Partition>,
    #[arg(long, value_enum)]
    pub risk: Option<RiskSource>,
    /// Ground-truth file written by `simulate`, for `--risk truth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Assessments written by `evaluate-events`.
    #[arg(long)]
    pub assessments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn dispatch(cli: &Cli, run: &mut Run) -> anyhow::Result<()> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    config.apply_seed(cli.seed);
    run.manifest.seed = config.seed;
    if let Some(path) = &cli.config {
        run.input("config", path);
    }
    let executor = Executor::new(cli.jobs);
    match &cli.command {
        Command::Simulate(a) => commands::simulate(run, config, &executor, a),
        Command::BuildDataset(a) => commands::build_dataset(run, config, &executor, a),
        Command::EvaluateForecast(a) => commands::evaluate_forecast(run, config, &executor, cli.jobs, a),
        Command::EvaluateEvents(a) => commands::evaluate_events(run, config, &executor, cli.jobs, a),
        Command::Calibrate(a) => commands::calibrate(run, config, a),
    }
}

/// Runs one command and returns its exit code. On failure the error record
/// goes to stderr as one JSON line and into the manifest.
pub fn execute(cli: &Cli) -> i32 {
    let mut run = Run::new(cli.command.name(), cli.command.out(), cli.seed.unwrap_or(0), cli.jobs);
    let result = dispatch(cli, &mut run);
    let record = result.as_ref().err().map(ErrorRecord::from_error);
    if let Err(e) = run.finish(record.clone()) {
        eprintln!("warning: could not write manifest: {e:#}");
    }
    match record {
        None => 0,
        Some(rec) => {
            eprintln!("{}", serde_json::to_string(&rec).unwrap_or_else(|_| rec.message.clone()));
            rec.exit_code
        }
    }
}
