mod calibrate;
mod dataset;
mod events;
mod forecast;
mod simulate;

use std::fs::File;
use std::path::Path;

use anyhow::Context;
use journey::cohort::{CohortStore, Partition};
use journey::{PromptPair, TaskBundle};
use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate, CifPoint, CifRecord};
pub use dataset::{build_dataset, build_rows};
pub use events::{evaluate_events, EventReport, HorizonScore, ScoreRecord};
pub use forecast::{evaluate_forecast, forecast_points, ForecastReport, ForecastRun};
pub use simulate::simulate;

/// Derived stream for generation request seeds, keyed by patient/split/pass.
pub const STREAM_GENERATION: &str = "generation";
/// Derived stream for `--risk random`, keyed by patient/event.
pub const STREAM_RISK_RANDOM: &str = "risk-random";

pub const EVENTS_FILE: &str = "events.csv";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const COHORT_FILE: &str = "cohort.jsonl";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const FORECAST_REPORT_FILE: &str = "forecast_report.json";
pub const ASSESSMENTS_FILE: &str = "assessments.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const EVENTS_REPORT_FILE: &str = "events_report.json";
pub const CALIBRATED_FILE: &str = "calibrated.jsonl";

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub partition: Partition,
    /// Index of the variable-subset pass within the split.
    pub pass: usize,
    pub pair: PromptPair,
    pub bundle: TaskBundle,
}

pub fn load_store(path: &Path) -> anyhow::Result<CohortStore> {
    let f = File::open(path).with_context(|| format!("opening cohort store {}", path.display()))?;
    CohortStore::read_jsonl(f).with_context(|| format!("reading cohort store {}", path.display()))
}
