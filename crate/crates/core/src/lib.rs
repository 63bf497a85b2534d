//! Patient journeys as language-model prompts.
//!
//! The crate turns longitudinal event logs into weekly patient timelines,
//! samples forecasting and landmark-event tasks from them, renders those tasks
//! as prompt/target text pairs, and scores model outputs back into numeric
//! forecasts and calibrated event risks. Evaluation metrics (aggregated MASE,
//! IPCW C-index, Brier score) and a synthetic cohort simulator with known
//! dynamics round out the toolkit.
//!
//! Per-patient work fans out through [`par::Executor`], which uses rayon when
//! the `parallel` feature is enabled and falls back to a plain sequential loop
//! otherwise. Every random draw comes from a stream derived from
//! `(root seed, stream name, key)` so outputs do not depend on scheduling.

pub mod backend;
pub mod cohort;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod sampling;
pub mod scoring;
pub mod serializer;
pub mod simulator;

pub use cohort::{CohortStore, PatientRecord, RawEvent};
pub use sampling::{SplitConfig, TaskBundle};
pub use serializer::{PromptPair, SerializerConfig};
