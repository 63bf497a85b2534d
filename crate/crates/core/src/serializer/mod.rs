//! Text serialization of task bundles and parsing of model completions.
//!
//! [`render_prompt`] and [`render_target`] produce the supervised prompt and
//! target strings; [`parse_forecast_completion`] and [`parse_event_answer`]
//! read completions back. The exact template strings live in [`templates`].

mod number;
mod parse;
mod render;
pub mod templates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::LandmarkLabel;

pub use number::{format_number, quintile_bins};
pub use parse::{
    average_completions, parse_event_answer, parse_forecast_completion, parse_prompt_tasks,
    DecodedTrajectory, MeanTrajectory, PromptTask, PromptTasks,
};
pub use render::{render_pair, render_prompt, render_target, task_manifest};

#[derive(Debug, Error, PartialEq)]
pub enum SerializeError {
    #[error(
        "prompt for patient {patient_id} at week {split_week} needs {tokens} tokens with only \
         the first and last visit kept ({visits} visits in history); budget is {budget}"
    )]
    PromptTooLong {
        patient_id: String,
        split_week: u32,
        tokens: usize,
        budget: usize,
        visits: usize,
    },
    #[error("patient {patient_id} has no visits up to week {split_week}")]
    EmptyHistory { patient_id: String, split_week: u32 },
}

/// Counts tokens for context-budget enforcement.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// `ceil(bytes / 4)`, used when no tokenizer is available.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteEstimate;

impl TokenCounter for ByteEstimate {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

/// Whitespace-separated tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokens;

impl TokenCounter for WhitespaceTokens {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// The sentence tails used for the three event answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerTemplates {
    pub occurred: String,
    pub not_occurred: String,
    pub censored: String,
}

impl Default for AnswerTemplates {
    fn default() -> Self {
        AnswerTemplates {
            occurred: templates::ANSWER_OCCURRED.to_string(),
            not_occurred: templates::ANSWER_NOT_OCCURRED.to_string(),
            censored: templates::ANSWER_CENSORED.to_string(),
        }
    }
}

impl AnswerTemplates {
    pub fn sentence(&self, event: &str, label: LandmarkLabel) -> String {
        let tail = match label {
            LandmarkLabel::Occurred => &self.occurred,
            LandmarkLabel::NotOccurred => &self.not_occurred,
            LandmarkLabel::Censored => &self.censored,
        };
        templates::event_answer(event, tail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SerializerConfig {
    pub system_prompt: String,
    pub context_budget_tokens: usize,
    pub decimal_places: u32,
    pub quintile_task_enabled: bool,
    pub answers: AnswerTemplates,
}

impl Default for SerializerConfig {
    fn default() -> Self {
        SerializerConfig {
            system_prompt: templates::SYSTEM_PROMPT.to_string(),
            context_budget_tokens: 8000,
            decimal_places: 2,
            quintile_task_enabled: false,
            answers: AnswerTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Forecast,
    Buckets,
    Event,
}

/// One numbered task in a prompt/target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub id: usize,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LandmarkLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub prompt: String,
    pub target: String,
    pub patient_id: String,
    pub split_week: u32,
    pub task_manifest: Vec<TaskEntry>,
    pub token_estimate: usize,
}
