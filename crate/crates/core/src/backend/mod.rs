//! Language-model backends.
//!
//! A backend can sample completions for a prompt and score a fixed target
//! continuation token by token. [`MockBackend`] is a deterministic stand-in,
//! [`FixtureBackend`] replays recorded responses, and [`RemoteBackend`] talks to
//! a completions-over-HTTP server.

mod fixture;
mod mock;
mod remote;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::serializer::{ByteEstimate, TokenCounter};

pub use fixture::{FixtureBackend, FixtureRecord};
pub use mock::{MockBackend, MockStrategy};
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend does not support {0}; use a fixture backend with recorded scores instead")]
    Capability(String),
    #[error("request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("no fixture for {what} (key {key}) in {dir}")]
    FixtureMiss { what: String, key: String, dir: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub num_samples: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, num_samples: usize) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            num_samples,
            max_new_tokens: 1024,
            temperature: 1.0,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.num_samples == 0 {
            return Err(BackendError::InvalidRequest("num_samples must be at least 1".into()));
        }
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    /// Log-probabilities of the target tokens only, first target token first.
    pub target_token_logprobs: Vec<f64>,
    pub token_count: usize,
}

impl ScoreResponse {
    pub fn new(target_token_logprobs: Vec<f64>) -> Self {
        ScoreResponse {
            token_count: target_token_logprobs.len(),
            target_token_logprobs,
        }
    }
}

pub trait Backend: Send + Sync {
    /// Exactly `request.num_samples` completions.
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError>;

    fn score_target(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError>;

    /// Token counter used for prompt budgets.
    fn token_counter(&self) -> &dyn TokenCounter {
        &ByteEstimate
    }
}

/// Lowercase hex SHA-256 of `text`; the key for fixtures and noise streams.
pub fn text_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
