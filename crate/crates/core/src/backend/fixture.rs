use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{text_hash, Backend, BackendError, GenerationRequest, ScoreRequest, ScoreResponse};

/// One recorded prompt: `<dir>/<sha256(prompt)>.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub prompt_sha256: String,
    #[serde(default)]
    pub completions: Vec<String>,
    /// Target text to its per-token log-probabilities.
    #[serde(default)]
    pub scores: BTreeMap<String, Vec<f64>>,
}

/// Replays recorded completions and scores keyed by prompt hash.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    dir: PathBuf,
}

impl FixtureBackend {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(BackendError::Config(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        Ok(FixtureBackend { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn load(&self, prompt: &str, what: &str) -> Result<FixtureRecord, BackendError> {
        let key = text_hash(prompt);
        let path = self.path_for(&key);
        let text = fs::read_to_string(&path).map_err(|_| BackendError::FixtureMiss {
            what: what.to_string(),
            key: key.clone(),
            dir: self.dir.display().to_string(),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("{}: {e}", path.display())))
    }

    /// Appends completions and scores to the stored record for `prompt`.
    pub fn record(
        &self,
        prompt: &str,
        completions: &[String],
        scores: &[(String, Vec<f64>)],
    ) -> Result<(), BackendError> {
        let key = text_hash(prompt);
        let path = self.path_for(&key);
        let mut rec = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| BackendError::Protocol(format!("{}: {e}", path.display())))?,
            Err(_) => FixtureRecord {
                prompt_sha256: key,
                ..FixtureRecord::default()
            },
        };
        rec.completions.extend(completions.iter().cloned());
        rec.scores.extend(scores.iter().cloned());
        let json = serde_json::to_string_pretty(&rec)
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }
}

impl Backend for FixtureBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        request.validate()?;
        let rec = self.load(&request.prompt, "completions")?;
        if rec.completions.len() < request.num_samples {
            return Err(BackendError::FixtureMiss {
                what: format!(
                    "{} completions ({} recorded)",
                    request.num_samples,
                    rec.completions.len()
                ),
                key: rec.prompt_sha256,
                dir: self.dir.display().to_string(),
            });
        }
        Ok(rec.completions[..request.num_samples].to_vec())
    }

    fn score_target(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let rec = self.load(&request.prompt, "scores")?;
        match rec.scores.get(&request.target) {
            Some(lp) if !lp.is_empty() => Ok(ScoreResponse::new(lp.clone())),
            _ => Err(BackendError::FixtureMiss {
                what: format!("score of target {:?}", request.target),
                key: rec.prompt_sha256,
                dir: self.dir.display().to_string(),
            }),
        }
    }
}
