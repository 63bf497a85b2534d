use std::env;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, GenerationRequest, ScoreRequest, ScoreResponse};

/// Connection settings for a completions-over-HTTP server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub completions_path: String,
    pub model: String,
    pub api_key: Option<String>,
    pub auth_header: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            completions_path: "/completions".into(),
            model: String::new(),
            api_key: None,
            auth_header: "Authorization".into(),
            timeout_secs: 120,
            max_in_flight: 8,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl RemoteConfig {
    /// Overrides fields from `JOURNEY_BASE_URL`, `JOURNEY_API_KEY`,
    /// `JOURNEY_MODEL`, `JOURNEY_TIMEOUT_SECS` and `JOURNEY_MAX_IN_FLIGHT`.
    pub fn with_env(mut self) -> Result<Self, BackendError> {
        fn parsed<T: std::str::FromStr>(name: &str) -> Result<Option<T>, BackendError> {
            match env::var(name) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| BackendError::Config(format!("{name}: cannot parse `{v}`"))),
                Err(_) => Ok(None),
            }
        }
        if let Ok(v) = env::var("JOURNEY_BASE_URL") {
            self.base_url = v;
        }
        if let Ok(v) = env::var("JOURNEY_API_KEY") {
            self.api_key = Some(v);
        }
        if let Ok(v) = env::var("JOURNEY_MODEL") {
            self.model = v;
        }
        if let Some(v) = parsed("JOURNEY_TIMEOUT_SECS")? {
            self.timeout_secs = v;
        }
        if let Some(v) = parsed("JOURNEY_MAX_IN_FLIGHT")? {
            self.max_in_flight = v;
        }
        Ok(self)
    }

    fn url(&self) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            self.completions_path.trim_start_matches('/')
        )
    }
}

/// Counting semaphore capping concurrent requests.
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Plain-HTTP client for an OpenAI-style `/completions` endpoint. Scoring uses
/// `echo` with `logprobs` and keeps the tokens whose offset falls inside the
/// target.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if config.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be at least 1".into()));
        }
        if !config.base_url.starts_with("http://") {
            return Err(BackendError::Config(format!(
                "base URL `{}` must use http:// (terminate TLS in a local proxy)",
                config.base_url
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend {
            in_flight: InFlight {
                free: Mutex::new(config.max_in_flight),
                cv: Condvar::new(),
            },
            config,
            agent,
        })
    }

    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let _permit = self.in_flight.acquire();
        let url = self.config.url();
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 2).min(10));
                thread::sleep(Duration::from_millis(wait));
            }
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.config.api_key {
                req = req.header(&self.config.auth_header, &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| BackendError::Protocol(e.to_string()))?;
                    if (200..300).contains(&status) {
                        return serde_json::from_str(&text)
                            .map_err(|e| BackendError::Protocol(format!("{e}: {text}")));
                    }
                    last = format!("HTTP {status}: {text}");
                    if status != 429 && status < 500 {
                        return Err(BackendError::Transport { attempts: attempt, message: last });
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(BackendError::Transport { attempts, message: last })
    }
}

impl Backend for RemoteBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        request.validate()?;
        let mut body = json!({
            "model": self.config.model,
            "prompt": request.prompt,
            "n": request.num_samples,
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let resp = self.post(&body)?;
        let choices = resp["choices"]
            .as_array()
            .ok_or_else(|| BackendError::Protocol("response has no `choices`".into()))?;
        let mut texts: Vec<(u64, String)> = choices
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let index = c["index"].as_u64().unwrap_or(i as u64);
                let text = c["text"]
                    .as_str()
                    .ok_or_else(|| BackendError::Protocol("choice without `text`".into()))?;
                Ok((index, text.to_string()))
            })
            .collect::<Result<_, BackendError>>()?;
        texts.sort_by_key(|(i, _)| *i);
        if texts.len() != request.num_samples {
            return Err(BackendError::Protocol(format!(
                "asked for {} completions, got {}",
                request.num_samples,
                texts.len()
            )));
        }
        Ok(texts.into_iter().map(|(_, t)| t).collect())
    }

    fn score_target(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        if request.target.is_empty() {
            return Err(BackendError::InvalidRequest("empty target".into()));
        }
        let full = format!("{}{}", request.prompt, request.target);
        let body = json!({
            "model": self.config.model,
            "prompt": full,
            "max_tokens": 1,
            "echo": true,
            "logprobs": 1,
            "temperature": 0.0,
        });
        let resp = self.post(&body)?;
        let lp = &resp["choices"][0]["logprobs"];
        let (Some(offsets), Some(values)) =
            (lp["text_offset"].as_array(), lp["token_logprobs"].as_array())
        else {
            return Err(BackendError::Capability("per-token log-probabilities with echo".into()));
        };
        if offsets.len() != values.len() {
            return Err(BackendError::Protocol("logprob and offset lengths differ".into()));
        }
        let start = request.prompt.len() as u64;
        let end = full.len() as u64;
        let mut out = Vec::new();
        for (off, v) in offsets.iter().zip(values) {
            let off = off
                .as_u64()
                .ok_or_else(|| BackendError::Protocol("non-integer text offset".into()))?;
            if off < start || off >= end {
                continue;
            }
            let v = v
                .as_f64()
                .ok_or_else(|| BackendError::Protocol("missing log-probability for a target token".into()))?;
            out.push(v);
        }
        if out.is_empty() {
            return Err(BackendError::Protocol("no target tokens in scored response".into()));
        }
        Ok(ScoreResponse::new(out))
    }
}
