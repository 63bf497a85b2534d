use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use super::{text_hash, Backend, BackendError, GenerationRequest, ScoreRequest, ScoreResponse};
use crate::rng::{self, StreamRng};
use crate::sampling::{BucketTarget, ForecastTarget, LandmarkLabel, LandmarkTask, TaskBundle};
use crate::serializer::{
    parse_prompt_tasks, render_target, PromptTask, SerializerConfig, TokenCounter,
    WhitespaceTokens,
};

/// What the mock predicts for each requested variable.
#[derive(Debug, Clone, PartialEq)]
pub enum MockStrategy {
    /// The last value shown in the prompt.
    CopyForward,
    /// A fixed value per variable; variables not in the map copy forward.
    Constant(BTreeMap<String, f64>),
}

/// Deterministic backend that answers from the prompt text alone. Forecasts
/// follow the strategy plus optional Gaussian noise `N(0, (s * sd_v)^2)`; every
/// event is answered as not occurring.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub strategy: MockStrategy,
    pub noise_scale: f64,
    pub std_devs: BTreeMap<String, f64>,
    pub seed: u64,
    pub serializer: SerializerConfig,
}

impl MockBackend {
    pub fn copy_forward() -> Self {
        MockBackend {
            strategy: MockStrategy::CopyForward,
            noise_scale: 0.0,
            std_devs: BTreeMap::new(),
            seed: 0,
            serializer: SerializerConfig {
                quintile_task_enabled: true,
                ..SerializerConfig::default()
            },
        }
    }

    pub fn with_noise(mut self, scale: f64, std_devs: BTreeMap<String, f64>, seed: u64) -> Self {
        self.noise_scale = scale;
        self.std_devs = std_devs;
        self.seed = seed;
        self
    }

    pub fn with_strategy(mut self, strategy: MockStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    fn base_value(&self, variable: &str, last: Option<f64>) -> Option<f64> {
        match &self.strategy {
            MockStrategy::Constant(map) => map.get(variable).copied().or(last),
            MockStrategy::CopyForward => last,
        }
    }

    /// The mock's answer to `prompt`, with noise drawn from `rng` if given.
    fn answer(&self, prompt: &str, mut rng: Option<&mut StreamRng>) -> String {
        let parsed = parse_prompt_tasks(prompt);
        let mut bundle = TaskBundle {
            patient_id: String::new(),
            split_week: 0,
            forecast: Vec::new(),
            buckets: Vec::new(),
            landmarks: Vec::new(),
        };
        for task in &parsed.tasks {
            match task {
                PromptTask::Forecast { variables, .. } => {
                    for (name, weeks) in variables {
                        let Some(base) = self.base_value(name, parsed.last_value(name)) else {
                            continue;
                        };
                        let sd = self.std_devs.get(name).copied().unwrap_or(0.0) * self.noise_scale;
                        let values = weeks
                            .iter()
                            .map(|&w| {
                                let noise = match (&mut rng, sd > 0.0) {
                                    (Some(r), true) => {
                                        Normal::new(0.0, sd).expect("positive sd").sample(*r)
                                    }
                                    _ => 0.0,
                                };
                                (w, base + noise)
                            })
                            .collect();
                        bundle.forecast.push(ForecastTarget {
                            variable: name.clone(),
                            values,
                            censor_week: None,
                        });
                    }
                }
                PromptTask::Buckets { variables, .. } => {
                    for (name, weeks) in variables {
                        bundle.buckets.push(BucketTarget {
                            variable: name.clone(),
                            buckets: weeks.iter().map(|&w| (w, 3)).collect(),
                        });
                    }
                }
                PromptTask::Event { event, horizon, .. } => bundle.landmarks.push(LandmarkTask {
                    event: event.clone(),
                    horizon: *horizon,
                    label: LandmarkLabel::NotOccurred,
                }),
                PromptTask::Other { .. } => {}
            }
        }
        render_target(&bundle, &self.serializer)
    }
}

fn token_mismatch(a: &str, b: &str) -> f64 {
    if a == b {
        return 0.0;
    }
    let num = |s: &str| s.trim_end_matches([',', '.']).parse::<f64>().ok();
    match (num(a), num(b)) {
        (Some(x), Some(y)) => (x - y).abs(),
        _ => 1.0,
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        request.validate()?;
        if self.noise_scale <= 0.0 {
            let text = self.answer(&request.prompt, None);
            return Ok(vec![text; request.num_samples]);
        }
        let seed = request.seed.unwrap_or(self.seed);
        let mut rng = rng::stream(seed, rng::STREAM_MOCK_NOISE, &text_hash(&request.prompt));
        Ok((0..request.num_samples)
            .map(|_| self.answer(&request.prompt, Some(&mut rng)))
            .collect())
    }

    /// Whitespace tokens of the target, each scored `-d` where `d` is its
    /// mismatch against the mock's own noise-free answer at the same position.
    fn score_target(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        if request.target.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty target".into()));
        }
        let own = self.answer(&request.prompt, None);
        let own: Vec<&str> = own.split_whitespace().collect();
        let logprobs = request
            .target
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| -own.get(i).map_or(1.0, |o| token_mismatch(tok, o)))
            .collect();
        Ok(ScoreResponse::new(logprobs))
    }

    fn token_counter(&self) -> &dyn TokenCounter {
        &WhitespaceTokens
    }
}
