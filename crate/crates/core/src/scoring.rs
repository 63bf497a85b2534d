//! Event risk from target log-likelihoods.
//!
//! Each of the three canonical event answers is scored by the backend. The
//! length-normalized log-likelihoods are softmaxed into class probabilities,
//! the `occurred` probability is the risk score, and probabilities conditioned
//! on a known outcome are made monotone across horizons with pool adjacent
//! violators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ScoreRequest};
use crate::cohort::PatientRecord;
use crate::sampling::{LandmarkLabel, LandmarkTask, TaskBundle};
use crate::serializer::{render_prompt, render_target, SerializeError, SerializerConfig};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("cannot normalize an empty log-probability list")]
    EmptyLogprobs,
    #[error("scoring `{event}` at horizon {horizon} ({label}): {source}")]
    Backend {
        event: String,
        horizon: u32,
        label: &'static str,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Serialize(#[from] SerializeError),
}

/// Mean of the target-token log-probabilities.
pub fn length_normalized_loglik(logprobs: &[f64]) -> Result<f64, ScoringError> {
    if logprobs.is_empty() {
        return Err(ScoringError::EmptyLogprobs);
    }
    Ok(logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

/// Softmax over `(occurred, not occurred, censored)` log-likelihoods.
pub fn class_probabilities(logliks: [f64; 3]) -> [f64; 3] {
    let max = logliks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logliks.map(|l| (l - max).exp());
    let total: f64 = exps.iter().sum();
    exps.map(|e| e / total)
}

pub fn risk_score(probs: [f64; 3]) -> f64 {
    probs[0]
}

/// `P(occurred) / (P(occurred) + P(not occurred))`; `None` when both are zero.
pub fn condition_probabilities(probs: [f64; 3]) -> Option<f64> {
    let denom = probs[0] + probs[1];
    (denom > 0.0).then(|| probs[0] / denom)
}

/// Weighted least-squares projection of `values` onto non-decreasing
/// sequences (pool adjacent violators). `weights` defaults to all ones.
pub fn pava_calibrate(values: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    // (weighted mean, total weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (i, &y) in values.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        blocks.push((y, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().expect("two blocks") = ((m1 * w1 + m2 * w2) / w, w, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// [`pava_calibrate`] over the present entries, leaving missing ones missing.
pub fn pava_with_missing(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let mut fitted = pava_calibrate(&present, None).into_iter();
    values
        .iter()
        .map(|v| v.and_then(|_| fitted.next()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRisk {
    pub horizon: u32,
    /// Target token counts, in `(occurred, not occurred, censored)` order.
    pub token_counts: [usize; 3],
    pub class_logliks: [f64; 3],
    pub class_probs: [f64; 3],
    pub risk_score: f64,
    pub conditioned: Option<f64>,
    pub calibrated: Option<f64>,
}

/// Risk of one event for one patient at one landmark, across horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub patient_id: String,
    pub split_week: u32,
    pub event: String,
    pub horizons: Vec<HorizonRisk>,
}

impl RiskAssessment {
    pub fn at(&self, horizon: u32) -> Option<&HorizonRisk> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }
}

const CLASS_ORDER: [LandmarkLabel; 3] = [
    LandmarkLabel::Occurred,
    LandmarkLabel::NotOccurred,
    LandmarkLabel::Censored,
];

/// Scores the three answers for `event` at each horizon and calibrates the
/// conditioned probabilities across horizons. Horizons are sorted ascending.
pub fn assess_event(
    record: &PatientRecord,
    split_week: u32,
    event: &str,
    horizons: &[u32],
    backend: &dyn Backend,
    config: &SerializerConfig,
) -> Result<RiskAssessment, ScoringError> {
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable();
    horizons.dedup();
    let mut out = Vec::with_capacity(horizons.len());
    for &horizon in &horizons {
        let mut bundle = TaskBundle {
            patient_id: record.patient_id.clone(),
            split_week,
            forecast: Vec::new(),
            buckets: Vec::new(),
            landmarks: vec![LandmarkTask {
                event: event.to_string(),
                horizon,
                label: LandmarkLabel::NotOccurred,
            }],
        };
        let prompt = render_prompt(record, &bundle, config, backend.token_counter())?;
        let mut logliks = [0.0; 3];
        let mut counts = [0; 3];
        for (k, label) in CLASS_ORDER.into_iter().enumerate() {
            bundle.landmarks[0].label = label;
            let request = ScoreRequest {
                prompt: prompt.clone(),
                target: render_target(&bundle, config),
            };
            let scored = backend
                .score_target(&request)
                .map_err(|source| ScoringError::Backend {
                    event: event.to_string(),
                    horizon,
                    label: label.as_str(),
                    source,
                })?;
            logliks[k] = length_normalized_loglik(&scored.target_token_logprobs)?;
            counts[k] = scored.token_count;
        }
        let probs = class_probabilities(logliks);
        out.push(HorizonRisk {
            horizon,
            token_counts: counts,
            class_logliks: logliks,
            class_probs: probs,
            risk_score: risk_score(probs),
            conditioned: condition_probabilities(probs),
            calibrated: None,
        });
    }
    let conditioned: Vec<Option<f64>> = out.iter().map(|h| h.conditioned).collect();
    for (h, y) in out.iter_mut().zip(pava_with_missing(&conditioned)) {
        h.calibrated = y;
    }
    Ok(RiskAssessment {
        patient_id: record.patient_id.clone(),
        split_week,
        event: event.to_string(),
        horizons: out,
    })
}
