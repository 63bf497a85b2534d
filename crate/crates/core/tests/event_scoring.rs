use journey::backend::{BackendError, FixtureBackend};
use journey::cohort::aggregate_weekly;
use journey::sampling::{LandmarkLabel, LandmarkTask, TaskBundle};
use journey::scoring::{assess_event, ScoringError};
use journey::serializer::{render_prompt, render_target, ByteEstimate, SerializerConfig};

mod common;
use common::synthetic::synthetic_patient;

const LABELS: [LandmarkLabel; 3] = [
    LandmarkLabel::Occurred,
    LandmarkLabel::NotOccurred,
    LandmarkLabel::Censored,
];

fn bundle(horizon: u32, label: LandmarkLabel) -> TaskBundle {
    TaskBundle {
        patient_id: "synthetic".into(),
        split_week: 4,
        forecast: Vec::new(),
        buckets: Vec::new(),
        landmarks: vec![LandmarkTask {
            event: "death".into(),
            horizon,
            label,
        }],
    }
}

/// Records per-token log-probabilities for the three answers at `horizon`.
fn record_scores(fixtures: &FixtureBackend, horizon: u32, logprobs: [Vec<f64>; 3]) {
    let record = aggregate_weekly("synthetic", &synthetic_patient());
    let config = SerializerConfig::default();
    let prompt = render_prompt(&record, &bundle(horizon, LandmarkLabel::NotOccurred), &config, &ByteEstimate)
        .unwrap();
    let scores: Vec<(String, Vec<f64>)> = LABELS
        .iter()
        .zip(logprobs)
        .map(|(&l, lp)| (render_target(&bundle(horizon, l), &config), lp))
        .collect();
    fixtures.record(&prompt, &[], &scores).unwrap();
}

#[test]
fn equal_likelihoods_give_a_third() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = FixtureBackend::open(dir.path()).unwrap();
    // different lengths, same mean
    record_scores(&fixtures, 13, [vec![-1.0; 12], vec![-1.0, -1.0], vec![-0.5, -1.5, -1.0]]);
    let record = aggregate_weekly("synthetic", &synthetic_patient());
    let a = assess_event(&record, 4, "death", &[13], &fixtures, &SerializerConfig::default()).unwrap();
    let h = a.at(13).unwrap();
    assert_eq!(h.token_counts, [12, 2, 3]);
    for p in h.class_probs {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
    assert!((h.risk_score - 1.0 / 3.0).abs() < 1e-12);
    assert!((h.conditioned.unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn single_horizon_calibration_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = FixtureBackend::open(dir.path()).unwrap();
    record_scores(&fixtures, 26, [vec![-0.3], vec![-1.1, -0.9], vec![-4.0]]);
    let record = aggregate_weekly("synthetic", &synthetic_patient());
    let a = assess_event(&record, 4, "death", &[26], &fixtures, &SerializerConfig::default()).unwrap();
    let h = a.at(26).unwrap();
    assert_eq!(h.calibrated, h.conditioned);
}

#[test]
fn decreasing_horizons_are_pooled() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = FixtureBackend::open(dir.path()).unwrap();
    record_scores(&fixtures, 26, [vec![-0.2], vec![-1.0], vec![-3.0]]);
    record_scores(&fixtures, 52, [vec![-1.0], vec![-0.2], vec![-3.0]]);
    let record = aggregate_weekly("synthetic", &synthetic_patient());
    let a = assess_event(&record, 4, "death", &[52, 26], &fixtures, &SerializerConfig::default()).unwrap();
    let (h26, h52) = (a.at(26).unwrap(), a.at(52).unwrap());
    assert_eq!(a.horizons[0].horizon, 26);
    assert!(h26.conditioned.unwrap() > h52.conditioned.unwrap());
    let pooled = (h26.conditioned.unwrap() + h52.conditioned.unwrap()) / 2.0;
    assert!((h26.calibrated.unwrap() - pooled).abs() < 1e-12);
    assert!((h52.calibrated.unwrap() - pooled).abs() < 1e-12);
}

#[test]
fn missing_fixture_is_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = FixtureBackend::open(dir.path()).unwrap();
    let record = aggregate_weekly("synthetic", &synthetic_patient());
    let err = assess_event(&record, 4, "death", &[13], &fixtures, &SerializerConfig::default()).unwrap_err();
    match err {
        ScoringError::Backend { horizon, label, source, .. } => {
            assert_eq!(horizon, 13);
            assert_eq!(label, LandmarkLabel::Occurred.as_str());
            assert!(matches!(source, BackendError::FixtureMiss { .. }));
        }
        other => panic!("unexpected error {other}"),
    }
}
