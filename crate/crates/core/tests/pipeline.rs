use std::collections::BTreeMap;

use journey::backend::{Backend, GenerationRequest, MockBackend};
use journey::cohort::{
    aggregate_weekly, ingest_event_log, write_event_log, CohortOptions, CohortStore, Domain,
    EventValue, Partition, RawEvent,
};
use journey::metrics::{aggregated_mase, ForecastPoint};
use journey::par::Executor;
use journey::rng;
use journey::sampling::{
    build_bundles, sample_split_times, ForecastTarget, LandmarkLabel, LandmarkTask, SplitConfig,
    TaskBundle, TaskSelection,
};
use journey::serializer::{
    average_completions, parse_event_answer, parse_forecast_completion, render_pair,
    render_target, ByteEstimate, SerializerConfig,
};
use journey::simulator::{simulate_cohort, SimConfig};
use proptest::prelude::*;

fn small_sim(n: usize) -> SimConfig {
    SimConfig {
        n_patients: n,
        n_variables: 4,
        max_weeks: 60,
        seed: 11,
        ..SimConfig::default()
    }
}

fn store_from(config: &SimConfig) -> CohortStore {
    let sim = simulate_cohort(config, &Executor::sequential()).unwrap();
    let mut csv = Vec::new();
    write_event_log(&sim.events, &mut csv).unwrap();
    let report = ingest_event_log(csv.as_slice()).unwrap();
    assert_eq!(report.malformed, 0);
    assert_eq!(report.event_count(), sim.events.len());
    let options = CohortOptions {
        min_observations: 10,
        ..CohortOptions::default()
    };
    CohortStore::build(&report.patients, &options).unwrap()
}

#[test]
fn cohort_store_round_trips() {
    let store = store_from(&small_sim(60));
    let mut buf = Vec::new();
    store.write_jsonl(&mut buf).unwrap();
    let back = CohortStore::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, store);
}

#[test]
fn copy_forward_mock_gives_unit_mase_end_to_end() {
    let store = store_from(&small_sim(120));
    let split = SplitConfig::default();
    let serializer = SerializerConfig::default();
    let mock = MockBackend::copy_forward();
    let mut points = Vec::new();
    for record in store.records.values() {
        let bundles = build_bundles(
            record,
            &store.stats,
            &split,
            TaskSelection::default(),
            store.global_cutoff_week,
            3,
        )
        .unwrap();
        for bundle in bundles {
            let vars = bundle.forecast_variables();
            if vars.is_empty() {
                continue;
            }
            let pair = render_pair(record, &bundle, &serializer, &ByteEstimate).unwrap();
            let completions = mock.generate(&GenerationRequest::new(pair.prompt.clone(), 3)).unwrap();
            let decoded: Vec<_> = completions
                .iter()
                .map(|c| parse_forecast_completion(c, &vars, bundle.split_week))
                .collect();
            let mean = average_completions(&decoded, &vars);
            assert_eq!(mean.parse_errors, 0);
            for target in &bundle.forecast {
                let (_, last) = record.last_value_until(&target.variable, bundle.split_week).unwrap();
                for (&offset, &truth) in &target.values {
                    points.push(ForecastPoint {
                        patient_id: record.patient_id.clone(),
                        split_week: bundle.split_week,
                        group: "all".into(),
                        variable: target.variable.clone(),
                        offset,
                        truth,
                        prediction: mean.get(&target.variable, offset),
                        last,
                    });
                }
            }
        }
    }
    assert!(!points.is_empty());
    let mut evaluated = 0;
    for var in store.stats.variables.keys() {
        let r = aggregated_mase(&points, var, Some(&store.stats));
        if let Some(m) = r.mase {
            assert_eq!(r.missing_predictions, 0);
            assert!((m - 1.0).abs() <= 1e-12, "{var}: {m}");
            evaluated += 1;
        }
    }
    assert!(evaluated > 0);
}

#[test]
fn bundles_do_not_depend_on_job_count() {
    let store = store_from(&small_sim(80));
    let records: Vec<_> = store.records.values().collect();
    let build = |jobs: usize| {
        Executor::new(jobs).map(&records, |r| {
            build_bundles(
                r,
                &store.stats,
                &SplitConfig::default(),
                TaskSelection::default(),
                store.global_cutoff_week,
                5,
            )
            .unwrap()
        })
    };
    let seq = build(1);
    assert_eq!(build(8), seq);
    assert_eq!(build(3), seq);
}

#[test]
fn partitions_cover_every_patient_once() {
    let store = store_from(&small_sim(100));
    let total: usize = [Partition::Train, Partition::Validation, Partition::Test]
        .into_iter()
        .map(|p| store.records_in(p).count())
        .sum();
    assert_eq!(total, store.records.len());
    assert_eq!(store.records_in(Partition::Train).count(), 80);
}

#[test]
fn ten_draws_on_one_line_give_at_most_ten_splits() {
    let mut events = vec![RawEvent {
        patient_id: "P".into(),
        day: 0,
        domain: Domain::TherapyLine,
        name: "line of therapy".into(),
        value: EventValue::Categorical("docetaxel".into()),
    }];
    for w in 0..40 {
        events.push(RawEvent {
            patient_id: "P".into(),
            day: w * 7,
            domain: Domain::Lab,
            name: "hemoglobin".into(),
            value: EventValue::Numeric(12.0),
        });
    }
    let record = aggregate_weekly("P", &events);
    let config = SplitConfig {
        splits_per_line: 10,
        ..SplitConfig::default()
    };
    for seed in 0..50 {
        let mut r = rng::stream(seed, rng::STREAM_SPLIT, "P");
        let splits = sample_split_times(&record, &config, &mut r);
        assert!(!splits.is_empty() && splits.len() <= 10);
        assert!(splits.windows(2).all(|w| w[0] < w[1]));
        assert!(splits.iter().all(|&w| w <= config.split_window_weeks));
    }
}

fn bundle_strategy() -> impl Strategy<Value = TaskBundle> {
    let target = (
        "[a-z]{1,8}( [a-z0-9]{1,6})?",
        prop::collection::btree_map(1u32..=26, -1_000_000i64..1_000_000, 1..6),
    )
        .prop_map(|(variable, values)| ForecastTarget {
            variable,
            values: values.into_iter().map(|(k, v)| (k, v as f64 / 100.0)).collect(),
            censor_week: None,
        });
    let landmark = (1u32..=104, 0usize..3).prop_map(|(horizon, l)| LandmarkTask {
        event: "death".into(),
        horizon,
        label: LandmarkLabel::ALL[l],
    });
    (
        0u32..200,
        prop::collection::vec(target, 0..4),
        prop::collection::vec(landmark, 0..2),
    )
        .prop_map(|(split_week, forecast, landmarks)| {
            let mut seen = std::collections::BTreeSet::new();
            let forecast = forecast
                .into_iter()
                .filter(|t| seen.insert(t.variable.clone()))
                .collect();
            TaskBundle {
                patient_id: "P".into(),
                split_week,
                forecast,
                buckets: Vec::new(),
                landmarks,
            }
        })
}

proptest! {
    #[test]
    fn targets_parse_back_exactly(bundle in bundle_strategy()) {
        let config = SerializerConfig::default();
        let text = render_target(&bundle, &config);
        let vars = bundle.forecast_variables();
        let decoded = parse_forecast_completion(&text, &vars, bundle.split_week);
        prop_assert_eq!(decoded.parse_errors, 0);
        let expected: BTreeMap<String, BTreeMap<u32, f64>> = bundle
            .forecast
            .iter()
            .map(|f| (f.variable.clone(), f.values.clone()))
            .collect();
        prop_assert_eq!(decoded.values, expected);
        for l in &bundle.landmarks {
            prop_assert_eq!(parse_event_answer(&text, &l.event), Some(bundle.landmarks[0].label));
        }
    }
}
