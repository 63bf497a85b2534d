//! The worked synthetic patient, rendered and compared byte-for-byte against
//! stored files. Set `JOURNEY_BLESS=1` to rewrite the files after an
//! intentional format change.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use journey::cohort::aggregate_weekly;
use journey::serializer::{parse_forecast_completion, render_pair, ByteEstimate, SerializerConfig};

mod common;
use common::synthetic::{synthetic_bundle, synthetic_patient};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("JOURNEY_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert!(
        expected == actual,
        "{name} differs from the golden file\n--- expected\n{expected}\n--- actual\n{actual}"
    );
}

fn rendered() -> journey::PromptPair {
    let record = aggregate_weekly("synthetic", &synthetic_patient());
    render_pair(&record, &synthetic_bundle(), &SerializerConfig::default(), &ByteEstimate).unwrap()
}

#[test]
fn synthetic_patient_matches_golden_files() {
    let pair = rendered();
    check_golden("synthetic_prompt.txt", &pair.prompt);
    check_golden("synthetic_target.txt", &pair.target);
}

#[test]
fn documented_template_strings_appear_verbatim() {
    let pair = rendered();
    let prompt = &pair.prompt;
    for needle in [
        "Starting with demographic data:\n\tPatient gender is male,\n\tage of patient is 77 years.\n",
        "On the first visit, the patient experienced the following: \n",
        "\n2 weeks later, the patient visited and experienced the following: \n",
        "\n1 weeks later, the patient visited and experienced the following: \n",
        "\tmetastasis Pleura is diagnosed",
        "Here we repeat the last observed values of each genetic event in the input data:\n\n0 weeks later, the patient visited and experienced the following: \n",
        "The most recent line of therapy:\n\tPembrolizumab\n",
        "The last values of the variables in the input data are:\n\thematocrit - 20570-8 was 33.6\n\tcreatinine - 2160-0 was 0.6\n\tplatelets - 26515-7 was 257\n",
        "You will now have multiple tasks to complete. Please answer for each task in the same order as they are presented. Before every response state the task nr, e.g. 'Task 2:'.\n",
        "Task 1 is forecasting:\nYour task is to predict the future values of the following variables for each cumulative week starting from the last visit:\n\n\thematocrit - 20570-8 the future weeks 1, 4, 7, 10\n\tcreatinine - 2160-0 the future weeks 1, 4, 7, 10\n\tplatelets - 26515-7 the future weeks 1, 4, 7, 10\n",
        "Task 2 is time to event prediction:\nYour task is to predict whether the following event was censored 1 weeks from the last clinical visit and whether the event occurred or not: death.\n",
        "Please provide your prediction in the following format: 'Here is the prediction: the event (<name of event>) was [not] censored and [did not occur]/[occurred].'",
    ] {
        assert!(prompt.contains(needle), "prompt lacks {needle:?}\n{prompt}");
    }
    assert!(prompt.contains("\tbody weight is 63.46"));

    let target = &pair.target;
    assert!(target.starts_with(
        "Task 1 is forecasting:\n1 weeks later, the patient visited and experienced the following: \n"
    ));
    assert!(target.contains("\n3 weeks later, the patient visited and experienced the following: \n"));
    assert!(target.ends_with(
        "Task 2 is time to event prediction:\nHere is the prediction: the event (death) was not censored and did not occur.\n"
    ));
}

#[test]
fn golden_target_parses_back() {
    let pair = rendered();
    let bundle = synthetic_bundle();
    let vars = bundle.forecast_variables();
    let decoded = parse_forecast_completion(&pair.target, &vars, bundle.split_week);
    assert_eq!(decoded.parse_errors, 0);
    let expected: BTreeMap<String, BTreeMap<u32, f64>> = bundle
        .forecast
        .iter()
        .map(|f| (f.variable.clone(), f.values.clone()))
        .collect();
    assert_eq!(decoded.values, expected);
}
