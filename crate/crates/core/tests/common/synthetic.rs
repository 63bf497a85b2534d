#![allow(dead_code)]

//! The worked synthetic patient shared by the golden-file tests.

use journey::cohort::{Domain, EventValue, RawEvent};
use journey::sampling::{ForecastTarget, LandmarkLabel, LandmarkTask, TaskBundle};

fn ev(week: u32, domain: Domain, name: &str, value: EventValue) -> RawEvent {
    RawEvent {
        patient_id: "synthetic".into(),
        day: week * 7,
        domain,
        name: name.into(),
        value,
    }
}

fn num(x: f64) -> EventValue {
    EventValue::Numeric(x)
}

fn text(s: &str) -> EventValue {
    EventValue::Categorical(s.into())
}

pub const HCT: &str = "hematocrit - 20570-8";
pub const CREA: &str = "creatinine - 2160-0";
pub const PLT: &str = "platelets - 26515-7";

pub fn synthetic_patient() -> Vec<RawEvent> {
    use Domain::*;
    vec![
        ev(0, Demographic, "Patient gender", text("male")),
        ev(0, Demographic, "age of patient", text("77 years")),
        ev(0, Diagnosis, "advanced cancer diagnosis", text("non small cell lung cancer")),
        ev(0, Diagnosis, "initial cancer diagnosis", text("non small cell lung cancer")),
        ev(0, Metastasis, "metastasis Pleura", EventValue::Marker),
        ev(2, Genetic, "CHEK2 short variant", text("frameshift, likely truncation")),
        ev(3, Ecog, "ECOG", num(2.0)),
        ev(3, Lab, "alanine aminotransferase - 1742-6", num(9.0)),
        ev(3, Lab, "calcium - 17861-6", num(8.9)),
        ev(3, Lab, HCT, num(31.2)),
        ev(3, Lab, CREA, num(0.7)),
        ev(3, Lab, PLT, num(419.0)),
        ev(4, Diagnosis, "Other fatigue", EventValue::Marker),
        ev(4, Drug, "drug pembrolizumab", num(200.0)),
        ev(4, TherapyLine, "line of therapy", text("Pembrolizumab")),
        ev(4, Ecog, "ECOG", num(1.0)),
        ev(4, Vital, "body weight", num(63.45752)),
        ev(4, Lab, HCT, num(33.6)),
        ev(4, Lab, CREA, num(0.6)),
        ev(4, Lab, PLT, num(257.0)),
    ]
}

fn target(variable: &str, values: [f64; 4]) -> ForecastTarget {
    ForecastTarget {
        variable: variable.into(),
        values: [1, 4, 7, 10].into_iter().zip(values).collect(),
        censor_week: None,
    }
}

pub fn synthetic_bundle() -> TaskBundle {
    TaskBundle {
        patient_id: "synthetic".into(),
        split_week: 4,
        forecast: vec![
            target(HCT, [36.1, 39.0, 36.6, 35.7]),
            target(CREA, [0.65, 0.6, 0.63, 0.61]),
            target(PLT, [260.0, 257.0, 271.0, 257.0]),
        ],
        buckets: Vec::new(),
        landmarks: vec![LandmarkTask {
            event: "death".into(),
            horizon: 1,
            label: LandmarkLabel::NotOccurred,
        }],
    }
}
