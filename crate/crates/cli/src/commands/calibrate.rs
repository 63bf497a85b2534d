use std::collections::BTreeMap;

use journey::scoring::{class_probabilities, condition_probabilities, pava_with_missing, RiskAssessment};
use serde::{Deserialize, Serialize};

use super::{CALIBRATED_FILE, ERRORS_FILE};
use crate::config::PipelineConfig;
use crate::error::invalid;
use crate::run::{fmt_opt, read_jsonl, table, Run};
use crate::CalibrateArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifPoint {
    pub horizon: u32,
    /// Non-decreasing in the horizon; missing where the model put no mass on
    /// either the occurred or the not-occurred answer.
    pub probability: Option<f64>,
}

/// Monotone cumulative incidence for one patient and event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifRecord {
    pub patient_id: String,
    pub split_week: u32,
    pub event: String,
    pub cif: Vec<CifPoint>,
}

/// Recomputes class probabilities from the stored log-likelihoods, conditions
/// on a known outcome and projects onto non-decreasing sequences.
pub fn calibrate_assessment(a: &RiskAssessment) -> CifRecord {
    let mut horizons = a.horizons.clone();
    horizons.sort_by_key(|h| h.horizon);
    let conditioned: Vec<Option<f64>> = horizons
        .iter()
        .map(|h| condition_probabilities(class_probabilities(h.class_logliks)))
        .collect();
    CifRecord {
        patient_id: a.patient_id.clone(),
        split_week: a.split_week,
        event: a.event.clone(),
        cif: horizons
            .iter()
            .zip(pava_with_missing(&conditioned))
            .map(|(h, p)| CifPoint {
                horizon: h.horizon,
                probability: p,
            })
            .collect(),
    }
}

pub fn calibrate(run: &mut Run, _config: PipelineConfig, args: &CalibrateArgs) -> anyhow::Result<()> {
    run.input("assessments", &args.assessments);
    run.prepare()?;

    run.stage("calibrate");
    let (rows, errors) = read_jsonl::<RiskAssessment>(&args.assessments)?;
    if rows.is_empty() {
        return Err(invalid(format!(
            "{} holds no readable assessments ({} bad lines)",
            args.assessments.display(),
            errors.len()
        )));
    }
    let out: Vec<CifRecord> = rows.iter().map(|(_, a)| calibrate_assessment(a)).collect();

    run.stage("write");
    run.write_jsonl(CALIBRATED_FILE, &out)?;
    run.write_jsonl(ERRORS_FILE, &errors)?;
    run.count("assessments", out.len());
    run.count("corrupt_rows", errors.len());

    let mut by_horizon: BTreeMap<(&str, u32), (f64, usize, usize)> = BTreeMap::new();
    for rec in &out {
        for p in &rec.cif {
            let e = by_horizon.entry((&rec.event, p.horizon)).or_default();
            match p.probability {
                Some(x) => {
                    e.0 += x;
                    e.1 += 1;
                }
                None => e.2 += 1,
            }
        }
    }
    let table_rows: Vec<Vec<String>> = by_horizon
        .iter()
        .map(|((event, h), (sum, n, missing))| {
            vec![
                event.to_string(),
                h.to_string(),
                n.to_string(),
                missing.to_string(),
                fmt_opt((*n > 0).then(|| sum / *n as f64), 3),
            ]
        })
        .collect();
    let mut text = table(&["event", "horizon", "patients", "missing", "mean CIF"], &table_rows);
    text.push_str(&format!("\n{} assessments, {} unreadable lines\n", out.len(), errors.len()));
    run.summary(&text)
}
