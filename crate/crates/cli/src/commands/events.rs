use std::collections::BTreeMap;

use journey::backend::Backend;
use journey::cohort::{CohortStore, Domain, PatientRecord};
use journey::metrics::{brier_score, ipcw_cindex, CIndex, CIndexOptions, RiskTies, SurvivalPoint};
use journey::par::Executor;
use journey::rng;
use journey::sampling::{first_outcome, EventDefinition};
use journey::scoring::{assess_event, RiskAssessment};
use journey::simulator::PatientTruth;
use serde::{Deserialize, Serialize};

use super::{
    load_store, ASSESSMENTS_FILE, EVENTS_REPORT_FILE, SCORES_FILE, STREAM_RISK_RANDOM,
};
use crate::backend::{apply_flags, make_backend};
use crate::config::{PipelineConfig, RiskSource};
use crate::error::invalid;
use crate::run::{fmt_opt, read_jsonl, table, Run};
use crate::EventsArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScore {
    pub horizon: u32,
    /// Ranking score used for concordance.
    pub risk: f64,
    /// Probability of the event by the horizon, used for the Brier score.
    pub probability: f64,
}

/// Observed outcome and scores of one patient for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub patient_id: String,
    pub event: String,
    /// Landmark: the first line-of-therapy start.
    pub split_week: u32,
    /// Weeks from the landmark to the event or censoring.
    pub time: u32,
    pub observed: bool,
    pub horizons: Vec<HorizonScore>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonReport {
    pub horizon: u32,
    pub events_by_horizon: usize,
    pub cindex: Option<CIndex>,
    pub brier: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EventReport {
    pub event: String,
    pub risk_source: RiskSource,
    pub patients: usize,
    pub events: usize,
    pub horizons: Vec<HorizonReport>,
    pub mean_cindex: Option<f64>,
}

enum Scorer<'a> {
    Model(&'a dyn Backend),
    Truth(BTreeMap<String, PatientTruth>),
    Random(u64),
}

fn truth_hazard(truth: &PatientTruth, def: &EventDefinition) -> anyhow::Result<f64> {
    match def.domain {
        Domain::Mortality => Ok(truth.death_hazard),
        Domain::Progression => Ok(truth.progression_hazard),
        _ => Err(invalid(format!(
            "the truth file has no hazard for event `{}`",
            def.name
        ))),
    }
}

fn score_patient(
    record: &PatientRecord,
    def: &EventDefinition,
    store: &CohortStore,
    config: &PipelineConfig,
    scorer: &Scorer,
) -> anyhow::Result<Option<(ScoreRecord, Option<RiskAssessment>)>> {
    if !def.applies_to(record.indication()) {
        return Ok(None);
    }
    let Some(&landmark) = record.therapy_line_starts().first() else {
        return Ok(None);
    };
    let outcome = first_outcome(
        record,
        landmark,
        def,
        store.global_cutoff_week,
        config.split.tie_policy,
    );
    let horizons = &config.evaluation.horizons;
    let (scores, assessment) = match scorer {
        Scorer::Model(backend) => {
            let a = assess_event(record, landmark, &def.name, horizons, *backend, &config.serializer)?;
            let scores = a
                .horizons
                .iter()
                .map(|h| HorizonScore {
                    horizon: h.horizon,
                    risk: h.risk_score,
                    probability: h.calibrated.unwrap_or(h.risk_score),
                })
                .collect();
            (scores, Some(a))
        }
        Scorer::Truth(truth) => {
            let t = truth.get(&record.patient_id).ok_or_else(|| {
                invalid(format!("patient {} is missing from the truth file", record.patient_id))
            })?;
            let h = truth_hazard(t, def)?;
            let scores = horizons
                .iter()
                .map(|&tau| HorizonScore {
                    horizon: tau,
                    risk: h,
                    probability: 1.0 - (1.0 - h).powi(tau as i32),
                })
                .collect();
            (scores, None)
        }
        Scorer::Random(seed) => {
            let bits = rng::derive_u64(
                *seed,
                STREAM_RISK_RANDOM,
                &format!("{}/{}", record.patient_id, def.name),
            );
            let u = (bits >> 11) as f64 / (1u64 << 53) as f64;
            let scores = horizons
                .iter()
                .map(|&tau| HorizonScore {
                    horizon: tau,
                    risk: u,
                    probability: u,
                })
                .collect();
            (scores, None)
        }
    };
    let mut scores: Vec<HorizonScore> = scores;
    scores.sort_by_key(|s| s.horizon);
    Ok(Some((
        ScoreRecord {
            patient_id: record.patient_id.clone(),
            event: def.name.clone(),
            split_week: landmark,
            time: outcome.weeks,
            observed: outcome.event,
            horizons: scores,
        },
        assessment,
    )))
}

/// C-index and Brier score per horizon for one event.
pub fn event_report(event: &str, source: RiskSource, records: &[ScoreRecord], horizons: &[u32]) -> EventReport {
    let mut per_horizon = Vec::new();
    for &tau in horizons {
        let mut points = Vec::new();
        let mut probs = Vec::new();
        for r in records {
            if let Some(s) = r.horizons.iter().find(|s| s.horizon == tau) {
                points.push(SurvivalPoint {
                    time: r.time as f64,
                    event: r.observed,
                    risk: s.risk,
                });
                probs.push(s.probability);
            }
        }
        let options = CIndexOptions {
            ties: RiskTies::Half,
            horizon: Some(tau as f64),
        };
        per_horizon.push(HorizonReport {
            horizon: tau,
            events_by_horizon: points.iter().filter(|p| p.event && p.time <= tau as f64).count(),
            cindex: ipcw_cindex(&points, options),
            brier: brier_score(&points, &probs, tau as f64),
        });
    }
    let cs: Vec<f64> = per_horizon
        .iter()
        .filter_map(|h| h.cindex.as_ref().map(|c| c.value))
        .collect();
    EventReport {
        event: event.to_string(),
        risk_source: source,
        patients: records.len(),
        events: records.iter().filter(|r| r.observed).count(),
        horizons: per_horizon,
        mean_cindex: (!cs.is_empty()).then(|| cs.iter().sum::<f64>() / cs.len() as f64),
    }
}

pub fn evaluate_events(
    run: &mut Run,
    mut config: PipelineConfig,
    executor: &Executor,
    jobs: usize,
    args: &EventsArgs,
) -> anyhow::Result<()> {
    apply_flags(&mut config, &args.backend);
    let eval = &mut config.evaluation;
    if let Some(h) = &args.horizons {
        eval.horizons = h.0.clone();
    }
    if let Some(e) = &args.events {
        eval.events = e.clone();
    }
    if let Some(p) = args.partition {
        eval.partition = p;
    }
    if let Some(r) = args.risk {
        eval.risk = r;
    }
    eval.horizons.sort_unstable();
    eval.horizons.dedup();
    eval.validate()?;
    let definitions: Vec<EventDefinition> = config
        .evaluation
        .events
        .iter()
        .map(|name| {
            config
                .split
                .event(name)
                .cloned()
                .ok_or_else(|| invalid(format!("event `{name}` is not defined in the split configuration")))
        })
        .collect::<anyhow::Result<_>>()?;
    run.config(&serde_json::json!({
        "evaluation": &config.evaluation,
        "events": &definitions,
        "tie_policy": config.split.tie_policy,
        "serializer": &config.serializer,
    }));
    run.input("cohort", &args.cohort);
    run.prepare()?;

    run.stage("load");
    let store = load_store(&args.cohort)?;
    let backend;
    let scorer = match config.evaluation.risk {
        RiskSource::Model => {
            run.streams(&[journey::rng::STREAM_MOCK_NOISE]);
            backend = make_backend(&config, &store, jobs)?;
            Scorer::Model(backend.as_ref())
        }
        RiskSource::Truth => {
            let path = args
                .truth
                .as_ref()
                .ok_or_else(|| invalid("--risk truth needs --truth <file>"))?;
            run.input("truth", path);
            let (rows, errors) = read_jsonl::<PatientTruth>(path)?;
            if let Some(e) = errors.first() {
                return Err(invalid(format!("truth file line {}: {}", e.line, e.reason)));
            }
            Scorer::Truth(rows.into_iter().map(|(_, t)| (t.patient_id.clone(), t)).collect())
        }
        RiskSource::Random => {
            run.streams(&[STREAM_RISK_RANDOM]);
            Scorer::Random(config.seed)
        }
    };
    let records: Vec<&PatientRecord> = store.records_in(config.evaluation.partition).collect();

    run.stage("score");
    let mut all_scores = Vec::new();
    let mut assessments = Vec::new();
    let mut reports = Vec::new();
    for def in &definitions {
        let results = executor.try_map(&records, |r| score_patient(r, def, &store, &config, &scorer))?;
        let mut scores = Vec::new();
        for (s, a) in results.into_iter().flatten() {
            scores.push(s);
            assessments.extend(a);
        }
        reports.push(event_report(&def.name, config.evaluation.risk, &scores, &config.evaluation.horizons));
        all_scores.extend(scores);
    }

    run.stage("write");
    run.write_jsonl(SCORES_FILE, &all_scores)?;
    if config.evaluation.risk == RiskSource::Model {
        run.write_jsonl(ASSESSMENTS_FILE, &assessments)?;
    }
    run.write_json(EVENTS_REPORT_FILE, &reports)?;
    run.count("patients", records.len());
    run.count("scored", all_scores.len());
    run.count("assessments", assessments.len());
    run.count("observed_events", all_scores.iter().filter(|s| s.observed).count());

    let mut rows = Vec::new();
    for rep in &reports {
        for h in &rep.horizons {
            rows.push(vec![
                rep.event.clone(),
                h.horizon.to_string(),
                h.events_by_horizon.to_string(),
                h.cindex.as_ref().map_or(0, |c| c.comparable_pairs).to_string(),
                fmt_opt(h.cindex.as_ref().map(|c| c.value), 3),
                fmt_opt(h.brier, 3),
            ]);
        }
    }
    let mut text = table(&["event", "horizon", "events", "pairs", "C-index", "Brier"], &rows);
    for rep in &reports {
        text.push_str(&format!(
            "\n{}: {} patients, {} observed events, mean C-index {}\n",
            rep.event,
            rep.patients,
            rep.events,
            fmt_opt(rep.mean_cindex, 3)
        ));
    }
    run.summary(&text)
}
