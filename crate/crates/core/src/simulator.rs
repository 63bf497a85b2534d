//! Synthetic cohorts with known dynamics.
//!
//! Biomarkers follow a stationary AR(1) process `x[t+1] = mu + phi (x[t] - mu) + e`
//! observed on visit weeks with random missingness. Lines of therapy, progression,
//! metastasis, death and loss to follow-up are drawn week by week from constant
//! hazards; the death and progression hazards get a per-patient hazard ratio
//! `exp(beta * z)` with a latent frailty `z ~ N(0, 1)`. The per-patient hazards
//! are returned alongside the event log as ground truth.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Domain, EventValue, RawEvent};
use crate::par::Executor;
use crate::rng::{self, StreamRng};

#[derive(Debug, Error, PartialEq)]
#[error("invalid simulation config: {field} {reason}")]
pub struct SimError {
    pub field: &'static str,
    pub reason: String,
}

/// One simulated biomarker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub mean: f64,
    pub phi: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_patients: usize,
    pub n_variables: usize,
    /// Mean of the first variable; variable `i` has mean `ar_mean + 10 i`.
    pub ar_mean: f64,
    pub ar_coefficient: f64,
    /// Innovation sd of the first variable; variable `i` uses `noise_sd (1 + i / 4)`.
    pub noise_sd: f64,
    /// Explicit biomarkers; when non-empty they replace the generated ones.
    pub variables: Vec<VariableSpec>,
    /// Chance that a week after week 0 has a visit.
    pub visit_probability: f64,
    /// Chance that a biomarker is missing at a visit.
    pub missingness: f64,
    pub therapy_line_hazard: f64,
    pub death_hazard: f64,
    pub progression_hazard: f64,
    pub metastasis_hazard: f64,
    pub dropout_hazard: f64,
    /// Log hazard ratio per unit of latent frailty for death and progression.
    pub frailty_beta: f64,
    /// Shift of the first biomarker's mean, in innovation sds per unit of
    /// frailty, so that it carries prognostic signal.
    pub biomarker_link: f64,
    pub max_weeks: u32,
    pub indications: Vec<String>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_patients: 1000,
            n_variables: 10,
            ar_mean: 50.0,
            ar_coefficient: 0.8,
            noise_sd: 2.0,
            variables: Vec::new(),
            visit_probability: 0.6,
            missingness: 0.2,
            therapy_line_hazard: 0.02,
            death_hazard: 0.005,
            progression_hazard: 0.01,
            metastasis_hazard: 0.005,
            dropout_hazard: 0.002,
            frailty_beta: 1.0,
            biomarker_link: 0.0,
            max_weeks: 156,
            indications: vec!["nsclc".into(), "crc".into(), "breast".into()],
            seed: 42,
        }
    }
}

fn probability(field: &'static str, p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError { field, reason: format!("must be in [0, 1], got {p}") })
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_patients == 0 {
            return Err(SimError { field: "n_patients", reason: "must be at least 1".into() });
        }
        if self.variables.is_empty() && self.ar_coefficient.abs() >= 1.0 {
            return Err(SimError {
                field: "ar_coefficient",
                reason: format!("must satisfy |phi| < 1, got {}", self.ar_coefficient),
            });
        }
        for v in &self.variables {
            if v.phi.abs() >= 1.0 {
                return Err(SimError {
                    field: "variables.phi",
                    reason: format!("{}: must satisfy |phi| < 1, got {}", v.name, v.phi),
                });
            }
            if !(v.noise_sd >= 0.0) {
                return Err(SimError { field: "variables.noise_sd", reason: format!("{}: must be >= 0", v.name) });
            }
        }
        if !(self.noise_sd >= 0.0) {
            return Err(SimError { field: "noise_sd", reason: "must be >= 0".into() });
        }
        probability("visit_probability", self.visit_probability)?;
        probability("missingness", self.missingness)?;
        probability("therapy_line_hazard", self.therapy_line_hazard)?;
        probability("death_hazard", self.death_hazard)?;
        probability("progression_hazard", self.progression_hazard)?;
        probability("metastasis_hazard", self.metastasis_hazard)?;
        probability("dropout_hazard", self.dropout_hazard)?;
        if !self.frailty_beta.is_finite() {
            return Err(SimError { field: "frailty_beta", reason: "must be finite".into() });
        }
        if self.indications.is_empty() {
            return Err(SimError { field: "indications", reason: "must not be empty".into() });
        }
        Ok(())
    }

    pub fn variable_specs(&self) -> Vec<VariableSpec> {
        if !self.variables.is_empty() {
            return self.variables.clone();
        }
        (0..self.n_variables)
            .map(|i| VariableSpec {
                name: format!("biomarker {:02}", i + 1),
                mean: self.ar_mean + 10.0 * i as f64,
                phi: self.ar_coefficient,
                noise_sd: self.noise_sd * (1.0 + i as f64 / 4.0),
            })
            .collect()
    }
}

/// Ground truth for one simulated patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub indication: String,
    pub frailty: f64,
    pub death_hazard: f64,
    pub progression_hazard: f64,
    pub death_week: Option<u32>,
    pub progression_week: Option<u32>,
    pub dropout_week: Option<u32>,
    pub therapy_line_weeks: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub events: Vec<RawEvent>,
    pub truth: Vec<PatientTruth>,
}

const REGIMENS: [&str; 6] = [
    "carboplatin pemetrexed",
    "pembrolizumab",
    "docetaxel",
    "nivolumab",
    "capecitabine",
    "paclitaxel",
];

/// Rounds to two decimals so rendered values parse back exactly.
fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 { 0.0 } else { r }
}

fn simulate_patient(
    config: &SimConfig,
    specs: &[VariableSpec],
    patient_id: &str,
) -> (Vec<RawEvent>, PatientTruth) {
    let mut rng: StreamRng = rng::stream(config.seed, rng::STREAM_SIMULATION, patient_id);
    let mut events = Vec::new();
    let mut push = |rng: &mut StreamRng, week: u32, domain: Domain, name: &str, value: EventValue| {
        let day = if domain == Domain::Demographic { 0 } else { week * 7 + rng.random_range(0..7) };
        events.push(RawEvent {
            patient_id: patient_id.to_string(),
            day,
            domain,
            name: name.to_string(),
            value,
        });
    };

    let frailty: f64 = StandardNormal.sample(&mut rng);
    let scale = (config.frailty_beta * frailty).exp();
    // proportional hazards on the weekly scale: 1 - (1 - h)^scale
    let death_hazard = 1.0 - (1.0 - config.death_hazard).powf(scale);
    let progression_hazard = 1.0 - (1.0 - config.progression_hazard).powf(scale);
    let indication = config.indications[rng.random_range(0..config.indications.len())].clone();

    let gender = if rng.random_bool(0.5) { "male" } else { "female" };
    let age = rng.random_range(35..90);
    push(&mut rng, 0, Domain::Demographic, "Patient gender", EventValue::Categorical(gender.into()));
    push(&mut rng, 0, Domain::Demographic, "age of patient", EventValue::Categorical(format!("{age} years")));
    push(&mut rng, 0, Domain::Demographic, "indication", EventValue::Categorical(indication.clone()));
    for gene in ["KRAS", "TP53"] {
        let status = if rng.random_bool(0.3) { "mutated" } else { "wild type" };
        push(&mut rng, 0, Domain::Genetic, gene, EventValue::Categorical(status.into()));
    }

    let mut state: Vec<f64> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let shift = if i == 0 { config.biomarker_link * s.noise_sd * frailty } else { 0.0 };
            let sd = s.noise_sd / (1.0 - s.phi * s.phi).sqrt();
            let z: f64 = StandardNormal.sample(&mut rng);
            s.mean + shift + sd * z
        })
        .collect();
    let means: Vec<f64> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| s.mean + if i == 0 { config.biomarker_link * s.noise_sd * frailty } else { 0.0 })
        .collect();

    let mut line = 1;
    let mut therapy_line_weeks = vec![0];
    push(&mut rng, 0, Domain::TherapyLine, "line of therapy", EventValue::Categorical(REGIMENS[0].into()));
    let mut truth = PatientTruth {
        patient_id: patient_id.to_string(),
        indication,
        frailty,
        death_hazard,
        progression_hazard,
        death_week: None,
        progression_week: None,
        dropout_week: None,
        therapy_line_weeks: Vec::new(),
    };
    let mut metastasis = false;

    for week in 0..=config.max_weeks {
        if week > 0 {
            for (i, s) in specs.iter().enumerate() {
                let e = if s.noise_sd > 0.0 {
                    Normal::new(0.0, s.noise_sd).expect("sd > 0").sample(&mut rng)
                } else {
                    0.0
                };
                state[i] = means[i] + s.phi * (state[i] - means[i]) + e;
            }
            if rng.random_bool(death_hazard) {
                push(&mut rng, week, Domain::Mortality, "death", EventValue::Marker);
                truth.death_week = Some(week);
                break;
            }
            if rng.random_bool(config.dropout_hazard) {
                truth.dropout_week = Some(week);
                break;
            }
            if truth.progression_week.is_none() && rng.random_bool(progression_hazard) {
                push(&mut rng, week, Domain::Progression, "progression", EventValue::Marker);
                truth.progression_week = Some(week);
            }
            if !metastasis && rng.random_bool(config.metastasis_hazard) {
                push(&mut rng, week, Domain::Metastasis, "metastasis liver", EventValue::Marker);
                metastasis = true;
            }
            if rng.random_bool(config.therapy_line_hazard) {
                let regimen = REGIMENS[line % REGIMENS.len()];
                line += 1;
                push(&mut rng, week, Domain::TherapyLine, "line of therapy", EventValue::Categorical(regimen.into()));
                therapy_line_weeks.push(week);
            }
            if !rng.random_bool(config.visit_probability) {
                continue;
            }
        }
        for (i, s) in specs.iter().enumerate() {
            if rng.random_bool(config.missingness) {
                continue;
            }
            push(&mut rng, week, Domain::Lab, &s.name, EventValue::Numeric(round2(state[i])));
        }
    }
    truth.therapy_line_weeks = therapy_line_weeks;
    (events, truth)
}

pub fn patient_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(4);
    (1..=n).map(|i| format!("P{i:0width$}")).collect()
}

/// Simulates a cohort. Patients are independent and use their own random
/// streams, so the output does not depend on the executor.
pub fn simulate_cohort(config: &SimConfig, executor: &Executor) -> Result<Simulation, SimError> {
    config.validate()?;
    let specs = config.variable_specs();
    let ids = patient_ids(config.n_patients);
    let per_patient = executor.map(&ids, |id| simulate_patient(config, &specs, id));
    let mut events = Vec::new();
    let mut truth = Vec::with_capacity(per_patient.len());
    for (mut ev, t) in per_patient {
        ev.sort_by(|a, b| (a.day, a.domain, &a.name).cmp(&(b.day, b.domain, &b.name)));
        events.extend(ev);
        truth.push(t);
    }
    Ok(Simulation { events, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{aggregate_weekly, ingest_event_log, write_event_log};

    fn small() -> SimConfig {
        SimConfig { n_patients: 40, n_variables: 3, max_weeks: 60, ..SimConfig::default() }
    }

    #[test]
    fn same_seed_same_log() {
        let a = simulate_cohort(&small(), &Executor::sequential()).unwrap();
        let b = simulate_cohort(&small(), &Executor::new(4)).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_event_log(&a.events, &mut x).unwrap();
        write_event_log(&b.events, &mut y).unwrap();
        assert_eq!(x, y);
        let c = simulate_cohort(&SimConfig { seed: 7, ..small() }, &Executor::sequential()).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn constant_dynamics_without_noise() {
        let config = SimConfig { ar_coefficient: 0.0, noise_sd: 0.0, ..small() };
        let sim = simulate_cohort(&config, &Executor::sequential()).unwrap();
        let specs = config.variable_specs();
        for ev in sim.events.iter().filter(|e| e.domain == Domain::Lab) {
            let spec = specs.iter().find(|s| s.name == ev.name).unwrap();
            assert_eq!(ev.value, EventValue::Numeric(spec.mean));
        }
    }

    #[test]
    fn certain_death_ends_every_record_at_week_one() {
        let config = SimConfig { death_hazard: 1.0, ..small() };
        let sim = simulate_cohort(&config, &Executor::sequential()).unwrap();
        assert!(sim.truth.iter().all(|t| t.death_week == Some(1)));
        assert!(sim.events.iter().all(|e| e.day / 7 <= 1));
    }

    #[test]
    fn nothing_after_death_and_ingestion_is_clean() {
        let config = SimConfig { death_hazard: 0.02, ..small() };
        let sim = simulate_cohort(&config, &Executor::sequential()).unwrap();
        let mut buf = Vec::new();
        write_event_log(&sim.events, &mut buf).unwrap();
        let report = ingest_event_log(buf.as_slice()).unwrap();
        assert_eq!(report.malformed, 0);
        for (pid, events) in &report.patients {
            let record = aggregate_weekly(pid, events);
            if let Some(death) = sim.truth.iter().find(|t| &t.patient_id == pid).unwrap().death_week {
                assert_eq!(record.last_week(), Some(death));
            }
        }
    }

    #[test]
    fn constant_hazard_matches_geometric_incidence() {
        let config = SimConfig {
            n_patients: 4000,
            n_variables: 1,
            death_hazard: 0.02,
            frailty_beta: 0.0,
            dropout_hazard: 0.0,
            max_weeks: 30,
            ..SimConfig::default()
        };
        let sim = simulate_cohort(&config, &Executor::new(0)).unwrap();
        let h = 20;
        let observed = sim
            .truth
            .iter()
            .filter(|t| t.death_week.is_some_and(|w| w <= h))
            .count() as f64
            / config.n_patients as f64;
        let expected = 1.0 - (1.0 - 0.02f64).powi(h as i32);
        // binomial sd is about 0.0075 here
        assert!((observed - expected).abs() < 0.03, "{observed} vs {expected}");
    }

    #[test]
    fn invalid_config_names_the_field() {
        let err = simulate_cohort(&SimConfig { ar_coefficient: 1.0, ..small() }, &Executor::sequential())
            .unwrap_err();
        assert_eq!(err.field, "ar_coefficient");
        let err = simulate_cohort(&SimConfig { death_hazard: 1.5, ..small() }, &Executor::sequential())
            .unwrap_err();
        assert_eq!(err.field, "death_hazard");
    }
}
