//! Trajectory splits, forecast-variable sampling, censored forecast targets and
//! landmark-event tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Domain, PatientRecord, VariableStats};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("forecast variable pool is empty")]
    EmptyPool,
    #[error("no landmark events are defined for indication {0:?}")]
    NoEvents(Option<String>),
    #[error("invalid split configuration: {0}")]
    InvalidConfig(String),
}

/// How a clinical event is recognised in a patient's visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDefinition {
    /// Name used in prompts, e.g. `death`.
    pub name: String,
    pub domain: Domain,
    /// Restrict to one item name within the domain.
    #[serde(default)]
    pub item: Option<String>,
    /// Indications for which the event is predicted; `None` means all.
    #[serde(default)]
    pub indications: Option<Vec<String>>,
}

impl EventDefinition {
    pub fn new(name: &str, domain: Domain) -> Self {
        EventDefinition {
            name: name.to_string(),
            domain,
            item: None,
            indications: None,
        }
    }

    fn matches(&self, name: &str, domain: Domain) -> bool {
        domain == self.domain && self.item.as_deref().is_none_or(|i| i == name)
    }

    fn occurs_in(&self, record: &PatientRecord, week: u32) -> bool {
        record
            .visit_at(week)
            .is_some_and(|v| v.items.iter().any(|(n, i)| self.matches(n, i.domain)))
    }

    pub fn applies_to(&self, indication: Option<&str>) -> bool {
        match (&self.indications, indication) {
            (None, _) => true,
            (Some(list), Some(ind)) => list.iter().any(|x| x == ind),
            (Some(_), None) => false,
        }
    }

    /// A new line of therapy is the event itself, not a censoring event.
    fn censored_by_therapy_switch(&self) -> bool {
        self.domain != Domain::TherapyLine
    }
}

pub fn default_events() -> Vec<EventDefinition> {
    vec![
        EventDefinition::new("death", Domain::Mortality),
        EventDefinition::new("progression", Domain::Progression),
        EventDefinition::new("next line of therapy", Domain::TherapyLine),
        EventDefinition::new("metastasis", Domain::Metastasis),
    ]
}

/// Resolution of an event and a censoring event in the same week.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    #[default]
    EventFirst,
    CensorFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Split draws per line of therapy (with replacement, then deduplicated).
    pub splits_per_line: usize,
    /// Visits up to this many weeks after a line start are split candidates.
    pub split_window_weeks: u32,
    pub forecast_horizon_weeks: u32,
    pub event_horizon_max_weeks: u32,
    pub forecast_vars_per_sample: usize,
    pub landmarks_per_split: usize,
    /// Independent forecast-variable subsets drawn per split.
    pub subset_passes: usize,
    pub tie_policy: TiePolicy,
    pub events: Vec<EventDefinition>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            splits_per_line: 10,
            split_window_weeks: 12,
            forecast_horizon_weeks: 13,
            event_horizon_max_weeks: 104,
            forecast_vars_per_sample: 3,
            landmarks_per_split: 1,
            subset_passes: 1,
            tie_policy: TiePolicy::EventFirst,
            events: default_events(),
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |m: &str| Err(SamplingError::InvalidConfig(m.to_string()));
        if self.splits_per_line == 0 {
            return bad("splits_per_line must be positive");
        }
        if self.forecast_horizon_weeks == 0 {
            return bad("forecast_horizon_weeks must be positive");
        }
        if self.event_horizon_max_weeks == 0 {
            return bad("event_horizon_max_weeks must be positive");
        }
        if self.forecast_vars_per_sample == 0 {
            return bad("forecast_vars_per_sample must be positive");
        }
        if self.subset_passes == 0 {
            return bad("subset_passes must be positive");
        }
        Ok(())
    }

    pub fn event(&self, name: &str) -> Option<&EventDefinition> {
        self.events.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkLabel {
    Occurred,
    NotOccurred,
    Censored,
}

impl LandmarkLabel {
    pub const ALL: [LandmarkLabel; 3] = [
        LandmarkLabel::Occurred,
        LandmarkLabel::NotOccurred,
        LandmarkLabel::Censored,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LandmarkLabel::Occurred => "occurred",
            LandmarkLabel::NotOccurred => "not_occurred",
            LandmarkLabel::Censored => "censored",
        }
    }
}

impl fmt::Display for LandmarkLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LandmarkLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LandmarkLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown label `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTarget {
    pub variable: String,
    /// Week offset after the split (1-based) to observed value.
    pub values: BTreeMap<u32, f64>,
    pub censor_week: Option<u32>,
}

/// Quintile-bucket version of a forecast target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTarget {
    pub variable: String,
    pub buckets: BTreeMap<u32, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkTask {
    pub event: String,
    pub horizon: u32,
    pub label: LandmarkLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub patient_id: String,
    pub split_week: u32,
    pub forecast: Vec<ForecastTarget>,
    #[serde(default)]
    pub buckets: Vec<BucketTarget>,
    pub landmarks: Vec<LandmarkTask>,
}

impl TaskBundle {
    pub fn forecast_variables(&self) -> Vec<String> {
        self.forecast.iter().map(|f| f.variable.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.forecast.is_empty() && self.buckets.is_empty() && self.landmarks.is_empty()
    }
}

/// Draws split weeks around each line-of-therapy start. For a start week `w`
/// the candidates are the visit weeks in `[w, w + split_window_weeks]`; each
/// line contributes `splits_per_line` uniform draws with replacement. The
/// union is returned sorted and deduplicated.
pub fn sample_split_times(
    record: &PatientRecord,
    config: &SplitConfig,
    rng: &mut StreamRng,
) -> Vec<u32> {
    let mut picked = BTreeSet::new();
    for start in record.therapy_line_starts() {
        let end = start.saturating_add(config.split_window_weeks);
        let candidates: Vec<u32> = record
            .visits
            .iter()
            .map(|v| v.week)
            .filter(|w| (start..=end).contains(w))
            .collect();
        for _ in 0..config.splits_per_line {
            picked.insert(candidates[rng.random_range(0..candidates.len())]);
        }
    }
    picked.into_iter().collect()
}

/// Draws `k` distinct variables with probability proportional to their weight,
/// renormalising after every draw. Returns the whole pool (in draw order) when
/// it holds fewer than `k` variables.
pub fn sample_forecast_variables(
    pool: &[(String, f64)],
    k: usize,
    rng: &mut StreamRng,
) -> Result<Vec<String>, SamplingError> {
    let mut remaining: Vec<&(String, f64)> = pool.iter().filter(|(_, p)| *p > 0.0).collect();
    if remaining.is_empty() {
        return Err(SamplingError::EmptyPool);
    }
    let mut out = Vec::with_capacity(k.min(remaining.len()));
    while out.len() < k && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|(_, p)| p).sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = remaining.len() - 1;
        for (i, (_, p)) in remaining.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        out.push(remaining.remove(chosen).0.clone());
    }
    Ok(out)
}

/// Weeks at which a competing event (a new line of therapy) starts.
pub fn competing_event_weeks(record: &PatientRecord) -> Vec<u32> {
    record.therapy_line_starts()
}

/// Observed values of `variable` at offsets `1..=horizon` after `t`, cut at the
/// first competing event strictly after `t`.
pub fn build_forecast_target(
    record: &PatientRecord,
    t: u32,
    variable: &str,
    horizon: u32,
    competing: &[u32],
) -> ForecastTarget {
    let censor_week = competing.iter().copied().filter(|&w| w > t).min();
    let stop = censor_week.unwrap_or(u32::MAX);
    let values = record
        .numeric_series(variable)
        .into_iter()
        .filter(|&(w, _)| w > t && w - t <= horizon && w < stop)
        .map(|(w, x)| (w - t, x))
        .collect();
    ForecastTarget {
        variable: variable.to_string(),
        values,
        censor_week,
    }
}

/// First outcome after a landmark split: either the event or a censoring
/// event, with the number of weeks from the split. Always at least one week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub weeks: u32,
    pub event: bool,
}

/// Follows the patient from week `t` until event `E` or censoring.
///
/// Censoring happens at the first new line of therapy after `t` (unless the
/// event is itself a line of therapy), one week after the last recorded visit,
/// or one week after the global cutoff, whichever comes first.
pub fn first_outcome(
    record: &PatientRecord,
    t: u32,
    event: &EventDefinition,
    global_cutoff: u32,
    tie: TiePolicy,
) -> Outcome {
    let end_of_record = record.last_week().unwrap_or(t).max(t) + 1;
    let mut censor = end_of_record.min(global_cutoff.max(t) + 1);
    if event.censored_by_therapy_switch() {
        if let Some(w) = record.therapy_line_starts().into_iter().find(|&w| w > t) {
            censor = censor.min(w);
        }
    }
    let event_week = record
        .visits
        .iter()
        .filter(|v| v.week > t)
        .map(|v| v.week)
        .find(|&w| event.occurs_in(record, w));
    match event_week {
        Some(e) if e < censor || (e == censor && tie == TiePolicy::EventFirst) => Outcome {
            weeks: e - t,
            event: true,
        },
        _ => Outcome {
            weeks: censor - t,
            event: false,
        },
    }
}

/// Status of `event` at `t + horizon`.
pub fn label_landmark(
    record: &PatientRecord,
    t: u32,
    event: &EventDefinition,
    horizon: u32,
    global_cutoff: u32,
    tie: TiePolicy,
) -> LandmarkLabel {
    let outcome = first_outcome(record, t, event, global_cutoff, tie);
    if outcome.weeks > horizon {
        LandmarkLabel::NotOccurred
    } else if outcome.event {
        LandmarkLabel::Occurred
    } else {
        LandmarkLabel::Censored
    }
}

/// Draws an event (uniform over those defined for the record's indication)
/// and a horizon uniform on `1..=max_horizon`, then labels it.
pub fn sample_landmark_task(
    record: &PatientRecord,
    t: u32,
    events: &[EventDefinition],
    max_horizon: u32,
    global_cutoff: u32,
    tie: TiePolicy,
    rng: &mut StreamRng,
) -> Result<LandmarkTask, SamplingError> {
    let indication = record.indication();
    let eligible: Vec<&EventDefinition> =
        events.iter().filter(|e| e.applies_to(indication)).collect();
    if eligible.is_empty() {
        return Err(SamplingError::NoEvents(indication.map(str::to_string)));
    }
    let event = eligible[rng.random_range(0..eligible.len())];
    let horizon = rng.random_range(1..=max_horizon);
    Ok(LandmarkTask {
        event: event.name.clone(),
        horizon,
        label: label_landmark(record, t, event, horizon, global_cutoff, tie),
    })
}

/// Which task families to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSelection {
    pub forecast: bool,
    pub events: bool,
    pub buckets: bool,
}

impl Default for TaskSelection {
    fn default() -> Self {
        TaskSelection {
            forecast: true,
            events: true,
            buckets: false,
        }
    }
}

impl FromStr for TaskSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut sel = TaskSelection {
            forecast: false,
            events: false,
            buckets: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "forecast" => sel.forecast = true,
                "events" => sel.events = true,
                "buckets" => sel.buckets = true,
                other => return Err(format!("unknown task family `{other}`")),
            }
        }
        if !(sel.forecast || sel.events || sel.buckets) {
            return Err("no task family selected".into());
        }
        Ok(sel)
    }
}

/// Maps a value to its quintile bucket, 1..=5. Values equal to an edge go to
/// the lower bucket.
pub fn encode_bucket(x: f64, edges: &[f64; 4]) -> u8 {
    1 + edges.iter().filter(|&&e| e < x).count() as u8
}

/// All task bundles for one patient. Randomness comes from the `split` and
/// `sampling` streams keyed by patient id, so the result does not depend on
/// which thread runs it.
pub fn build_bundles(
    record: &PatientRecord,
    stats: &VariableStats,
    config: &SplitConfig,
    tasks: TaskSelection,
    global_cutoff: u32,
    seed: u64,
) -> Result<Vec<TaskBundle>, SamplingError> {
    let pid = &record.patient_id;
    let mut split_rng = rng::stream(seed, rng::STREAM_SPLIT, pid);
    let mut rng = rng::stream(seed, rng::STREAM_SAMPLING, pid);
    let competing = competing_event_weeks(record);
    let pool = stats.sampling_pool();

    let mut bundles = Vec::new();
    for t in sample_split_times(record, config, &mut split_rng) {
        for pass in 0..config.subset_passes {
            let mut bundle = TaskBundle {
                patient_id: pid.clone(),
                split_week: t,
                forecast: Vec::new(),
                buckets: Vec::new(),
                landmarks: Vec::new(),
            };
            if tasks.forecast || tasks.buckets {
                let observed: Vec<(String, f64)> = pool
                    .iter()
                    .filter(|(v, _)| record.last_value_until(v, t).is_some())
                    .cloned()
                    .collect();
                if !observed.is_empty() {
                    let chosen =
                        sample_forecast_variables(&observed, config.forecast_vars_per_sample, &mut rng)?;
                    let targets: Vec<ForecastTarget> = chosen
                        .iter()
                        .map(|v| {
                            build_forecast_target(
                                record,
                                t,
                                v,
                                config.forecast_horizon_weeks,
                                &competing,
                            )
                        })
                        .collect();
                    if tasks.buckets {
                        bundle.buckets = targets
                            .iter()
                            .filter_map(|f| {
                                let edges = stats.get(&f.variable)?.quintile_edges?;
                                Some(BucketTarget {
                                    variable: f.variable.clone(),
                                    buckets: f
                                        .values
                                        .iter()
                                        .map(|(&k, &x)| (k, encode_bucket(x, &edges)))
                                        .collect(),
                                })
                            })
                            .collect();
                    }
                    if tasks.forecast {
                        bundle.forecast = targets;
                    }
                }
            }
            if tasks.events && pass == 0 {
                for _ in 0..config.landmarks_per_split {
                    bundle.landmarks.push(sample_landmark_task(
                        record,
                        t,
                        &config.events,
                        config.event_horizon_max_weeks,
                        global_cutoff,
                        config.tie_policy,
                        &mut rng,
                    )?);
                }
            }
            if !bundle.is_empty() {
                bundles.push(bundle);
            }
        }
    }
    Ok(bundles)
}
