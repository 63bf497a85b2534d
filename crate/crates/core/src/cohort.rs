//! Event-log ingestion, weekly aggregation, per-variable statistics, outlier
//! handling and patient-level partitioning.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Value text that marks a present/absent event (diagnosis, progression, ...).
pub const MARKER_TEXT: &str = "present";

/// Column order of the delimited event log.
pub const EVENT_LOG_COLUMNS: [&str; 6] = [
    "patient_id",
    "day",
    "domain",
    "name",
    "value_numeric",
    "value_text",
];

/// Domains whose numeric values are candidates for forecasting.
pub const FORECAST_DOMAINS: [Domain; 2] = [Domain::Lab, Domain::Vital];

/// Clamp applied to non-positive sampling scores before normalisation.
pub const SCORE_EPSILON: f64 = 1e-6;

pub const DEFAULT_MIN_OBSERVATIONS: usize = 50;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("failed to read event log: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log is not readable: {0}")]
    Unreadable(String),
    #[error("event log header is missing column `{0}`")]
    MissingColumn(String),
    #[error("cohort has no patients to compute statistics from")]
    EmptyCohort,
    #[error("invalid partition fractions: {0}")]
    InvalidFractions(String),
    #[error("cohort store line {line}: {message}")]
    Store { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Lab,
    Vital,
    Drug,
    Diagnosis,
    Genetic,
    Ecog,
    Progression,
    Metastasis,
    Mortality,
    TherapyLine,
    Demographic,
    Other,
}

impl Domain {
    pub const ALL: [Domain; 12] = [
        Domain::Lab,
        Domain::Vital,
        Domain::Drug,
        Domain::Diagnosis,
        Domain::Genetic,
        Domain::Ecog,
        Domain::Progression,
        Domain::Metastasis,
        Domain::Mortality,
        Domain::TherapyLine,
        Domain::Demographic,
        Domain::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Lab => "lab",
            Domain::Vital => "vital",
            Domain::Drug => "drug",
            Domain::Diagnosis => "diagnosis",
            Domain::Genetic => "genetic",
            Domain::Ecog => "ecog",
            Domain::Progression => "progression",
            Domain::Metastasis => "metastasis",
            Domain::Mortality => "mortality",
            Domain::TherapyLine => "therapy_line",
            Domain::Demographic => "demographic",
            Domain::Other => "other",
        }
    }

    pub fn is_forecastable(self) -> bool {
        FORECAST_DOMAINS.contains(&self)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Domain::ALL
            .iter()
            .copied()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum EventValue {
    Numeric(f64),
    Categorical(String),
    Marker,
}

impl EventValue {
    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            EventValue::Numeric(x) => Some(*x),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub patient_id: String,
    pub day: u32,
    pub domain: Domain,
    pub name: String,
    pub value: EventValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: u64,
    pub reason: String,
}

/// Result of reading an event log: valid events grouped per patient, plus
/// a count of the lines that were skipped.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub patients: BTreeMap<String, Vec<RawEvent>>,
    pub malformed: usize,
    pub errors: Vec<LineError>,
}

impl IngestReport {
    fn push(&mut self, event: RawEvent) {
        self.patients
            .entry(event.patient_id.clone())
            .or_default()
            .push(event);
    }

    fn reject(&mut self, line: u64, reason: String) {
        self.malformed += 1;
        self.errors.push(LineError { line, reason });
    }

    pub fn event_count(&self) -> usize {
        self.patients.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Deserialize)]
struct EventLine {
    patient_id: Option<String>,
    day: Option<serde_json::Value>,
    domain: Option<String>,
    name: Option<String>,
    value_numeric: Option<serde_json::Value>,
    value_text: Option<String>,
}

/// Validates one log line given as raw field strings.
fn validate_fields(
    patient_id: &str,
    day: &str,
    domain: &str,
    name: &str,
    value_numeric: &str,
    value_text: &str,
) -> Result<RawEvent, String> {
    let patient_id = patient_id.trim();
    if patient_id.is_empty() {
        return Err("empty patient_id".into());
    }
    let day: i64 = day
        .trim()
        .parse()
        .map_err(|_| format!("day `{day}` is not an integer"))?;
    let day = u32::try_from(day).map_err(|_| format!("day {day} is out of range"))?;
    let domain: Domain = domain.parse()?;
    let name = name.trim();
    if name.is_empty() {
        return Err("empty name".into());
    }
    let numeric = value_numeric.trim();
    let value = match (numeric.is_empty(), value_text.is_empty()) {
        (false, true) => {
            let x: f64 = numeric
                .parse()
                .map_err(|_| format!("value_numeric `{numeric}` is not a number"))?;
            if !x.is_finite() {
                return Err(format!("value_numeric `{numeric}` is not finite"));
            }
            EventValue::Numeric(x)
        }
        (true, false) if value_text == MARKER_TEXT => EventValue::Marker,
        (true, false) => EventValue::Categorical(value_text.to_string()),
        (false, false) => return Err("both value_numeric and value_text are set".into()),
        (true, true) => return Err("neither value_numeric nor value_text is set".into()),
    };
    Ok(RawEvent {
        patient_id: patient_id.to_string(),
        day,
        domain,
        name: name.to_string(),
        value,
    })
}

fn json_scalar(v: &Option<serde_json::Value>) -> Result<String, String> {
    match v {
        None | Some(serde_json::Value::Null) => Ok(String::new()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(format!("unexpected value `{other}`")),
    }
}

fn validate_record_line(line: &str) -> Result<RawEvent, String> {
    let rec: EventLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    validate_fields(
        rec.patient_id.as_deref().unwrap_or(""),
        &json_scalar(&rec.day)?,
        rec.domain.as_deref().unwrap_or(""),
        rec.name.as_deref().unwrap_or(""),
        &json_scalar(&rec.value_numeric)?,
        rec.value_text.as_deref().unwrap_or(""),
    )
}

/// Reads an event log in either supported form. The line-delimited record form
/// is detected by a leading `{` on the first non-blank line; anything else is
/// read as delimited text with a mandatory header row.
///
/// Malformed lines are skipped and counted. I/O failures and a missing header
/// column are fatal.
pub fn ingest_event_log<R: Read>(source: R) -> Result<IngestReport, CohortError> {
    let mut reader = BufReader::new(source);
    let first = {
        let buf = reader.fill_buf()?;
        buf.iter().copied().find(|b| !b.is_ascii_whitespace())
    };
    match first {
        None => Ok(IngestReport::default()),
        Some(b'{') => ingest_records(reader),
        Some(_) => ingest_delimited(reader),
    }
}

fn ingest_records<R: BufRead>(reader: R) -> Result<IngestReport, CohortError> {
    let mut report = IngestReport::default();
    for (idx, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        let line_no = idx as u64 + 1;
        let Ok(text) = std::str::from_utf8(&line) else {
            report.reject(line_no, "invalid UTF-8".into());
            continue;
        };
        if text.trim().is_empty() {
            continue;
        }
        match validate_record_line(text) {
            Ok(ev) => report.push(ev),
            Err(reason) => report.reject(line_no, reason),
        }
    }
    Ok(report)
}

fn ingest_delimited<R: Read>(reader: R) -> Result<IngestReport, CohortError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = csv.headers().map_err(csv_fatal)?.clone();
    let mut index = [0usize; 6];
    for (slot, col) in index.iter_mut().zip(EVENT_LOG_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == col)
            .ok_or_else(|| CohortError::MissingColumn(col.to_string()))?;
    }

    let mut report = IngestReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        match csv.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                if record.len() == 1 && record[0].trim().is_empty() {
                    continue;
                }
                if record.len() != headers.len() {
                    report.reject(
                        line,
                        format!("expected {} fields, found {}", headers.len(), record.len()),
                    );
                    continue;
                }
                let f = |i: usize| &record[index[i]];
                match validate_fields(f(0), f(1), f(2), f(3), f(4), f(5)) {
                    Ok(ev) => report.push(ev),
                    Err(reason) => report.reject(line, reason),
                }
            }
            Err(err) => {
                let line = err.position().map_or(0, |p| p.line());
                if matches!(err.kind(), csv::ErrorKind::Io(_)) {
                    return Err(csv_fatal(err));
                }
                report.reject(line, err.to_string());
            }
        }
    }
    Ok(report)
}

fn csv_fatal(err: csv::Error) -> CohortError {
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => CohortError::Io(io),
            other => CohortError::Unreadable(format!("{other:?}")),
        }
    } else {
        CohortError::Unreadable(err.to_string())
    }
}

/// Writes events in the delimited form, header first.
pub fn write_event_log<W: Write>(events: &[RawEvent], out: W) -> Result<(), CohortError> {
    let mut csv = csv::Writer::from_writer(out);
    let map_err = |e: csv::Error| CohortError::Unreadable(e.to_string());
    csv.write_record(EVENT_LOG_COLUMNS).map_err(map_err)?;
    for ev in events {
        let (numeric, text) = match &ev.value {
            EventValue::Numeric(x) => (x.to_string(), String::new()),
            EventValue::Categorical(s) => (String::new(), s.clone()),
            EventValue::Marker => (String::new(), MARKER_TEXT.to_string()),
        };
        csv.write_record([
            ev.patient_id.as_str(),
            &ev.day.to_string(),
            ev.domain.as_str(),
            ev.name.as_str(),
            &numeric,
            &text,
        ])
        .map_err(map_err)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitItem {
    pub domain: Domain,
    pub value: EventValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub week: u32,
    pub items: BTreeMap<String, VisitItem>,
}

impl Visit {
    pub fn has_domain(&self, domain: Domain) -> bool {
        self.items.values().any(|i| i.domain == domain)
    }
}

/// Static attributes plus a weekly, chronologically sorted visit history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub static_attributes: BTreeMap<String, String>,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Visits with `week <= t`.
    pub fn history_until(&self, t: u32) -> &[Visit] {
        let end = self.visits.partition_point(|v| v.week <= t);
        &self.visits[..end]
    }

    pub fn visit_at(&self, week: u32) -> Option<&Visit> {
        self.visits
            .binary_search_by_key(&week, |v| v.week)
            .ok()
            .map(|i| &self.visits[i])
    }

    pub fn last_week(&self) -> Option<u32> {
        self.visits.last().map(|v| v.week)
    }

    /// Weeks of visits that start a line of therapy.
    pub fn therapy_line_starts(&self) -> Vec<u32> {
        self.visits
            .iter()
            .filter(|v| v.has_domain(Domain::TherapyLine))
            .map(|v| v.week)
            .collect()
    }

    pub fn numeric_series(&self, name: &str) -> Vec<(u32, f64)> {
        self.visits
            .iter()
            .filter_map(|v| {
                v.items
                    .get(name)
                    .and_then(|i| i.value.as_numeric())
                    .map(|x| (v.week, x))
            })
            .collect()
    }

    /// Last numeric value of `name` observed at or before week `t`.
    pub fn last_value_until(&self, name: &str, t: u32) -> Option<(u32, f64)> {
        self.history_until(t).iter().rev().find_map(|v| {
            v.items
                .get(name)
                .and_then(|i| i.value.as_numeric())
                .map(|x| (v.week, x))
        })
    }

    pub fn indication(&self) -> Option<&str> {
        self.static_attributes.get("indication").map(String::as_str)
    }

    /// Flattens the record back into one event per item, at `day = 7 * week`.
    pub fn to_events(&self) -> Vec<RawEvent> {
        let mut out: Vec<RawEvent> = self
            .static_attributes
            .iter()
            .map(|(k, v)| RawEvent {
                patient_id: self.patient_id.clone(),
                day: 0,
                domain: Domain::Demographic,
                name: k.clone(),
                value: EventValue::Categorical(v.clone()),
            })
            .collect();
        for visit in &self.visits {
            for (name, item) in &visit.items {
                out.push(RawEvent {
                    patient_id: self.patient_id.clone(),
                    day: visit.week * 7,
                    domain: item.domain,
                    name: name.clone(),
                    value: item.value.clone(),
                });
            }
        }
        out
    }
}

/// Most frequent string; ties go to the lexicographically smallest.
fn mode<'a>(values: impl IntoIterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (v, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v.to_string())
}

#[derive(Default)]
struct Collision<'a> {
    domain: Option<Domain>,
    numeric: Vec<f64>,
    text: Vec<&'a str>,
    marker: bool,
}

impl Collision<'_> {
    /// Numeric values win over text, text over a bare marker.
    fn resolve(&self) -> EventValue {
        if !self.numeric.is_empty() {
            EventValue::Numeric(self.numeric.iter().sum::<f64>() / self.numeric.len() as f64)
        } else if let Some(m) = mode(self.text.iter().copied()) {
            EventValue::Categorical(m)
        } else {
            EventValue::Marker
        }
    }
}

/// Aggregates one patient's events into weekly visits (`week = day / 7`).
/// Numeric collisions are averaged, categorical ones resolved by mode, markers
/// deduplicated. Demographic events become static attributes.
pub fn aggregate_weekly(patient_id: &str, events: &[RawEvent]) -> PatientRecord {
    let mut order: Vec<&RawEvent> = events.iter().collect();
    order.sort_by_key(|e| e.day);

    let mut statics: BTreeMap<&str, Collision> = BTreeMap::new();
    let mut weeks: BTreeMap<u32, BTreeMap<&str, Collision>> = BTreeMap::new();
    for ev in order {
        let slot = if ev.domain == Domain::Demographic {
            statics.entry(&ev.name).or_default()
        } else {
            weeks
                .entry(ev.day / 7)
                .or_default()
                .entry(&ev.name)
                .or_default()
        };
        slot.domain.get_or_insert(ev.domain);
        match &ev.value {
            EventValue::Numeric(x) => slot.numeric.push(*x),
            EventValue::Categorical(s) => slot.text.push(s),
            EventValue::Marker => slot.marker = true,
        }
    }

    let static_attributes = statics
        .into_iter()
        .map(|(k, c)| {
            let v = match c.resolve() {
                EventValue::Numeric(x) => x.to_string(),
                EventValue::Categorical(s) => s,
                EventValue::Marker => MARKER_TEXT.to_string(),
            };
            (k.to_string(), v)
        })
        .collect();
    let visits = weeks
        .into_iter()
        .map(|(week, items)| Visit {
            week,
            items: items
                .into_iter()
                .map(|(name, c)| {
                    let item = VisitItem {
                        domain: c.domain.unwrap_or(Domain::Other),
                        value: c.resolve(),
                    };
                    (name.to_string(), item)
                })
                .collect(),
        })
        .collect();
    PatientRecord {
        patient_id: patient_id.to_string(),
        static_attributes,
        visits,
    }
}

/// Per-variable statistics used for forecast-variable sampling, outlier
/// handling and top-k selection. Always computed on the train partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableStat {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation of all observed values.
    pub std_dev: f64,
    /// Number of consecutive observation pairs across patients.
    pub pair_count: usize,
    pub copy_forward_rmse: f64,
    pub nrmse: f64,
    /// `log2(count * nrmse)`; may be `-inf` when the variable never changes.
    #[serde(with = "lenient_f64")]
    pub score: f64,
    pub sampling_prob: f64,
    /// Mean absolute percentage error of copy-forward on consecutive pairs,
    /// excluding pairs whose later value is zero.
    pub copy_forward_mape: Option<f64>,
    pub quintile_edges: Option<[f64; 4]>,
    /// In the forecast sampling pool.
    pub retained: bool,
}

/// serde_json cannot represent infinities; store them as null.
mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableStats {
    pub min_observations: usize,
    pub variables: BTreeMap<String, VariableStat>,
}

impl VariableStats {
    pub fn get(&self, name: &str) -> Option<&VariableStat> {
        self.variables.get(name)
    }

    /// Retained variables with their sampling probabilities, in name order.
    pub fn sampling_pool(&self) -> Vec<(String, f64)> {
        self.variables
            .iter()
            .filter(|(_, s)| s.retained)
            .map(|(k, s)| (k.clone(), s.sampling_prob))
            .collect()
    }

    pub fn std_devs(&self) -> BTreeMap<String, f64> {
        self.variables
            .iter()
            .map(|(k, s)| (k.clone(), s.std_dev))
            .collect()
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Computes count, dispersion, copy-forward error and the sampling score for
/// every forecastable numeric variable. Variables with fewer than
/// `min_observations` observations or zero spread stay in the table but are
/// not retained for sampling.
pub fn compute_variable_stats<'a, I>(
    records: I,
    min_observations: usize,
) -> Result<VariableStats, CohortError>
where
    I: IntoIterator<Item = &'a PatientRecord>,
{
    #[derive(Default)]
    struct Acc {
        values: Vec<f64>,
        sq_diff: f64,
        pairs: usize,
        ape_sum: f64,
        ape_n: usize,
    }

    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    let mut n_records = 0usize;
    for record in records {
        n_records += 1;
        let mut last: BTreeMap<&str, f64> = BTreeMap::new();
        for visit in &record.visits {
            for (name, item) in &visit.items {
                if !item.domain.is_forecastable() {
                    continue;
                }
                let Some(y) = item.value.as_numeric() else { continue };
                let a = acc.entry(name.clone()).or_default();
                a.values.push(y);
                if let Some(prev) = last.insert(name, y) {
                    a.sq_diff += (y - prev).powi(2);
                    a.pairs += 1;
                    if y != 0.0 {
                        a.ape_sum += ((y - prev) / y).abs();
                        a.ape_n += 1;
                    }
                }
            }
        }
    }
    if n_records == 0 {
        return Err(CohortError::EmptyCohort);
    }

    let mut variables = BTreeMap::new();
    for (name, mut a) in acc {
        let count = a.values.len();
        let mean = a.values.iter().sum::<f64>() / count as f64;
        let var = a.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count as f64;
        let std_dev = var.sqrt();
        let rmse = if a.pairs > 0 {
            (a.sq_diff / a.pairs as f64).sqrt()
        } else {
            0.0
        };
        let nrmse = if std_dev > 0.0 { rmse / std_dev } else { 0.0 };
        let score = (count as f64 * nrmse).log2();
        a.values.sort_by(f64::total_cmp);
        let quintile_edges = Some([0.2, 0.4, 0.6, 0.8].map(|q| percentile_sorted(&a.values, q)));
        variables.insert(
            name,
            VariableStat {
                count,
                mean,
                std_dev,
                pair_count: a.pairs,
                copy_forward_rmse: rmse,
                nrmse,
                score,
                sampling_prob: 0.0,
                copy_forward_mape: (a.ape_n > 0).then(|| a.ape_sum / a.ape_n as f64),
                quintile_edges,
                retained: count >= min_observations && std_dev > 0.0,
            },
        );
    }

    let total: f64 = variables
        .values()
        .filter(|s| s.retained)
        .map(|s| s.score.max(SCORE_EPSILON))
        .sum();
    for s in variables.values_mut().filter(|s| s.retained) {
        s.sampling_prob = s.score.max(SCORE_EPSILON) / total;
    }
    Ok(VariableStats {
        min_observations,
        variables,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMode {
    /// Drop values outside `mean ± 3 sd`.
    Filter,
    /// Clamp values to `mean ± 3 sd`.
    Cap,
}

/// Applies the 3-sigma rule to a single value. `None` means the value is dropped.
pub fn three_sigma(x: f64, mean: f64, std_dev: f64, mode: OutlierMode) -> Option<f64> {
    if !(std_dev > 0.0) {
        return Some(x);
    }
    let (lo, hi) = (mean - 3.0 * std_dev, mean + 3.0 * std_dev);
    match mode {
        OutlierMode::Filter => (lo..=hi).contains(&x).then_some(x),
        OutlierMode::Cap => Some(x.clamp(lo, hi)),
    }
}

/// Applies the 3-sigma rule to every forecastable numeric item with known
/// statistics. Visits left without items are removed. Returns the number of
/// values removed or changed.
pub fn apply_three_sigma(
    records: &mut [PatientRecord],
    stats: &VariableStats,
    mode: OutlierMode,
) -> usize {
    let mut touched = 0;
    for record in records.iter_mut() {
        for visit in &mut record.visits {
            visit.items.retain(|name, item| {
                let (Some(x), Some(s)) = (item.value.as_numeric(), stats.get(name)) else {
                    return true;
                };
                if !item.domain.is_forecastable() {
                    return true;
                }
                match three_sigma(x, s.mean, s.std_dev, mode) {
                    None => {
                        touched += 1;
                        false
                    }
                    Some(y) => {
                        if y != x {
                            touched += 1;
                            item.value = EventValue::Numeric(y);
                        }
                        true
                    }
                }
            });
        }
        record.visits.retain(|v| !v.items.is_empty());
    }
    touched
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Partition::Train),
            "validation" | "val" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown partition `{other}`")),
        }
    }
}

/// Splits patients into train/validation/test. `fractions` lists the train,
/// validation and test shares (missing trailing entries are zero) and must sum
/// to 1. Counts use largest-remainder rounding; assignment order is a seeded
/// shuffle of the sorted ids.
pub fn partition_cohort(
    patient_ids: &[String],
    fractions: &[f64],
    seed: u64,
) -> Result<BTreeMap<String, Partition>, CohortError> {
    if fractions.is_empty() || fractions.len() > 3 {
        return Err(CohortError::InvalidFractions(format!(
            "expected 1 to 3 fractions, got {}",
            fractions.len()
        )));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(CohortError::InvalidFractions(
            "fractions must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CohortError::InvalidFractions(format!(
            "fractions must sum to 1, got {sum}"
        )));
    }

    let mut ids: Vec<&String> = patient_ids.iter().collect();
    ids.sort();
    ids.dedup();
    let n = ids.len();

    let mut counts = [0usize; 3];
    let mut remainders = Vec::with_capacity(fractions.len());
    for (i, f) in fractions.iter().enumerate() {
        let exact = f * n as f64;
        counts[i] = ((exact + 1e-9).floor() as usize).min(n);
        remainders.push((exact - counts[i] as f64, i));
    }
    // floors lose less than one patient per fraction
    let left = n.saturating_sub(counts.iter().sum());
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(left) {
        counts[i] += 1;
    }

    let mut rng = rng::stream(seed, rng::STREAM_PARTITION, "");
    ids.shuffle(&mut rng);
    let labels = [Partition::Train, Partition::Validation, Partition::Test];
    let mut out = BTreeMap::new();
    let mut it = ids.into_iter();
    for (label, count) in labels.iter().zip(counts) {
        for id in it.by_ref().take(count) {
            out.insert(id.clone(), *label);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortOptions {
    pub min_observations: usize,
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub outlier_filter: bool,
    /// Last week of the dataset; defaults to the latest visit week in the cohort.
    pub global_cutoff_week: Option<u32>,
}

impl Default for CohortOptions {
    fn default() -> Self {
        CohortOptions {
            min_observations: DEFAULT_MIN_OBSERVATIONS,
            fractions: vec![0.8, 0.1, 0.1],
            seed: 0,
            outlier_filter: true,
            global_cutoff_week: None,
        }
    }
}

/// Immutable, ingested cohort: records, frozen train statistics and the
/// patient partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortStore {
    pub records: BTreeMap<String, PatientRecord>,
    pub stats: VariableStats,
    pub partition: BTreeMap<String, Partition>,
    pub global_cutoff_week: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoreLine {
    Meta {
        global_cutoff_week: u32,
        stats: VariableStats,
    },
    Patient {
        partition: Partition,
        record: PatientRecord,
    },
}

impl CohortStore {
    /// Aggregates, partitions, computes train statistics and (optionally)
    /// filters outliers.
    pub fn build(
        patients: &BTreeMap<String, Vec<RawEvent>>,
        options: &CohortOptions,
    ) -> Result<Self, CohortError> {
        let mut records: Vec<PatientRecord> = patients
            .iter()
            .map(|(id, events)| aggregate_weekly(id, events))
            .collect();
        let ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
        let partition = partition_cohort(&ids, &options.fractions, options.seed)?;
        let stats = compute_variable_stats(
            records
                .iter()
                .filter(|r| partition.get(&r.patient_id) == Some(&Partition::Train)),
            options.min_observations,
        )?;
        if options.outlier_filter {
            apply_three_sigma(&mut records, &stats, OutlierMode::Filter);
        }
        let global_cutoff_week = options.global_cutoff_week.unwrap_or_else(|| {
            records
                .iter()
                .filter_map(PatientRecord::last_week)
                .max()
                .unwrap_or(0)
        });
        Ok(CohortStore {
            records: records
                .into_iter()
                .map(|r| (r.patient_id.clone(), r))
                .collect(),
            stats,
            partition,
            global_cutoff_week,
        })
    }

    pub fn records_in(&self, part: Partition) -> impl Iterator<Item = &PatientRecord> {
        self.records
            .values()
            .filter(move |r| self.partition.get(&r.patient_id) == Some(&part))
    }

    pub fn partition_of(&self, patient_id: &str) -> Option<Partition> {
        self.partition.get(patient_id).copied()
    }

    /// One meta line followed by one line per patient, in patient-id order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), CohortError> {
        let meta = StoreLine::Meta {
            global_cutoff_week: self.global_cutoff_week,
            stats: self.stats.clone(),
        };
        let to_io = |e: serde_json::Error| CohortError::Io(e.into());
        serde_json::to_writer(&mut out, &meta).map_err(to_io)?;
        out.write_all(b"\n")?;
        for record in self.records.values() {
            let line = StoreLine::Patient {
                partition: self.partition[&record.patient_id],
                record: record.clone(),
            };
            serde_json::to_writer(&mut out, &line).map_err(to_io)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: Read>(source: R) -> Result<Self, CohortError> {
        let mut meta = None;
        let mut records = BTreeMap::new();
        let mut partition = BTreeMap::new();
        for (idx, line) in BufReader::new(source).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: StoreLine =
                serde_json::from_str(&line).map_err(|e| CohortError::Store {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            match parsed {
                StoreLine::Meta {
                    global_cutoff_week,
                    stats,
                } => meta = Some((global_cutoff_week, stats)),
                StoreLine::Patient {
                    partition: p,
                    record,
                } => {
                    partition.insert(record.patient_id.clone(), p);
                    records.insert(record.patient_id.clone(), record);
                }
            }
        }
        let (global_cutoff_week, stats) = meta.ok_or(CohortError::Store {
            line: 1,
            message: "missing meta line".into(),
        })?;
        Ok(CohortStore {
            records,
            stats,
            partition,
            global_cutoff_week,
        })
    }
}
