use std::collections::{BTreeMap, BTreeSet};

use super::number::format_number;
use super::templates as t;
use super::{PromptPair, SerializeError, SerializerConfig, TaskEntry, TaskKind, TokenCounter};
use crate::cohort::{Domain, EventValue, PatientRecord, Visit, VisitItem};
use crate::sampling::{BucketTarget, ForecastTarget, LandmarkTask, TaskBundle};

enum Task<'a> {
    Forecast(&'a [ForecastTarget]),
    Buckets(&'a [BucketTarget]),
    Event(&'a LandmarkTask),
}

fn tasks<'a>(bundle: &'a TaskBundle, config: &SerializerConfig) -> Vec<Task<'a>> {
    let mut out = Vec::new();
    if !bundle.forecast.is_empty() {
        out.push(Task::Forecast(&bundle.forecast));
    }
    if config.quintile_task_enabled && !bundle.buckets.is_empty() {
        out.push(Task::Buckets(&bundle.buckets));
    }
    out.extend(bundle.landmarks.iter().map(Task::Event));
    out
}

/// The numbered tasks of a bundle, in prompt order.
pub fn task_manifest(bundle: &TaskBundle, config: &SerializerConfig) -> Vec<TaskEntry> {
    tasks(bundle, config)
        .into_iter()
        .enumerate()
        .map(|(i, task)| {
            let id = i + 1;
            match task {
                Task::Forecast(f) => TaskEntry {
                    id,
                    kind: TaskKind::Forecast,
                    variables: f.iter().map(|x| x.variable.clone()).collect(),
                    event: None,
                    horizon: None,
                    label: None,
                },
                Task::Buckets(b) => TaskEntry {
                    id,
                    kind: TaskKind::Buckets,
                    variables: b.iter().map(|x| x.variable.clone()).collect(),
                    event: None,
                    horizon: None,
                    label: None,
                },
                Task::Event(l) => TaskEntry {
                    id,
                    kind: TaskKind::Event,
                    variables: Vec::new(),
                    event: Some(l.event.clone()),
                    horizon: Some(l.horizon),
                    label: Some(l.label),
                },
            }
        })
        .collect()
}

fn render_value(value: &EventValue, dp: u32) -> String {
    match value {
        EventValue::Numeric(x) => format_number(*x, dp),
        EventValue::Categorical(s) => s.clone(),
        EventValue::Marker => t::MARKER_WORDING.to_string(),
    }
}

/// `\tname is value` lines joined by `,\n`, closed with `.\n`.
fn item_lines<'a, I>(items: I) -> String
where
    I: IntoIterator<Item = (&'a str, String)>,
{
    let lines: Vec<String> = items
        .into_iter()
        .map(|(name, value)| format!("\t{name} is {value}"))
        .collect();
    if lines.is_empty() {
        return String::new();
    }
    format!("{}.\n", lines.join(",\n"))
}

fn visit_items(items: &BTreeMap<String, VisitItem>, dp: u32) -> String {
    item_lines(
        items
            .iter()
            .map(|(name, item)| (name.as_str(), render_value(&item.value, dp))),
    )
}

fn visit_block(header: &str, visit: &Visit, dp: u32) -> String {
    format!("{header}\n{}", visit_items(&visit.items, dp))
}

/// Everything between the system prompt and the visit history, and after it.
struct Fixed {
    head: Vec<String>,
    tail: Vec<String>,
}

fn fixed_sections(
    record: &PatientRecord,
    bundle: &TaskBundle,
    history: &[Visit],
    config: &SerializerConfig,
) -> Fixed {
    let dp = config.decimal_places;
    let mut head = vec![format!("{}\n", t::PATIENT_INTRO)];
    if !record.static_attributes.is_empty() {
        head.push(format!(
            "{}\n{}",
            t::DEMOGRAPHICS_HEADER,
            item_lines(
                record
                    .static_attributes
                    .iter()
                    .map(|(k, v)| (k.as_str(), v.clone()))
            )
        ));
    }

    let mut tail = Vec::new();
    let mut genetic: BTreeMap<String, VisitItem> = BTreeMap::new();
    let mut line_of_therapy: Option<String> = None;
    for visit in history {
        for (name, item) in &visit.items {
            match item.domain {
                Domain::Genetic => {
                    genetic.insert(name.clone(), item.clone());
                }
                Domain::TherapyLine => {
                    line_of_therapy = Some(match &item.value {
                        EventValue::Categorical(s) => s.clone(),
                        _ => name.clone(),
                    });
                }
                _ => {}
            }
        }
    }
    if !genetic.is_empty() {
        tail.push(format!(
            "{}\n\n{}\n{}",
            t::GENETIC_RECAP_HEADER,
            t::visit_header(0),
            visit_items(&genetic, dp)
        ));
    }
    if let Some(line) = line_of_therapy {
        tail.push(format!("{}\n\t{line}\n", t::LATEST_LINE_HEADER));
    }

    let mut variables: Vec<&str> = bundle.forecast.iter().map(|f| f.variable.as_str()).collect();
    if variables.is_empty() && config.quintile_task_enabled {
        variables = bundle.buckets.iter().map(|b| b.variable.as_str()).collect();
    }
    let last: Vec<String> = variables
        .iter()
        .filter_map(|v| {
            let (_, x) = record.last_value_until(v, bundle.split_week)?;
            Some(format!("\t{v} was {}\n", format_number(x, dp)))
        })
        .collect();
    if !last.is_empty() {
        tail.push(format!("{}\n{}", t::LAST_VALUES_HEADER, last.concat()));
    }

    tail.push(format!("{}\n", t::TASK_PREAMBLE));
    let descriptions: Vec<String> = tasks(bundle, config)
        .iter()
        .enumerate()
        .map(|(i, task)| task_description(i + 1, task))
        .collect();
    if !descriptions.is_empty() {
        tail.push(descriptions.join("\n\n"));
    }
    Fixed { head, tail }
}

/// All target offsets of a forecast-style task, ascending.
fn offsets<'a, I: IntoIterator<Item = &'a BTreeMap<u32, V>>, V: 'a>(maps: I) -> Vec<u32> {
    let set: BTreeSet<u32> = maps.into_iter().flat_map(|m| m.keys().copied()).collect();
    set.into_iter().collect()
}

fn task_description(id: usize, task: &Task) -> String {
    match task {
        Task::Forecast(targets) => {
            let weeks = offsets(targets.iter().map(|f| &f.values));
            let lines: Vec<String> = targets
                .iter()
                .map(|f| t::forecast_request_line(&f.variable, &weeks))
                .collect();
            format!(
                "{}\n{}\n\n{}\n",
                t::forecast_task_header(id),
                t::FORECAST_INSTRUCTION,
                lines.join("\n")
            )
        }
        Task::Buckets(targets) => {
            let weeks = offsets(targets.iter().map(|b| &b.buckets));
            let lines: Vec<String> = targets
                .iter()
                .map(|b| t::forecast_request_line(&b.variable, &weeks))
                .collect();
            format!(
                "{}\n{}\n\n{}\n",
                t::bucket_task_header(id),
                t::BUCKET_INSTRUCTION,
                lines.join("\n")
            )
        }
        Task::Event(l) => format!(
            "{}\n{}\n{}\n",
            t::event_task_header(id),
            t::event_instruction(l.horizon, &l.event),
            t::EVENT_FORMAT_INSTRUCTION
        ),
    }
}

fn assemble(system_prompt: &str, fixed: &Fixed, visits: &[String]) -> String {
    let body: Vec<&str> = fixed
        .head
        .iter()
        .chain(visits)
        .chain(&fixed.tail)
        .map(String::as_str)
        .collect();
    format!("{system_prompt}\n\n{}", body.join("\n"))
}

/// Visit blocks with the `drop` oldest non-first visits removed. The first and
/// the last visit are always kept.
fn visit_blocks(history: &[Visit], drop: usize, dp: u32) -> Vec<String> {
    let n = history.len();
    let kept = std::iter::once(&history[0]).chain(history[(1 + drop).min(n)..].iter());
    let mut out = Vec::new();
    let mut prev: Option<u32> = None;
    for visit in kept {
        let header = match prev {
            None => t::FIRST_VISIT_HEADER.to_string(),
            Some(w) => t::visit_header(visit.week - w),
        };
        out.push(visit_block(&header, visit, dp));
        prev = Some(visit.week);
    }
    out
}

/// Renders the prompt for `bundle`, dropping the oldest intermediate visits
/// until the prompt fits the token budget.
pub fn render_prompt(
    record: &PatientRecord,
    bundle: &TaskBundle,
    config: &SerializerConfig,
    counter: &dyn TokenCounter,
) -> Result<String, SerializeError> {
    let history = record.history_until(bundle.split_week);
    if history.is_empty() {
        return Err(SerializeError::EmptyHistory {
            patient_id: record.patient_id.clone(),
            split_week: bundle.split_week,
        });
    }
    let fixed = fixed_sections(record, bundle, history, config);
    let dp = config.decimal_places;
    let budget = config.context_budget_tokens;
    let render = |drop: usize| assemble(&config.system_prompt, &fixed, &visit_blocks(history, drop, dp));

    let full = render(0);
    if counter.count(&full) <= budget {
        return Ok(full);
    }
    let max_drop = history.len().saturating_sub(2);
    // Token counts are close to monotone in the number of dropped visits;
    // binary search for a candidate, then walk forward to be safe.
    let (mut lo, mut hi) = (0, max_drop);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if counter.count(&render(mid)) <= budget {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    for drop in lo..=max_drop {
        let prompt = render(drop);
        if counter.count(&prompt) <= budget {
            return Ok(prompt);
        }
    }
    Err(SerializeError::PromptTooLong {
        patient_id: record.patient_id.clone(),
        split_week: bundle.split_week,
        tokens: counter.count(&render(max_drop)),
        budget,
        visits: history.len(),
    })
}

fn forecast_answer<V, F>(id_header: String, rows: &[(&str, &BTreeMap<u32, V>)], fmt: F) -> String
where
    F: Fn(&V) -> String,
{
    let weeks = offsets(rows.iter().map(|(_, m)| *m));
    let mut prev = 0;
    let blocks: Vec<String> = weeks
        .iter()
        .map(|&w| {
            let header = t::visit_header(w - prev);
            prev = w;
            let items = item_lines(
                rows.iter()
                    .filter_map(|(name, m)| m.get(&w).map(|x| (*name, fmt(x)))),
            );
            format!("{header}\n{items}")
        })
        .collect();
    format!("{id_header}\n{}\n", blocks.join("\n"))
}

/// Renders the answers to every task of `bundle`, numbered as in the prompt.
pub fn render_target(bundle: &TaskBundle, config: &SerializerConfig) -> String {
    let dp = config.decimal_places;
    let answers: Vec<String> = tasks(bundle, config)
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let id = i + 1;
            match task {
                Task::Forecast(targets) => {
                    let rows: Vec<(&str, &BTreeMap<u32, f64>)> =
                        targets.iter().map(|f| (f.variable.as_str(), &f.values)).collect();
                    forecast_answer(t::forecast_task_header(id), &rows, |x| format_number(*x, dp))
                }
                Task::Buckets(targets) => {
                    let rows: Vec<(&str, &BTreeMap<u32, u8>)> =
                        targets.iter().map(|b| (b.variable.as_str(), &b.buckets)).collect();
                    forecast_answer(t::bucket_task_header(id), &rows, u8::to_string)
                }
                Task::Event(l) => format!(
                    "{}\n{}\n",
                    t::event_task_header(id),
                    config.answers.sentence(&l.event, l.label)
                ),
            }
        })
        .collect();
    answers.join("\n\n")
}

pub fn render_pair(
    record: &PatientRecord,
    bundle: &TaskBundle,
    config: &SerializerConfig,
    counter: &dyn TokenCounter,
) -> Result<PromptPair, SerializeError> {
    let prompt = render_prompt(record, bundle, config, counter)?;
    let token_estimate = counter.count(&prompt);
    Ok(PromptPair {
        target: render_target(bundle, config),
        patient_id: bundle.patient_id.clone(),
        split_week: bundle.split_week,
        task_manifest: task_manifest(bundle, config),
        token_estimate,
        prompt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::LandmarkLabel;
    use crate::serializer::{ByteEstimate, WhitespaceTokens};

    fn visit(week: u32, items: &[(&str, f64)]) -> Visit {
        Visit {
            week,
            items: items
                .iter()
                .map(|&(n, x)| {
                    (
                        n.to_string(),
                        VisitItem {
                            domain: Domain::Lab,
                            value: EventValue::Numeric(x),
                        },
                    )
                })
                .collect(),
        }
    }

    fn record(n_visits: u32) -> PatientRecord {
        PatientRecord {
            patient_id: "P1".into(),
            static_attributes: [("Patient gender".to_string(), "male".to_string())].into(),
            visits: (0..n_visits)
                .map(|i| visit(i * 2, &[("zinc", 1.0 + i as f64), ("albumin", 40.0)]))
                .collect(),
        }
    }

    fn event_bundle(split_week: u32) -> TaskBundle {
        TaskBundle {
            patient_id: "P1".into(),
            split_week,
            forecast: vec![],
            buckets: vec![],
            landmarks: vec![LandmarkTask {
                event: "death".into(),
                horizon: 8,
                label: LandmarkLabel::NotOccurred,
            }],
        }
    }

    #[test]
    fn single_landmark_is_task_one() {
        let rec = record(3);
        let config = SerializerConfig::default();
        let prompt = render_prompt(&rec, &event_bundle(4), &config, &ByteEstimate).unwrap();
        assert_eq!(prompt.matches("Task 1 is time to event prediction:").count(), 1);
        assert!(!prompt.contains("Task 2 is"));
        assert!(!prompt.contains(t::LAST_VALUES_HEADER));
        let target = render_target(&event_bundle(4), &config);
        assert_eq!(
            target,
            "Task 1 is time to event prediction:\nHere is the prediction: the event (death) was not censored and did not occur.\n"
        );
    }

    #[test]
    fn visit_items_are_alphabetical_with_gaps() {
        let rec = record(3);
        let prompt =
            render_prompt(&rec, &event_bundle(4), &SerializerConfig::default(), &ByteEstimate).unwrap();
        assert!(prompt.contains(
            "On the first visit, the patient experienced the following: \n\talbumin is 40,\n\tzinc is 1.\n\n2 weeks later"
        ));
        assert!(prompt.contains("2 weeks later, the patient visited and experienced the following: \n\talbumin is 40,\n\tzinc is 3.\n"));
    }

    #[test]
    fn truncation_keeps_first_and_last_visit() {
        let rec = record(200);
        let config = SerializerConfig {
            context_budget_tokens: 1000,
            ..SerializerConfig::default()
        };
        let bundle = event_bundle(398);
        let prompt = render_prompt(&rec, &bundle, &config, &WhitespaceTokens).unwrap();
        assert!(WhitespaceTokens.count(&prompt) <= 1000);
        assert!(prompt.contains(t::FIRST_VISIT_HEADER));
        assert!(prompt.contains("\tzinc is 200."));
        assert!(!prompt.contains("\tzinc is 2."));
        let full = render_prompt(&rec, &bundle, &SerializerConfig::default(), &WhitespaceTokens).unwrap();
        assert!(full.len() > prompt.len());
    }

    #[test]
    fn too_small_budget_is_an_error() {
        let config = SerializerConfig {
            context_budget_tokens: 10,
            ..SerializerConfig::default()
        };
        let err = render_prompt(&record(5), &event_bundle(8), &config, &ByteEstimate).unwrap_err();
        assert!(matches!(err, SerializeError::PromptTooLong { visits: 5, budget: 10, .. }));
    }

    #[test]
    fn empty_forecast_answer_block() {
        let bundle = TaskBundle {
            patient_id: "P1".into(),
            split_week: 4,
            forecast: vec![ForecastTarget {
                variable: "zinc".into(),
                values: BTreeMap::new(),
                censor_week: None,
            }],
            buckets: vec![],
            landmarks: vec![],
        };
        let target = render_target(&bundle, &SerializerConfig::default());
        assert_eq!(target, "Task 1 is forecasting:\n\n");
    }

    #[test]
    fn cumulative_offsets_in_target() {
        let bundle = TaskBundle {
            patient_id: "P1".into(),
            split_week: 4,
            forecast: vec![ForecastTarget {
                variable: "neutrophils - 26499-4".into(),
                values: [(3, 3.4), (5, 4.6)].into(),
                censor_week: None,
            }],
            buckets: vec![],
            landmarks: vec![],
        };
        let target = render_target(&bundle, &SerializerConfig::default());
        assert_eq!(
            target,
            "Task 1 is forecasting:\n\
             3 weeks later, the patient visited and experienced the following: \n\
             \tneutrophils - 26499-4 is 3.4.\n\n\
             2 weeks later, the patient visited and experienced the following: \n\
             \tneutrophils - 26499-4 is 4.6.\n\n"
        );
    }
}
