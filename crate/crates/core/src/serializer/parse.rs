use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::sampling::LandmarkLabel;

static TASK_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*Task\s+(\d+)\s+is\s+(.+?)\s*:\s*$").unwrap());
static WEEKS_LATER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\d+)\s+weeks?\s+later\b").unwrap());
static ITEM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(.+?)\s+is\s+(-?\d+(?:\.\d+)?)\s*[,.]?\s*$").unwrap()
});
static LAST_VALUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\t(.+?) was (-?\d+(?:\.\d+)?)$").unwrap()
});
static REQUEST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\t(.+?) the future weeks ?([\d, ]*)$").unwrap());
static EVENT_REQUEST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"censored (\d+) weeks from the last clinical visit and whether the event occurred or not: (.+)\.$").unwrap()
});
static EVENT_ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?is)the\s+event\s*\(\s*(.+?)\s*\)\s+was\s+(not\s+)?censored\s+and\s+(did\s+not\s+occur|occurred)",
    )
    .unwrap()
});

/// Numeric trajectories read back from one completion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodedTrajectory {
    pub split_week: u32,
    /// Variable to week offset to value.
    pub values: BTreeMap<String, BTreeMap<u32, f64>>,
    pub parse_errors: usize,
}

impl DecodedTrajectory {
    pub fn get(&self, variable: &str, offset: u32) -> Option<f64> {
        self.values.get(variable)?.get(&offset).copied()
    }
}

/// Per-key mean over several decoded completions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanTrajectory {
    pub split_week: u32,
    pub values: BTreeMap<String, BTreeMap<u32, f64>>,
    pub completions: usize,
    pub parse_errors: usize,
}

impl MeanTrajectory {
    pub fn get(&self, variable: &str, offset: u32) -> Option<f64> {
        self.values.get(variable)?.get(&offset).copied()
    }
}

/// Splits `text` into `(kind, body)` sections at `Task N is <kind>:` lines.
/// Text before the first header belongs to a section of kind `None`.
fn sections(text: &str) -> Vec<(Option<String>, Vec<&str>)> {
    let mut out: Vec<(Option<String>, Vec<&str>)> = vec![(None, Vec::new())];
    for line in text.lines() {
        if let Some(c) = TASK_HEADER.captures(line) {
            out.push((Some(c[2].to_lowercase()), Vec::new()));
        } else {
            out.last_mut().expect("non-empty").1.push(line);
        }
    }
    out
}

/// Reads numeric forecasts out of a completion. Only `forecasting` task
/// sections are read; text without any task header is read as a whole.
/// Names outside `variables`, lines that match nothing, and values before the
/// first `N weeks later` line count as parse errors.
pub fn parse_forecast_completion(
    text: &str,
    variables: &[String],
    split_week: u32,
) -> DecodedTrajectory {
    let mut out = DecodedTrajectory {
        split_week,
        ..Default::default()
    };
    let all = sections(text);
    let has_headers = all.len() > 1;
    let mut saw_structure = has_headers;
    for (kind, lines) in all {
        let wanted = match kind.as_deref() {
            None => !has_headers,
            Some(k) => k == "forecasting",
        };
        if !wanted {
            continue;
        }
        let mut offset: Option<u32> = None;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(c) = WEEKS_LATER.captures(line) {
                saw_structure = true;
                match c[1].parse::<u32>() {
                    Ok(n) => offset = Some(offset.unwrap_or(0).saturating_add(n)),
                    Err(_) => out.parse_errors += 1,
                }
                continue;
            }
            let Some(c) = ITEM.captures(line) else {
                out.parse_errors += 1;
                continue;
            };
            let name = c[1].trim();
            let value: Option<f64> = c[2].parse().ok().filter(|x: &f64| x.is_finite());
            match (offset, value) {
                (Some(w), Some(x)) if w > 0 && variables.iter().any(|v| v == name) => {
                    out.values
                        .entry(name.to_string())
                        .or_default()
                        .entry(w)
                        .or_insert(x);
                }
                _ => out.parse_errors += 1,
            }
        }
    }
    if out.values.is_empty() && out.parse_errors == 0 && !saw_structure && !text.trim().is_empty() {
        out.parse_errors = 1;
    }
    out
}

/// Reads a generated event answer. A censored answer is `Censored` whatever
/// the occurrence part says. `None` when the sentence is missing or names a
/// different event.
pub fn parse_event_answer(text: &str, event: &str) -> Option<LandmarkLabel> {
    let c = EVENT_ANSWER.captures(text)?;
    let named = c[1].split_whitespace().collect::<Vec<_>>().join(" ");
    let expected = event.split_whitespace().collect::<Vec<_>>().join(" ");
    if !named.eq_ignore_ascii_case(&expected) {
        return None;
    }
    if c.get(2).is_none() {
        return Some(LandmarkLabel::Censored);
    }
    if c[3].to_ascii_lowercase().starts_with("occurred") {
        Some(LandmarkLabel::Occurred)
    } else {
        Some(LandmarkLabel::NotOccurred)
    }
}

/// Averages several decoded completions key by key, over the completions that
/// contain each key. Keys for names outside `variables` are ignored.
pub fn average_completions(trajectories: &[DecodedTrajectory], variables: &[String]) -> MeanTrajectory {
    let mut collected: BTreeMap<String, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for traj in trajectories {
        for (name, series) in &traj.values {
            if !variables.contains(name) {
                continue;
            }
            for (&w, &x) in series {
                collected.entry(name.clone()).or_default().entry(w).or_default().push(x);
            }
        }
    }
    let values = collected
        .into_iter()
        .map(|(name, series)| {
            let means = series
                .into_iter()
                .map(|(w, mut xs)| {
                    // Sorted so the result is permutation invariant; summing
                    // offsets from the first value keeps identical inputs exact.
                    xs.sort_by(f64::total_cmp);
                    let base = xs[0];
                    let spread: f64 = xs.iter().map(|x| x - base).sum();
                    (w, base + spread / xs.len() as f64)
                })
                .collect();
            (name, means)
        })
        .collect();
    MeanTrajectory {
        split_week: trajectories.first().map_or(0, |t| t.split_week),
        values,
        completions: trajectories.len(),
        parse_errors: trajectories.iter().map(|t| t.parse_errors).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptTask {
    Forecast {
        id: usize,
        variables: Vec<(String, Vec<u32>)>,
    },
    Buckets {
        id: usize,
        variables: Vec<(String, Vec<u32>)>,
    },
    Event {
        id: usize,
        event: String,
        horizon: u32,
    },
    Other {
        id: usize,
    },
}

/// What a rendered prompt asks for, recovered from its text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptTasks {
    /// Last observed values, in prompt order.
    pub last_values: Vec<(String, f64)>,
    pub tasks: Vec<PromptTask>,
}

impl PromptTasks {
    pub fn last_value(&self, variable: &str) -> Option<f64> {
        self.last_values
            .iter()
            .find(|(v, _)| v == variable)
            .map(|&(_, x)| x)
    }
}

fn requests(lines: &[&str]) -> Vec<(String, Vec<u32>)> {
    lines
        .iter()
        .filter_map(|l| REQUEST.captures(l))
        .map(|c| {
            let weeks = c[2]
                .split(',')
                .filter_map(|w| w.trim().parse().ok())
                .collect();
            (c[1].to_string(), weeks)
        })
        .collect()
}

/// Recovers the last-values block and the numbered tasks of a prompt.
pub fn parse_prompt_tasks(prompt: &str) -> PromptTasks {
    let mut out = PromptTasks::default();
    let mut id = 0;
    for (kind, lines) in sections(prompt) {
        let Some(kind) = kind else {
            let mut in_block = false;
            for line in lines {
                if line == super::templates::LAST_VALUES_HEADER {
                    in_block = true;
                } else if in_block {
                    match LAST_VALUE.captures(line) {
                        Some(c) => {
                            if let Ok(x) = c[2].parse() {
                                out.last_values.push((c[1].to_string(), x));
                            }
                        }
                        None => in_block = false,
                    }
                }
            }
            continue;
        };
        id += 1;
        let task = match kind.as_str() {
            "forecasting" => PromptTask::Forecast {
                id,
                variables: requests(&lines),
            },
            "quintile forecasting" => PromptTask::Buckets {
                id,
                variables: requests(&lines),
            },
            "time to event prediction" => lines
                .iter()
                .find_map(|l| EVENT_REQUEST.captures(l))
                .and_then(|c| {
                    Some(PromptTask::Event {
                        id,
                        horizon: c[1].parse().ok()?,
                        event: c[2].to_string(),
                    })
                })
                .unwrap_or(PromptTask::Other { id }),
            _ => PromptTask::Other { id },
        };
        out.tasks.push(task);
    }
    out
}
