use std::collections::{BTreeMap, BTreeSet};

use anyhow::Context;
use journey::backend::{Backend, GenerationRequest};
use journey::cohort::CohortStore;
use journey::metrics::{mase_report, top_k_varying, ForecastPoint, MaseReport};
use journey::par::Executor;
use journey::rng::{self, STREAM_MOCK_NOISE, STREAM_SAMPLING, STREAM_SPLIT};
use journey::sampling::TaskSelection;
use journey::serializer::{average_completions, parse_forecast_completion};
use serde::Serialize;

use super::dataset::build_rows;
use super::{
    load_store, DatasetRow, ERRORS_FILE, FORECAST_REPORT_FILE, PREDICTIONS_FILE,
    STREAM_GENERATION,
};
use crate::backend::{apply_flags, make_backend};
use crate::config::PipelineConfig;
use crate::error::invalid;
use crate::run::{fmt_opt, read_jsonl, table, RowError, Run};
use crate::ForecastArgs;

#[derive(Debug, Clone, Serialize)]
pub struct ForecastReport {
    pub partition: String,
    pub backend: String,
    pub m_samples: usize,
    pub subset_passes: Option<usize>,
    pub prompts: usize,
    pub completions: usize,
    pub parse_errors: usize,
    pub variables: Vec<String>,
    pub mase: MaseReport,
}

struct GroupOutcome {
    points: Vec<ForecastPoint>,
    prompts: usize,
    completions: usize,
    parse_errors: usize,
}

/// All passes of one (patient, split): completions from every pass are
/// averaged together, so a variable drawn in several passes gets one forecast.
fn evaluate_group(
    rows: &[&DatasetRow],
    store: &CohortStore,
    backend: &dyn Backend,
    config: &PipelineConfig,
) -> anyhow::Result<Option<GroupOutcome>> {
    let first = rows[0];
    let pid = &first.pair.patient_id;
    let split = first.pair.split_week;
    let Some(record) = store.records.get(pid) else {
        return Ok(None);
    };
    let eval = &config.evaluation;
    let mut decoded = Vec::new();
    let mut variables = BTreeSet::new();
    let mut truths: BTreeMap<(String, u32), f64> = BTreeMap::new();
    let mut prompts = 0;
    for row in rows {
        let vars = row.bundle.forecast_variables();
        if vars.is_empty() {
            continue;
        }
        prompts += 1;
        let request = GenerationRequest {
            prompt: row.pair.prompt.clone(),
            num_samples: eval.m_samples,
            max_new_tokens: eval.max_new_tokens,
            temperature: eval.temperature,
            seed: Some(rng::derive_u64(
                config.seed,
                STREAM_GENERATION,
                &format!("{pid}/{split}/{}", row.pass),
            )),
        };
        let completions = backend
            .generate(&request)
            .with_context(|| format!("generating for patient {pid} at week {split}"))?;
        decoded.extend(
            completions
                .iter()
                .map(|c| parse_forecast_completion(c, &vars, split)),
        );
        for target in &row.bundle.forecast {
            for (&offset, &truth) in &target.values {
                truths.entry((target.variable.clone(), offset)).or_insert(truth);
            }
        }
        variables.extend(vars);
    }
    let variables: Vec<String> = variables.into_iter().collect();
    let mean = average_completions(&decoded, &variables);
    let group = record.indication().unwrap_or("unknown").to_string();
    let points = truths
        .into_iter()
        .filter_map(|((variable, offset), truth)| {
            let (_, last) = record.last_value_until(&variable, split)?;
            Some(ForecastPoint {
                patient_id: pid.clone(),
                split_week: split,
                group: group.clone(),
                prediction: mean.get(&variable, offset),
                variable,
                offset,
                truth,
                last,
            })
        })
        .collect();
    Ok(Some(GroupOutcome {
        points,
        prompts,
        completions: decoded.len(),
        parse_errors: mean.parse_errors,
    }))
}

/// Forecast points of a set of dataset rows, in (patient, split) order.
pub struct ForecastRun {
    pub points: Vec<ForecastPoint>,
    pub splits: usize,
    pub prompts: usize,
    pub completions: usize,
    pub parse_errors: usize,
    /// Patients in the rows but not in the cohort store.
    pub unknown_patients: Vec<String>,
}

/// Generates, parses and averages completions for every (patient, split)
/// group of `rows`, pairing the mean forecast with truth and last value.
pub fn forecast_points(
    rows: &[DatasetRow],
    store: &CohortStore,
    backend: &dyn Backend,
    config: &PipelineConfig,
    executor: &Executor,
) -> anyhow::Result<ForecastRun> {
    let mut groups: BTreeMap<(&str, u32), Vec<&DatasetRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.pair.patient_id.as_str(), row.pair.split_week))
            .or_default()
            .push(row);
    }
    let groups: Vec<Vec<&DatasetRow>> = groups.into_values().collect();
    let outcomes = executor.try_map(&groups, |g| evaluate_group(g, store, backend, config))?;
    let mut out = ForecastRun {
        points: Vec::new(),
        splits: groups.len(),
        prompts: 0,
        completions: 0,
        parse_errors: 0,
        unknown_patients: Vec::new(),
    };
    for (group, outcome) in groups.iter().zip(outcomes) {
        match outcome {
            Some(o) => {
                out.points.extend(o.points);
                out.prompts += o.prompts;
                out.completions += o.completions;
                out.parse_errors += o.parse_errors;
            }
            None => out.unknown_patients.push(group[0].pair.patient_id.clone()),
        }
    }
    out.unknown_patients.dedup();
    Ok(out)
}

pub fn evaluate_forecast(
    run: &mut Run,
    mut config: PipelineConfig,
    executor: &Executor,
    jobs: usize,
    args: &ForecastArgs,
) -> anyhow::Result<()> {
    apply_flags(&mut config, &args.backend);
    let eval = &mut config.evaluation;
    if let Some(m) = args.m_samples {
        eval.m_samples = m;
    }
    if let Some(l) = args.subset_passes {
        eval.subset_passes = Some(l);
    }
    if let Some(p) = args.partition {
        eval.partition = p;
    }
    if let Some(k) = args.top_k {
        eval.top_k = Some(k);
    }
    eval.validate()?;
    run.config(&serde_json::json!({
        "evaluation": &config.evaluation,
        "split": &config.split,
        "serializer": &config.serializer,
    }));
    run.streams(&[STREAM_SPLIT, STREAM_SAMPLING, STREAM_GENERATION, STREAM_MOCK_NOISE]);
    run.input("cohort", &args.cohort);
    run.prepare()?;

    run.stage("load");
    let store = load_store(&args.cohort)?;
    let partition = config.evaluation.partition;
    let passes = config.evaluation.subset_passes;
    let mut row_errors: Vec<RowError> = Vec::new();
    let rows: Vec<DatasetRow> = match &args.dataset {
        Some(path) => {
            run.input("dataset", path);
            let (rows, errors) = read_jsonl::<DatasetRow>(path)?;
            row_errors = errors;
            rows.into_iter()
                .map(|(_, r)| r)
                .filter(|r| r.partition == partition && passes.is_none_or(|l| r.pass < l))
                .collect()
        }
        None => {
            config.split.subset_passes = passes.unwrap_or(1);
            config.split.validate()?;
            let tasks = TaskSelection {
                forecast: true,
                events: false,
                buckets: false,
            };
            build_rows(&store, &config, tasks, executor)?
                .0
                .into_iter()
                .filter(|r| r.partition == partition)
                .collect()
        }
    };
    let backend = make_backend(&config, &store, jobs)?;

    run.stage("generate");
    let outcome = forecast_points(&rows, &store, backend.as_ref(), &config, executor)?;
    let ForecastRun {
        points,
        splits,
        prompts,
        completions,
        parse_errors,
        unknown_patients,
    } = outcome;

    run.stage("score");
    for pid in &unknown_patients {
        row_errors.push(RowError {
            file: run.manifest.inputs.get("dataset").cloned().unwrap_or_default(),
            line: 0,
            reason: format!("patient {pid} is not in the cohort store"),
        });
    }
    let unknown = unknown_patients.len();
    let variables: Vec<String> = match config.evaluation.top_k {
        Some(k) => top_k_varying(&store.stats, k),
        None => points
            .iter()
            .map(|p| p.variable.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    if points.is_empty() {
        return Err(invalid(format!(
            "no forecast targets to evaluate in the {partition:?} partition"
        )));
    }
    let mase = mase_report(&points, &variables, Some(&store.stats));
    let report = ForecastReport {
        partition: format!("{partition:?}").to_lowercase(),
        backend: format!("{:?}", config.evaluation.backend).to_lowercase(),
        m_samples: config.evaluation.m_samples,
        subset_passes: passes,
        prompts,
        completions,
        parse_errors,
        variables,
        mase,
    };

    run.stage("write");
    run.write_jsonl(PREDICTIONS_FILE, &points)?;
    run.write_json(FORECAST_REPORT_FILE, &report)?;
    run.write_jsonl(ERRORS_FILE, &row_errors)?;
    run.count("patients", points.iter().map(|p| &p.patient_id).collect::<BTreeSet<_>>().len());
    run.count("splits", splits);
    run.count("prompts", prompts);
    run.count("completions", completions);
    run.count("parse_errors", parse_errors);
    run.count("forecast_points", points.len());
    run.count("missing_predictions", points.iter().filter(|p| p.prediction.is_none()).count());
    run.count("corrupt_rows", row_errors.len() - unknown);
    run.count("unknown_patients", unknown);

    run.summary(&summary_text(&report))
}

fn summary_text(report: &ForecastReport) -> String {
    let pooled = &report.mase.pooled;
    let rows: Vec<Vec<String>> = pooled
        .variables
        .values()
        .map(|r| {
            vec![
                r.variable.clone(),
                r.pairs.to_string(),
                r.missing_predictions.to_string(),
                fmt_opt(r.mase, 3),
            ]
        })
        .collect();
    let mut text = table(&["variable", "pairs", "missing", "MASE"], &rows);
    match &pooled.quartiles {
        Some(q) => text.push_str(&format!(
            "\nmedian MASE {:.3} (IQR {:.3} to {:.3}) over {} variables\n",
            q.median, q.q1, q.q3, pooled.evaluable
        )),
        None => text.push_str("\nno evaluable variables\n"),
    }
    text.push_str(&format!(
        "{} prompts, {} completions, {} parse errors\n",
        report.prompts, report.completions, report.parse_errors
    ));
    text
}
