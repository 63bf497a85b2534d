use std::collections::BTreeMap;
use std::fs::File;

use anyhow::Context;
use journey::cohort::{ingest_event_log, CohortStore, Partition, PatientRecord};
use journey::par::Executor;
use journey::rng::{STREAM_PARTITION, STREAM_SAMPLING, STREAM_SPLIT};
use journey::sampling::{build_bundles, SamplingError, TaskSelection};
use journey::serializer::{render_pair, ByteEstimate};
use serde::Serialize;

use super::{DatasetRow, COHORT_FILE, DATASET_FILE, ERRORS_FILE};
use crate::config::PipelineConfig;
use crate::error::invalid;
use crate::run::{table, Run};
use crate::BuildArgs;

/// A skipped input line or prompt.
#[derive(Debug, Clone, Serialize)]
struct BuildIssue {
    source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    patient_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split_week: Option<u32>,
    reason: String,
}

/// Bundles and prompt pairs for every patient, in patient order. Prompts that
/// do not fit the context budget come back as issues.
pub fn build_rows(
    store: &CohortStore,
    config: &PipelineConfig,
    tasks: TaskSelection,
    executor: &Executor,
) -> Result<(Vec<DatasetRow>, Vec<(String, u32, String)>), SamplingError> {
    let records: Vec<&PatientRecord> = store.records.values().collect();
    let per_patient = executor.try_map(&records, |record| {
        let bundles = build_bundles(
            record,
            &store.stats,
            &config.split,
            tasks,
            store.global_cutoff_week,
            config.seed,
        )?;
        let partition = store
            .partition_of(&record.patient_id)
            .unwrap_or(Partition::Train);
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        let mut pass = 0;
        let mut last_split = None;
        for bundle in bundles {
            pass = if last_split == Some(bundle.split_week) { pass + 1 } else { 0 };
            last_split = Some(bundle.split_week);
            match render_pair(record, &bundle, &config.serializer, &ByteEstimate) {
                Ok(pair) => rows.push(DatasetRow {
                    partition,
                    pass,
                    pair,
                    bundle,
                }),
                Err(e) => skipped.push((bundle.patient_id.clone(), bundle.split_week, e.to_string())),
            }
        }
        Ok((rows, skipped))
    })?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (r, s) in per_patient {
        rows.extend(r);
        skipped.extend(s);
    }
    Ok((rows, skipped))
}

pub fn build_dataset(
    run: &mut Run,
    mut config: PipelineConfig,
    executor: &Executor,
    args: &BuildArgs,
) -> anyhow::Result<()> {
    let tasks = args.tasks.unwrap_or_default();
    if let Some(n) = args.splits_per_line {
        config.split.splits_per_line = n;
    }
    if let Some(n) = args.subset_passes {
        config.split.subset_passes = n;
    }
    if tasks.buckets {
        config.serializer.quintile_task_enabled = true;
    }
    run.config(&serde_json::json!({
        "cohort": &config.cohort,
        "split": &config.split,
        "serializer": &config.serializer,
        "tasks": tasks,
    }));
    run.streams(&[STREAM_PARTITION, STREAM_SPLIT, STREAM_SAMPLING]);
    run.input("events", &args.events);
    config.split.validate()?;
    run.prepare()?;

    run.stage("ingest");
    let f = File::open(&args.events)
        .with_context(|| format!("opening event log {}", args.events.display()))?;
    let report = ingest_event_log(f)?;
    if report.patients.is_empty() {
        return Err(invalid(format!(
            "event log {} holds no valid events ({} malformed lines)",
            args.events.display(),
            report.malformed
        )));
    }
    let mut issues: Vec<BuildIssue> = report
        .errors
        .iter()
        .map(|e| BuildIssue {
            source: "event_log",
            line: Some(e.line),
            patient_id: None,
            split_week: None,
            reason: e.reason.clone(),
        })
        .collect();

    run.stage("cohort");
    let store = CohortStore::build(&report.patients, &config.cohort)?;
    run.write_with(COHORT_FILE, |w| Ok(store.write_jsonl(w)?))?;

    run.stage("prompts");
    let (rows, skipped) = build_rows(&store, &config, tasks, executor)?;
    issues.extend(skipped.into_iter().map(|(pid, week, reason)| BuildIssue {
        source: "serializer",
        line: None,
        patient_id: Some(pid),
        split_week: Some(week),
        reason,
    }));

    run.stage("write");
    run.write_jsonl(DATASET_FILE, &rows)?;
    run.write_jsonl(ERRORS_FILE, &issues)?;

    let mut per_part: BTreeMap<Partition, (usize, usize)> = BTreeMap::new();
    for pid in store.records.keys() {
        per_part.entry(store.partition_of(pid).unwrap_or(Partition::Train)).or_default().0 += 1;
    }
    for row in &rows {
        per_part.entry(row.partition).or_default().1 += 1;
    }
    let splits = rows.iter().filter(|r| r.pass == 0).count();
    run.count("events", report.event_count());
    run.count("malformed_lines", report.malformed);
    run.count("patients", store.records.len());
    run.count("variables_retained", store.stats.sampling_pool().len());
    run.count("splits", splits);
    run.count("prompts", rows.len());
    run.count("prompts_skipped", issues.len() - report.errors.len());
    for (part, (patients, prompts)) in &per_part {
        let name = format!("{part:?}").to_lowercase();
        run.count(&format!("patients_{name}"), *patients);
        run.count(&format!("prompts_{name}"), *prompts);
    }

    let table_rows: Vec<Vec<String>> = per_part
        .iter()
        .map(|(part, (p, n))| {
            vec![format!("{part:?}").to_lowercase(), p.to_string(), n.to_string()]
        })
        .collect();
    let mut text = table(&["partition", "patients", "prompts"], &table_rows);
    text.push_str(&format!(
        "\n{} events read, {} malformed lines, {} prompts over budget\n",
        report.event_count(),
        report.malformed,
        issues.len() - report.errors.len()
    ));
    run.summary(&text)
}
