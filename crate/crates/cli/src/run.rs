use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ErrorRecord;

/// One per run, written to `<out>/manifest.json` whether or not the run
/// succeeded. Identical runs differ only in `timings_ms`, `jobs` and the
/// input and output paths.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub status: String,
    pub seed: u64,
    pub jobs: usize,
    pub random_streams: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counters: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
    pub timings_ms: BTreeMap<String, u64>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Per-run bookkeeping shared by all commands.
pub struct Run {
    pub out: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
    stage: Option<(String, Instant)>,
}

impl Run {
    pub fn new(command: &str, out: &Path, seed: u64, jobs: usize) -> Self {
        Run {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                status: "running".into(),
                seed,
                jobs,
                random_streams: Vec::new(),
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                counters: BTreeMap::new(),
                error: None,
                timings_ms: BTreeMap::new(),
            },
            started: Instant::now(),
            stage: None,
        }
    }

    pub fn prepare(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        self.manifest.config = serde_json::to_value(config).unwrap_or_default();
    }

    pub fn streams(&mut self, names: &[&str]) {
        self.manifest.random_streams = names.iter().map(|s| s.to_string()).collect();
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest
            .inputs
            .insert(name.to_string(), path.display().to_string());
    }

    pub fn count(&mut self, name: &str, value: usize) {
        self.manifest.counters.insert(name.to_string(), value as u64);
    }

    /// Starts timing a named stage, closing the previous one.
    pub fn stage(&mut self, name: &str) {
        self.close_stage();
        self.stage = Some((name.to_string(), Instant::now()));
    }

    fn close_stage(&mut self) {
        if let Some((name, t)) = self.stage.take() {
            self.manifest
                .timings_ms
                .insert(name, t.elapsed().as_millis() as u64);
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn output(&mut self, file: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.path(file);
        self.manifest
            .outputs
            .insert(file.to_string(), path.display().to_string());
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    /// Writes one JSON record per line, in the given order.
    pub fn write_jsonl<T: Serialize>(&mut self, file: &str, rows: &[T]) -> anyhow::Result<()> {
        let mut w = self.output(file)?;
        for row in rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> anyhow::Result<()> {
        let mut w = self.output(file)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn write_with<F>(&mut self, file: &str, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
    {
        let mut w = self.output(file)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Saves the summary table and echoes it on stdout.
    pub fn summary(&mut self, text: &str) -> anyhow::Result<()> {
        self.write_with(SUMMARY_FILE, |w| Ok(w.write_all(text.as_bytes())?))?;
        print!("{text}");
        Ok(())
    }

    /// Records the outcome and writes the manifest. Failures to write it are
    /// returned but never mask the command's own error.
    pub fn finish(&mut self, error: Option<ErrorRecord>) -> anyhow::Result<()> {
        self.close_stage();
        self.manifest
            .timings_ms
            .insert("total".into(), self.started.elapsed().as_millis() as u64);
        self.manifest.status = if error.is_some() { "failed" } else { "ok" }.into();
        self.manifest.error = error;
        fs::create_dir_all(&self.out)?;
        let path = self.path(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// A line that could not be read, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub file: String,
    pub line: u64,
    pub reason: String,
}

/// Reads a JSON-lines file. Blank lines are skipped; lines that do not parse
/// are returned as errors and do not stop the read.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<(Vec<(u64, T)>, Vec<RowError>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in BufReader::new(f).split(b'\n').enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        let line_no = idx as u64 + 1;
        let text = String::from_utf8_lossy(&line);
        if text.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&text) {
            Ok(row) => rows.push((line_no, row)),
            Err(e) => errors.push(RowError {
                file: path.display().to_string(),
                line: line_no,
                reason: e.to_string(),
            }),
        }
    }
    Ok((rows, errors))
}

/// Fixed-width text table; the first column is left-aligned, the rest right.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                s.push_str(&format!("{cell:<w$}"));
            } else {
                s.push_str(&format!("{cell:>w$}"));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(rule.iter().map(String::as_str).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn fmt_opt(x: Option<f64>, dp: usize) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.dp$}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_columns() {
        let t = table(
            &["variable", "mase"],
            &[vec!["a".into(), "1.000".into()], vec!["longer".into(), "0.5".into()]],
        );
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "variable   mase");
        assert_eq!(lines[1], "--------  -----");
        assert_eq!(lines[2], "a         1.000");
        assert_eq!(lines[3], "longer      0.5");
    }

    #[test]
    fn bad_rows_are_reported_by_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        fs::write(&path, "{\"a\":1}\n\nnot json\n{\"a\":2}\n").unwrap();
        let (rows, errors) = read_jsonl::<serde_json::Value>(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].0, 4);
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].line, 3);
    }
}
