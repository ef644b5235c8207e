//! Output files of a run.
//!
//! `results.jsonl` holds one record per stream followed by a summary line.
//! `table.csv` is the flat `stream,accuracy,forgetting` view; it carries no
//! timings, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::config::StreamConfig;
use crate::harness::metrics::{average_incremental_accuracy, mean_forgetting};
use crate::harness::runner::StreamRun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub streams: usize,
    /// `None` for a single-stream run.
    pub average_incremental_accuracy: Option<f64>,
    pub mean_forgetting: Option<f64>,
    pub final_accuracy: f64,
    pub stored_exemplars: usize,
    pub wall_time_secs: f64,
}

impl RunSummary {
    pub fn of(run: &StreamRun) -> Self {
        let m = &run.metrics;
        Self {
            streams: m.streams(),
            average_incremental_accuracy: average_incremental_accuracy(m).ok(),
            mean_forgetting: mean_forgetting(m),
            final_accuracy: m.overall_accuracy.last().copied().unwrap_or(0.0),
            stored_exemplars: run.memory.sample_count(),
            wall_time_secs: m.wall_time_secs.iter().sum(),
        }
    }
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    summary: &'a RunSummary,
    config: &'a StreamConfig,
}

pub fn format_table(run: &StreamRun) -> String {
    let mut out = String::from("stream,accuracy,forgetting\n");
    for r in &run.records {
        let f = r.forgetting.map(|f| format!("{f:.6}")).unwrap_or_default();
        writeln!(out, "{},{:.6},{}", r.stream, r.overall_accuracy, f).expect("string write");
    }
    out
}

pub fn format_results(config: &StreamConfig, run: &StreamRun) -> Result<String> {
    let mut out = String::new();
    for r in &run.records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    let summary = RunSummary::of(run);
    out.push_str(&serde_json::to_string(&SummaryLine { summary: &summary, config })?);
    out.push('\n');
    Ok(out)
}

/// Writes `results.jsonl`, `table.csv` and the resolved `config.toml` into `dir`.
pub fn write_run(dir: &Path, config: &StreamConfig, run: &StreamRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.jsonl"), format_results(config, run)?)?;
    fs::write(dir.join("table.csv"), format_table(run))?;
    fs::write(dir.join("config.toml"), config.to_toml_string())?;
    Ok(())
}

/// One row of an ablation or sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub epsilon: f64,
    pub average_incremental_accuracy: Option<f64>,
    pub mean_forgetting: Option<f64>,
}

pub fn format_arm_table(rows: &[ArmResult]) -> String {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut out = String::from("arm,seed,epsilon,average_incremental_accuracy,mean_forgetting\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.arm,
            r.seed,
            r.epsilon,
            opt(r.average_incremental_accuracy),
            opt(r.mean_forgetting)
        )
        .expect("string write");
    }
    out
}
