use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use selfgate::eval::{format_mean_std, mean_std};
use selfgate::trainer::{ConfigError, RunConfig, Task, Variant};

use crate::{load_data, to_json, train_into, write_file, CliError, TrainReport};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep_summary.json";

/// Grid of runs sharing one base config.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub layers: Vec<usize>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub base: RunConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.layers.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return Err(CliError::Usage("sweep needs at least one layer count, variant and seed".into()));
        }
        if self.layers.contains(&0) {
            return Err(CliError::Usage("layer counts must be at least 1".into()));
        }
        self.base.validate()?;
        Ok(())
    }

    /// Runs in table order: layers, then variant, then seed.
    pub fn runs(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &layers in &self.layers {
            for &variant in &self.variants {
                for &seed in &self.seeds {
                    let mut cfg = self.base.clone();
                    cfg.model.layers = layers;
                    cfg.variant = variant;
                    cfg.seed = seed;
                    out.push(cfg);
                }
            }
        }
        out
    }
}

/// Directory of one run inside the sweep output.
pub fn run_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join("runs")
        .join(format!("L{}-{}-s{}", cfg.model.layers, cfg.variant.as_str(), cfg.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub layers: usize,
    pub variant: Variant,
    pub seed: u64,
    /// Test metrics in CSV column order.
    pub metrics: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub layers: usize,
    pub variant: Variant,
    pub runs: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub columns: Vec<&'static str>,
    pub aggregates: Vec<Aggregate>,
}

fn columns(task: Task) -> Vec<&'static str> {
    match task {
        Task::NodeClassification => vec!["accuracy"],
        Task::LinkPrediction => vec!["MRR", "H@10", "H@3", "H@1"],
    }
}

fn metrics_of(report: &TrainReport) -> Vec<f64> {
    match (report.test.accuracy, report.test.link) {
        (Some(acc), _) => vec![acc],
        (None, Some(m)) => vec![m.mrr, m.hits10, m.hits3, m.hits1],
        (None, None) => Vec::new(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-(layers, variant) mean and sample std over the successful runs.
pub fn aggregate(spec: &SweepSpec, rows: &[SweepRow]) -> Vec<Aggregate> {
    let width = columns(spec.base.task).len();
    let mut out = Vec::new();
    for &layers in &spec.layers {
        for &variant in &spec.variants {
            let members: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.layers == layers && r.variant == variant && r.error.is_none())
                .collect();
            let stats: Vec<(f64, f64)> = (0..width)
                .map(|c| mean_std(&members.iter().map(|r| r.metrics[c]).collect::<Vec<_>>()))
                .collect();
            out.push(Aggregate {
                layers,
                variant,
                runs: members.len(),
                mean: stats.iter().map(|s| s.0).collect(),
                std: stats.iter().map(|s| s.1).collect(),
            });
        }
    }
    out
}

/// One row per run, then one `mean±std` row per (layers, variant).
pub fn sweep_csv(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let cols = columns(spec.base.task);
    let mut out = format!("layers,variant,seed,{},status\n", cols.join(","));
    for r in rows {
        let cells: Vec<String> = match &r.error {
            None => r.metrics.iter().map(|m| m.to_string()).collect(),
            Some(_) => vec![String::new(); cols.len()],
        };
        let status = r.error.as_deref().map_or_else(|| "ok".to_string(), csv_field);
        let _ = writeln!(out, "{},{},{},{},{status}", r.layers, r.variant.as_str(), r.seed, cells.join(","));
    }
    for &layers in &spec.layers {
        for &variant in &spec.variants {
            let members: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.layers == layers && r.variant == variant && r.error.is_none())
                .collect();
            let cells: Vec<String> = (0..cols.len())
                .map(|c| format_mean_std(&members.iter().map(|r| r.metrics[c]).collect::<Vec<_>>()))
                .collect();
            let _ = writeln!(
                out,
                "{layers},{},mean±std,{},{} of {} ok",
                variant.as_str(),
                cells.join(","),
                members.len(),
                spec.seeds.len()
            );
        }
    }
    out
}

/// Trains every run of `spec` with up to `jobs` runs in flight and writes
/// `sweep.csv`, `sweep_summary.json` and one artifact directory per run.
/// A failed run is recorded in its row and does not stop the sweep.
pub fn run_sweep(spec: &SweepSpec, out: &Path, jobs: usize) -> Result<Vec<SweepRow>, CliError> {
    spec.validate()?;
    if jobs == 0 {
        return Err(ConfigError::Invalid {
            field: "jobs".into(),
            message: "must be at least 1".into(),
        }
        .into());
    }
    let data = load_data(&spec.base)?;
    let runs = spec.runs();
    let results: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; runs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(runs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = runs.get(i) else { break };
                let outcome = train_into(cfg, &data, &run_dir(out, cfg));
                let row = SweepRow {
                    layers: cfg.model.layers,
                    variant: cfg.variant,
                    seed: cfg.seed,
                    metrics: outcome.as_ref().map(metrics_of).unwrap_or_default(),
                    error: outcome.err().map(|e| e.to_string()),
                };
                results.lock().expect("no poisoned workers")[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every run finished"))
        .collect();
    write_file(&out.join(SWEEP_CSV), sweep_csv(spec, &rows))?;
    let summary = SweepSummary {
        columns: columns(spec.base.task),
        aggregates: aggregate(spec, &rows),
    };
    write_file(&out.join(SWEEP_JSON), to_json(&summary))?;
    Ok(rows)
}
