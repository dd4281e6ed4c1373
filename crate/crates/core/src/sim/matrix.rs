//! Batches of runs over seeds, aggregated into one row per configuration.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, run, Metrics, SimError};
use crate::instance::{GuidanceMode, RunConfig, TaskSource};

fn default_seeds() -> usize {
    25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixEntry {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub config: RunConfig,
}

/// A set of configurations, each run once per seed. Seed `i` is shared by
/// every configuration so cells are compared on the same task streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixSpec {
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub configs: Vec<MatrixEntry>,
}

impl MatrixSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The seed used by run `index` of every configuration.
    pub fn seed(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, index as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixRow {
    pub label: String,
    pub map: String,
    pub agents: usize,
    pub frequency: Option<f64>,
    pub delay_p: f64,
    pub runs: usize,
    pub failures: usize,
    pub incomplete: usize,
    /// Mean over runs that completed at least one task.
    pub st: Option<f64>,
    pub rt: f64,
    pub tp: f64,
    pub iters: f64,
    pub completed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub config: usize,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixTable {
    pub rows: Vec<MatrixRow>,
    pub runs: Vec<RunOutcome>,
}

impl MatrixTable {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let text = self
            .to_csv()
            .map_err(|e| SimError::Output(path.to_path_buf(), e.into()))?;
        std::fs::write(path, text).map_err(|e| SimError::Output(path.to_path_buf(), e))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs every configuration once per seed, in parallel across runs. A failed
/// run is recorded in its cell and the rest of the matrix continues.
pub fn run_matrix(spec: &MatrixSpec) -> MatrixTable {
    let jobs: Vec<(usize, u64)> = (0..spec.configs.len())
        .flat_map(|c| (0..spec.seeds).map(move |i| (c, spec.seed(i))))
        .collect();
    let runs: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let mut cfg = spec.configs[c].config.clone();
            cfg.seed = seed;
            cfg.metrics_out = None;
            cfg.trace_out = None;
            match run(&cfg) {
                Ok(r) => RunOutcome {
                    config: c,
                    seed,
                    metrics: Some(r.metrics),
                    error: None,
                },
                Err(e) => RunOutcome {
                    config: c,
                    seed,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let rows = spec
        .configs
        .iter()
        .enumerate()
        .map(|(c, entry)| {
            let cfg = &entry.config;
            let cell: Vec<&RunOutcome> = runs.iter().filter(|r| r.config == c).collect();
            let ok: Vec<&Metrics> = cell.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let frequency = match &cfg.tasks {
                TaskSource::Generate { frequency, .. } => Some(frequency.as_f64()),
                TaskSource::File(_) => None,
            };
            MatrixRow {
                label: entry.label.clone().unwrap_or_else(|| default_label(cfg)),
                map: cfg.map.display().to_string(),
                agents: cfg.agents,
                frequency,
                delay_p: cfg.delay_p,
                runs: cell.len(),
                failures: cell.len() - ok.len(),
                incomplete: ok.iter().filter(|m| m.incomplete).count(),
                st: mean(ok.iter().filter_map(|m| m.st)),
                rt: mean(ok.iter().map(|m| m.rt)).unwrap_or(0.0),
                tp: mean(ok.iter().map(|m| m.tp)).unwrap_or(0.0),
                iters: mean(ok.iter().map(|m| m.iters)).unwrap_or(0.0),
                completed: mean(ok.iter().map(|m| m.completed as f64)).unwrap_or(0.0),
            }
        })
        .collect();
    MatrixTable { rows, runs }
}

fn default_label(cfg: &RunConfig) -> String {
    let map = cfg
        .map
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let guidance = match &cfg.guidance {
        GuidanceMode::Zero => "zero",
        GuidanceMode::File(_) => "file",
        GuidanceMode::Subprocess(_) => "remote",
    };
    format!("{map}/a{}/p{}/{guidance}", cfg.agents, cfg.delay_p)
}
