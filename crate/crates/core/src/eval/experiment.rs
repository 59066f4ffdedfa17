//! Grid search, repeated evaluation and result artifacts.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::learning::model::{Channel, ModelConfig, BATCH_NORM_GRID, HIDDEN_GRID, LR_GRID};
use crate::learning::train::{evaluate_run, train, SplitScores, TrainData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub binary_f1: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl From<&SplitScores> for MetricsReport {
    fn from(s: &SplitScores) -> Self {
        let m = &s.metrics;
        Self {
            precision: m.precision,
            recall: m.recall,
            binary_f1: m.binary_f1,
            macro_f1: m.macro_f1,
            auc: s.auc,
            tp: m.confusion.tp,
            fp: m.confusion.fp,
            tn: m.confusion.tn,
            fn_: m.confusion.fn_,
        }
    }
}

/// Outcome of one training run; `error` is set when the run diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ModelConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub val: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn file_name(&self) -> String {
        let c = &self.config;
        format!(
            "{}-h{}-lr{}-{}-seed{}.json",
            c.channel,
            c.hidden_dim,
            c.lr,
            if c.batch_norm { "bn" } else { "nobn" },
            self.seed
        )
    }
}

/// Trains `config` with `seed` and scores validation and test masks.
/// Divergence is recorded in the returned record; other failures are errors.
pub fn run_once(config: &ModelConfig, data: &TrainData<'_>, seed: u64) -> Result<RunRecord, EvalError> {
    let cfg = ModelConfig { seed, ..config.clone() };
    match train(data, &cfg) {
        Ok(run) => {
            let val = evaluate_run(&run, data, &data.masks.val)?;
            let test = evaluate_run(&run, data, &data.masks.test)?;
            Ok(RunRecord {
                config: cfg,
                seed,
                best_epoch: run.best.epoch,
                val: Some((&val).into()),
                test: Some((&test).into()),
                error: None,
            })
        }
        Err(e @ crate::learning::LearningError::Diverged { .. }) => {
            log::warn!("{e}");
            Ok(RunRecord {
                config: cfg,
                seed,
                best_epoch: 0,
                val: None,
                test: None,
                error: Some(e.to_string()),
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// The hyperparameter grid for one channel: batch-norm x hidden x learning rate.
pub fn grid_space(base: &ModelConfig, channel: Channel) -> Vec<ModelConfig> {
    let mut out = Vec::with_capacity(BATCH_NORM_GRID.len() * HIDDEN_GRID.len() * LR_GRID.len());
    for &batch_norm in &BATCH_NORM_GRID {
        for &hidden_dim in &HIDDEN_GRID {
            for &lr in &LR_GRID {
                out.push(ModelConfig {
                    channel,
                    batch_norm,
                    hidden_dim,
                    lr,
                    seed: 0,
                    ..base.clone()
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: ModelConfig,
    pub mean_val_macro_f1: f64,
    pub mean_val_auc: f64,
    pub diverged: usize,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ModelConfig,
    /// Best first.
    pub leaderboard: Vec<GridEntry>,
}

/// Lexicographic order over the configuration fields, used as the last tie-break.
pub fn config_order(a: &ModelConfig, b: &ModelConfig) -> Ordering {
    a.channel
        .cmp(&b.channel)
        .then(a.hidden_dim.cmp(&b.hidden_dim))
        .then(a.lr.total_cmp(&b.lr))
        .then(a.batch_norm.cmp(&b.batch_norm))
        .then(a.layers.cmp(&b.layers))
        .then(a.dropout.total_cmp(&b.dropout))
        .then(a.weight_decay.total_cmp(&b.weight_decay))
        .then(a.epochs.cmp(&b.epochs))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NEG_INFINITY
    } else {
        s / n as f64
    }
}

fn entry(config: ModelConfig, runs: Vec<RunRecord>) -> GridEntry {
    let ok: Vec<&MetricsReport> = runs.iter().filter_map(|r| r.val.as_ref()).collect();
    GridEntry {
        mean_val_macro_f1: mean(ok.iter().map(|m| m.macro_f1)),
        mean_val_auc: mean(ok.iter().map(|m| m.auc.unwrap_or(0.5))),
        diverged: runs.len() - ok.len(),
        config,
        runs,
    }
}

/// Descending by mean validation macro-F1, then mean validation AUC, then
/// ascending [`config_order`].
pub fn rank(leaderboard: &mut [GridEntry]) {
    leaderboard.sort_by(|a, b| {
        b.mean_val_macro_f1
            .total_cmp(&a.mean_val_macro_f1)
            .then(b.mean_val_auc.total_cmp(&a.mean_val_auc))
            .then(config_order(&a.config, &b.config))
    });
}

/// Trains every configuration with every seed (in parallel) and ranks them.
pub fn grid_search(space: &[ModelConfig], data: &TrainData<'_>, seeds: &[u64]) -> Result<GridResult, EvalError> {
    if space.is_empty() || seeds.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let jobs: Vec<(usize, u64)> = (0..space.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(c, s)| run_once(&space[c], data, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut records = records.into_iter();
    let mut leaderboard: Vec<GridEntry> = space
        .iter()
        .map(|cfg| entry(cfg.clone(), records.by_ref().take(seeds.len()).collect()))
        .collect();
    rank(&mut leaderboard);
    let top = &leaderboard[0];
    if top.diverged == top.runs.len() {
        return Err(EvalError::AllDiverged);
    }
    Ok(GridResult {
        best: top.config.clone(),
        leaderboard,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Percentages, `mm.mm ± ss.ss`.
impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub binary_f1: MeanStd,
    pub macro_f1: MeanStd,
    pub auc: MeanStd,
}

impl Summary {
    pub fn from_reports(reports: &[&MetricsReport]) -> Result<Self, EvalError> {
        if reports.is_empty() {
            return Err(EvalError::NoRuns);
        }
        let col = |f: &dyn Fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Ok(Self {
            precision: col(&|r| r.precision),
            recall: col(&|r| r.recall),
            binary_f1: col(&|r| r.binary_f1),
            macro_f1: col(&|r| r.macro_f1),
            auc: col(&|r| r.auc.unwrap_or(f64::NAN)),
        })
    }

    pub fn cells(&self) -> [String; 5] {
        [self.precision, self.recall, self.binary_f1, self.macro_f1, self.auc].map(|m| m.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub config: ModelConfig,
    pub runs: Vec<RunRecord>,
    /// Test-mask statistics over the runs.
    pub summary: Summary,
}

impl RepeatReport {
    /// Summarizes existing runs of one configuration; fails if any diverged.
    pub fn from_runs(config: ModelConfig, runs: Vec<RunRecord>) -> Result<Self, EvalError> {
        let mut tests = Vec::with_capacity(runs.len());
        for r in &runs {
            match (&r.test, &r.error) {
                (Some(t), None) => tests.push(t),
                _ => {
                    return Err(EvalError::RunFailed(
                        r.error.clone().unwrap_or_else(|| "missing test metrics".into()),
                    ))
                }
            }
        }
        let summary = Summary::from_reports(&tests)?;
        Ok(Self { config, runs, summary })
    }
}

/// Trains `config` once per entry of `data`, with seeds `base_seed + i`.
/// Passing the same bundle repeatedly reseeds training only; passing
/// differently split bundles reshuffles as well.
pub fn repeat_runs(config: &ModelConfig, data: &[TrainData<'_>], base_seed: u64) -> Result<RepeatReport, EvalError> {
    if data.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let runs = data
        .par_iter()
        .enumerate()
        .map(|(i, d)| run_once(config, d, base_seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    RepeatReport::from_runs(ModelConfig { seed: base_seed, ..config.clone() }, runs)
}

pub fn repeat_evaluate(
    config: &ModelConfig,
    data: &TrainData<'_>,
    n_runs: usize,
    base_seed: u64,
) -> Result<RepeatReport, EvalError> {
    repeat_runs(config, &vec![*data; n_runs], base_seed)
}

/// Writes one JSON file per run into `dir`, returning the paths.
pub fn write_run_records(dir: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(dir)?;
    records
        .iter()
        .map(|r| {
            let path = dir.join(r.file_name());
            fs::write(&path, serde_json::to_vec_pretty(r)?)?;
            Ok(path)
        })
        .collect()
}

pub const TABLE_HEADER: [&str; 7] = ["Graph", "Method", "Precision", "Recall", "Binary F1", "Macro F1", "AUC"];

pub struct TableRow<'a> {
    pub graph: &'a str,
    pub method: &'a str,
    pub summary: &'a Summary,
}

/// Writes the comparison table as CSV, one row per graph/method.
pub fn write_table<W: Write>(w: W, rows: &[TableRow<'_>]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TABLE_HEADER)?;
    for row in rows {
        let cells = row.summary.cells();
        out.write_record([row.graph, row.method].into_iter().chain(cells.iter().map(String::as_str)))?;
    }
    out.flush()?;
    Ok(())
}
