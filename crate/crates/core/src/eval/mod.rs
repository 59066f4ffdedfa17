//! Splits, metrics and the experiment protocol.

pub mod experiment;
pub mod metrics;
pub mod split;

pub use experiment::{
    grid_search, grid_space, repeat_evaluate, repeat_runs, write_run_records, write_table, GridEntry, GridResult,
    MeanStd, MetricsReport, RepeatReport, RunRecord, Summary, TableRow,
};
pub use metrics::{auc, confusion_metrics, Confusion, ConfusionMetrics};
pub use split::{largest_remainder, split_labels, DEFAULT_RATIOS};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("class {0} outside {{0, 1}}")]
    InvalidClass(u8),
    #[error("AUC undefined for single-class input")]
    SingleClass,
    #[error("NaN score")]
    NanScore,
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("class {class} has {count} members; at least 3 are needed to stratify")]
    TooFewMembers { class: u8, count: usize },
    #[error("empty grid or seed list")]
    EmptyGrid,
    #[error("every run of the best configuration diverged")]
    AllDiverged,
    #[error("no runs")]
    NoRuns,
    #[error("run failed: {0}")]
    RunFailed(String),
    #[error(transparent)]
    Learning(#[from] crate::learning::LearningError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
