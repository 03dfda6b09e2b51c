//! Rank statistics and evaluation metrics.

mod metrics;
mod rank;
mod report;

use thiserror::Error;

pub use metrics::{
    effective_label, exact_match_overlap, exact_match_rate, exact_match_rates, exact_match_set, group_medians,
    label_in_function, median, rank_within, top_k_accuracy, LineSet, OverlapMatrix, TopKTable,
};
pub use rank::{mann_whitney_u, midranks, normal_p, roc_auc, MannWhitneyResult, MwuMethod, EXACT_MAX_PRODUCT};
pub use report::{overlap_csv, records_csv, report_csv, sweep_curves_csv, EvaluationReport, RunManifest, ALPHA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("both classes need at least one line")]
    EmptyClass,
    #[error("empty group")]
    EmptyGroup,
    #[error("function {0:?} has no scored lines or no vulnerable label")]
    FunctionWithoutLines(String),
    #[error("non-finite score {0}")]
    NonFinite(f64),
}
