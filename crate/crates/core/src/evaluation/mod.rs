//! Metrics, cross-validation protocols and the model-comparison ledger.

mod folds;
mod ledger;
mod metrics;

pub use folds::{
    benchmark_protocols, cross_validate, holdout, kfold, make_folds, run_protocol, stratified_kfold, FoldPredictions,
    Folds, Gold, Protocol,
};
pub use ledger::{
    compare, compare_with, discrepancy_report, discrepancy_text, load_scores, published_comparison,
    published_scores, read_comparison, read_scores, verdict, ComparisonLedger, PairCounts, Reading, ReadingResult, ScoreRecord,
    ScoreTable, Verdict, DEFAULT_THRESHOLD,
};
pub use metrics::{compute_metrics, Correlation, MetricReport, Metrics, Outcomes};
