//! Lesion- and slice-level metrics, threshold sweeps and the comparison of
//! cost-aware training against post-training threshold adjustment.
//!
//! A detection hits a lesion when their boxes overlap at IoU ≥ 0.2. A slice
//! with at least one GT lesion is a slice-level TP when anything is detected
//! on it. Rates whose denominator is empty are NaN.

mod compare;
mod matching;
mod metrics;
mod output;
mod sweep;

pub use crate::geometry::iou;
pub use compare::{compare_cost_vs_threshold, compare_reports, match_sweep_row, ComparisonReport};
pub use matching::{match_lesions, LesionMatchResult, LESION_IOU};
pub use metrics::{
    aggregate, ratio, slice_confusion, slice_rates, FpDenominator, LesionCounts, MetricsReport,
    SliceCounts, SliceEval,
};
pub use output::{comparison_svg, metrics_csv, metrics_csv_row, sweep_csv, METRICS_CSV_HEADER};
pub use sweep::{
    cache_candidates, check_thresholds, evaluate, threshold_grid, threshold_sweep, EvalConfig,
    SweepRow, THREADS_ENV,
};
