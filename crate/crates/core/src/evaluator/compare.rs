use serde::{Deserialize, Serialize};

use super::metrics::{nan_as_null, MetricsReport};
use super::sweep::{cache_candidates, check_thresholds, sweep_cached, EvalConfig, SweepRow};
use crate::detector::Model;
use crate::error::{Error, Result};
use crate::syndata::SyntheticSlice;

/// Cost-trained operating point against the threshold-adjusted baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Lesion FNR of the cost-trained model at its own threshold.
    #[serde(with = "nan_as_null")]
    pub target_fnr: f64,
    pub cost: MetricsReport,
    /// Baseline sweep row selected to match `target_fnr`.
    pub baseline_matched: SweepRow,
    /// True when no sweep row reaches FNR ≤ target; the closest row is reported.
    pub unreachable: bool,
    /// `cost − baseline_matched` differences.
    #[serde(with = "nan_as_null")]
    pub delta_fp_per_slice: f64,
    #[serde(with = "nan_as_null")]
    pub delta_lesion_fnr: f64,
    #[serde(with = "nan_as_null")]
    pub delta_slice_fpr: f64,
    #[serde(with = "nan_as_null")]
    pub delta_slice_fnr: f64,
    /// Whether the cost model's FP-per-slice is at most the matched baseline's.
    pub cost_fp_not_worse: bool,
    pub baseline_sweep: Vec<SweepRow>,
}

impl ComparisonReport {
    /// One-line summary in the "FP x vs y at matched FNR" framing.
    pub fn summary(&self) -> String {
        format!(
            "cost-trained FP/slice {:.4} at lesion FNR {:.4} (t={}) vs threshold-matched baseline FP/slice {:.4} at FNR {:.4} (t={}){}",
            self.cost.lesion_fp_per_slice,
            self.target_fnr,
            self.cost.threshold,
            self.baseline_matched.report.lesion_fp_per_slice,
            self.baseline_matched.report.lesion_fnr,
            self.baseline_matched.threshold,
            if self.unreachable { " [target FNR unreachable, closest shown]" } else { "" }
        )
    }
}

/// Picks the sweep row matching `target` lesion FNR: among rows with
/// FNR ≤ target the largest FNR wins, ties going to the threshold nearest
/// `prefer_threshold`. Without such a row, the row with the nearest FNR is
/// returned and the flag is set.
pub fn match_sweep_row(
    sweep: &[SweepRow],
    target: f64,
    prefer_threshold: f64,
) -> Result<(usize, bool)> {
    if sweep.is_empty() {
        return Err(Error::Config("empty baseline sweep".into()));
    }
    let dist = |i: usize| (sweep[i].threshold - prefer_threshold).abs();
    let by_closeness = |a: &usize, b: &usize| dist(*a).total_cmp(&dist(*b)).then(a.cmp(b));
    let fnr = |i: usize| sweep[i].report.lesion_fnr;

    if target.is_nan() {
        let best = (0..sweep.len()).min_by(by_closeness).expect("non-empty");
        return Ok((best, true));
    }
    let eligible: Vec<usize> = (0..sweep.len())
        .filter(|&i| fnr(i).is_finite() && fnr(i) <= target)
        .collect();
    if let Some(best_fnr) = eligible.iter().map(|&i| fnr(i)).max_by(f64::total_cmp) {
        let best = eligible
            .into_iter()
            .filter(|&i| fnr(i) == best_fnr)
            .min_by(by_closeness)
            .expect("non-empty");
        return Ok((best, false));
    }
    let best = (0..sweep.len())
        .filter(|&i| fnr(i).is_finite())
        .min_by(|&a, &b| {
            (fnr(a) - target)
                .abs()
                .total_cmp(&(fnr(b) - target).abs())
                .then_with(|| by_closeness(&a, &b))
        })
        .unwrap_or(0);
    Ok((best, true))
}

/// Builds the comparison from an already computed cost-model report and
/// baseline sweep.
pub fn compare_reports(
    cost: MetricsReport,
    baseline_sweep: Vec<SweepRow>,
) -> Result<ComparisonReport> {
    let target = cost.lesion_fnr;
    let (i, unreachable) = match_sweep_row(&baseline_sweep, target, cost.threshold)?;
    let m = baseline_sweep[i].clone();
    let b = &m.report;
    let delta_fp = cost.lesion_fp_per_slice - b.lesion_fp_per_slice;
    Ok(ComparisonReport {
        target_fnr: target,
        delta_fp_per_slice: delta_fp,
        delta_lesion_fnr: cost.lesion_fnr - b.lesion_fnr,
        delta_slice_fpr: cost.slice_fpr - b.slice_fpr,
        delta_slice_fnr: cost.slice_fnr - b.slice_fnr,
        cost_fp_not_worse: cost.lesion_fp_per_slice <= b.lesion_fp_per_slice,
        unreachable,
        cost,
        baseline_matched: m,
        baseline_sweep,
    })
}

/// Evaluates the cost-trained model at `cfg.infer.threshold`, sweeps the
/// baseline over `grid` (plus that threshold) on the same slices, and
/// matches the two at the cost model's lesion FNR.
pub fn compare_cost_vs_threshold(
    baseline: &Model,
    cost_model: &Model,
    slices: &[&SyntheticSlice],
    grid: &[f64],
    cfg: &EvalConfig,
) -> Result<ComparisonReport> {
    check_thresholds(grid)?;
    if slices.is_empty() {
        return Err(Error::EmptySplit("no slices to compare on".into()));
    }
    let t = cfg.infer.threshold;
    let mut thresholds = grid.to_vec();
    if !thresholds.contains(&t) {
        thresholds.push(t);
        thresholds.sort_by(f64::total_cmp);
    }
    let cost_cands = cache_candidates(cost_model, slices)?;
    let cost = sweep_cached(slices, &cost_cands, &[t], cfg)?
        .remove(0)
        .report;
    let base_cands = if baseline == cost_model {
        cost_cands
    } else {
        cache_candidates(baseline, slices)?
    };
    let sweep = sweep_cached(slices, &base_cands, &thresholds, cfg)?;
    compare_reports(cost, sweep)
}
