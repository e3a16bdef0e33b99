use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::LESION_IOU;
use super::metrics::{aggregate, FpDenominator, MetricsReport, SliceEval};
use crate::detector::{filter_detections, Detection, DetectionSet, InferConfig, Model};
use crate::error::{Error, Result};
use crate::syndata::SyntheticSlice;

/// Environment variable capping the evaluation thread count.
pub const THREADS_ENV: &str = "COSTDET_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub infer: InferConfig,
    pub iou_thresh: f64,
    pub fp_denominator: FpDenominator,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            infer: InferConfig::default(),
            iou_thresh: LESION_IOU,
            fp_denominator: FpDenominator::All,
        }
    }
}

impl EvalConfig {
    pub fn with_threshold(mut self, t: f64) -> Self {
        self.infer.threshold = t;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub report: MetricsReport,
}

/// Runs `f` over `items` in parallel, capped by `COSTDET_THREADS` when set.
/// Output order always follows the input.
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    let run = || items.par_iter().map(&f).collect::<Result<Vec<U>>>();
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))?
            .install(run),
        _ => run(),
    }
}

/// Candidate detections per slice, computed once and reused across thresholds.
pub fn cache_candidates(model: &Model, slices: &[&SyntheticSlice]) -> Result<Vec<Vec<Detection>>> {
    par_map(slices, |s| model.candidates(s))
}

fn report_from_candidates(
    slices: &[&SyntheticSlice],
    cands: &[Vec<Detection>],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let evals: Vec<SliceEval> = slices
        .iter()
        .zip(cands)
        .map(|(s, c)| {
            let dets = DetectionSet {
                slice_id: s.slice_id.clone(),
                detections: filter_detections(c, &cfg.infer),
            };
            SliceEval::new(s, &dets, cfg.iou_thresh)
        })
        .collect();
    aggregate(&evals, cfg.infer.threshold, cfg.fp_denominator)
}

/// Inference plus metrics over a split. Errors on an empty split.
pub fn evaluate(
    model: &Model,
    slices: &[&SyntheticSlice],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if slices.is_empty() {
        return Err(Error::EmptySplit("no slices to evaluate".into()));
    }
    let cands = cache_candidates(model, slices)?;
    report_from_candidates(slices, &cands, cfg)
}

pub fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    if thresholds.iter().any(|t| !t.is_finite()) {
        return Err(Error::Config("thresholds must be finite".into()));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "thresholds must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// One inference pass, then metrics at every threshold of the grid
/// (`cfg.infer.threshold` is ignored).
pub fn threshold_sweep(
    model: &Model,
    slices: &[&SyntheticSlice],
    thresholds: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    check_thresholds(thresholds)?;
    if slices.is_empty() {
        return Err(Error::EmptySplit("no slices to sweep".into()));
    }
    let cands = cache_candidates(model, slices)?;
    sweep_cached(slices, &cands, thresholds, cfg)
}

pub(crate) fn sweep_cached(
    slices: &[&SyntheticSlice],
    cands: &[Vec<Detection>],
    thresholds: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    thresholds
        .iter()
        .map(|&t| {
            Ok(SweepRow {
                threshold: t,
                report: report_from_candidates(slices, cands, &cfg.with_threshold(t))?,
            })
        })
        .collect()
}

/// `lo, lo+step, …` up to `hi` inclusive, rounded to 12 decimals.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(Error::Config(format!(
            "bad threshold grid {lo}..{hi} step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}
