use serde::{Deserialize, Serialize};

use super::matching::{match_lesions, LesionMatchResult};
use crate::detector::DetectionSet;
use crate::error::{Error, Result};
use crate::syndata::SyntheticSlice;

/// Rates with an empty denominator are serialised as `null` and read back as NaN.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Which slices form the denominator of lesion FP-per-slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpDenominator {
    #[default]
    All,
    PositiveOnly,
}

/// Slice-level confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl SliceCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Evaluation outcome for one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEval {
    pub slice_id: String,
    pub positive: bool,
    pub detections: usize,
    pub lesions: LesionMatchResult,
}

impl SliceEval {
    pub fn new(slice: &SyntheticSlice, dets: &DetectionSet, iou_thresh: f64) -> Self {
        Self {
            slice_id: slice.slice_id.clone(),
            positive: slice.is_positive(),
            detections: dets.len(),
            lesions: match_lesions(&dets.boxes(), &dets.scores(), &slice.gt_boxes(), iou_thresh),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub n_slices: usize,
    pub n_gt_lesions: usize,
    #[serde(with = "nan_as_null")]
    pub lesion_fp_per_slice: f64,
    #[serde(with = "nan_as_null")]
    pub lesion_fnr: f64,
    #[serde(with = "nan_as_null")]
    pub slice_fpr: f64,
    #[serde(with = "nan_as_null")]
    pub slice_fnr: f64,
    #[serde(with = "nan_as_null")]
    pub slice_acc: f64,
    pub lesion: LesionCounts,
    pub slice: SliceCounts,
    pub fp_denominator: FpDenominator,
}

/// `num / den`, or NaN when `den` is 0.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// Slice TP: positive with ≥1 detection; FN: positive with none; FP: negative
/// with ≥1 detection; TN otherwise.
pub fn slice_confusion(detected: &[bool], positive: &[bool]) -> Result<SliceCounts> {
    if detected.len() != positive.len() {
        return Err(Error::Contract(format!(
            "slice_confusion: {} detection flags for {} slices",
            detected.len(),
            positive.len()
        )));
    }
    let mut c = SliceCounts::default();
    for (&d, &p) in detected.iter().zip(positive) {
        match (p, d) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn slice_rates(c: &SliceCounts) -> (f64, f64, f64) {
    (
        ratio(c.fp, c.fp + c.tn),
        ratio(c.fn_, c.fn_ + c.tp),
        ratio(c.tp + c.tn, c.total()),
    )
}

/// Pools per-slice outcomes into lesion- and slice-level rates.
pub fn aggregate(
    evals: &[SliceEval],
    threshold: f64,
    fp_denominator: FpDenominator,
) -> Result<MetricsReport> {
    if evals.is_empty() {
        return Err(Error::EmptySplit("no slices to aggregate".into()));
    }
    let detected: Vec<bool> = evals.iter().map(|e| e.detections > 0).collect();
    let positive: Vec<bool> = evals.iter().map(|e| e.positive).collect();
    let slice = slice_confusion(&detected, &positive)?;
    let (slice_fpr, slice_fnr, slice_acc) = slice_rates(&slice);

    let mut lesion = LesionCounts::default();
    let mut fp_slices = 0;
    let mut fp_in_scope = 0;
    for e in evals {
        lesion.tp += e.lesions.tp_count();
        lesion.fp += e.lesions.fp_count();
        lesion.fn_ += e.lesions.fn_count();
        if fp_denominator == FpDenominator::All || e.positive {
            fp_slices += 1;
            fp_in_scope += e.lesions.fp_count();
        }
    }
    let n_gt = lesion.tp + lesion.fn_;
    Ok(MetricsReport {
        threshold,
        n_slices: evals.len(),
        n_gt_lesions: n_gt,
        lesion_fp_per_slice: ratio(fp_in_scope, fp_slices),
        lesion_fnr: ratio(lesion.fn_, n_gt),
        slice_fpr,
        slice_fnr,
        slice_acc,
        lesion,
        slice,
        fp_denominator,
    })
}
