use serde::{Deserialize, Serialize};

use super::heads::HeadParams;
use super::infer::{candidate_detections, filter_detections, Detection, DetectionSet, InferConfig};
use super::proposals::mask_target;
use crate::error::Result;
use crate::syndata::SyntheticSlice;

/// Anything that can be evaluated: trained heads, or a ground-truth oracle
/// that reports every GT lesion with probability 1 (used to exercise the
/// reporting path end to end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Heads(HeadParams),
    Oracle { mask_size: usize },
}

impl Model {
    pub fn candidates(&self, slice: &SyntheticSlice) -> Result<Vec<Detection>> {
        match self {
            Model::Heads(p) => candidate_detections(slice, p),
            Model::Oracle { mask_size } => Ok(slice
                .gt_lesions()
                .map(|l| {
                    let b = l.bbox.to_bbox();
                    Detection {
                        bbox: b,
                        class_prob: 1.0,
                        mask_grid: mask_target(&l.mask, &b, *mask_size),
                    }
                })
                .collect()),
        }
    }

    pub fn infer(&self, slice: &SyntheticSlice, cfg: &InferConfig) -> Result<DetectionSet> {
        Ok(DetectionSet {
            slice_id: slice.slice_id.clone(),
            detections: filter_detections(&self.candidates(slice)?, cfg),
        })
    }

    pub fn heads(&self) -> Option<&HeadParams> {
        match self {
            Model::Heads(p) => Some(p),
            Model::Oracle { .. } => None,
        }
    }
}
