use serde::{Deserialize, Serialize};

use super::anchors::build_anchors;
use super::features::features_matrix;
use super::heads::{Head, HeadParams};
use super::proposals::{rpn_forward, select_proposals, Proposal};
use crate::autodiff::sigmoid;
use crate::error::Result;
use crate::geometry::{decode_deltas, nms, BBox};
use crate::syndata::SyntheticSlice;

pub const DEFAULT_THRESHOLD: f64 = 0.7;
pub const DEFAULT_MAX_DETECTIONS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_prob: f64,
    /// `M×M` mask probabilities, row-major.
    pub mask_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub slice_id: String,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn boxes(&self) -> Vec<BBox> {
        self.detections.iter().map(|d| d.bbox).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.detections.iter().map(|d| d.class_prob).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub threshold: f64,
    pub max_det: usize,
    pub nms_iou: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_det: DEFAULT_MAX_DETECTIONS,
            nms_iou: 0.5,
        }
    }
}

/// RPN proposals for one slice, with objectness and decoded boxes.
pub fn propose(slice: &SyntheticSlice, params: &HeadParams) -> Result<Vec<Proposal>> {
    let anchors = build_anchors(slice.height, slice.width)?;
    let boxes: Vec<BBox> = anchors.iter().map(|a| a.bbox).collect();
    let feats = features_matrix(slice, &boxes)?;
    let rpn = rpn_forward(params, &feats)?;
    let c = &params.config;
    Ok(select_proposals(
        &anchors,
        &rpn.objectness,
        &rpn.deltas,
        slice.width,
        slice.height,
        c.k_pre,
        c.nms_iou,
        c.k_post,
    ))
}

/// Runs both stages and returns every refined proposal with its class
/// probability and mask grid, before thresholding. Order follows the proposals.
pub fn candidate_detections(slice: &SyntheticSlice, params: &HeadParams) -> Result<Vec<Detection>> {
    let proposals = propose(slice, params)?;
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let boxes: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
    let feats = features_matrix(slice, &boxes)?;
    let logits = params.head_eval(Head::RoiCls, &feats)?;
    let deltas = params.head_eval(Head::RoiBox, &feats)?;
    let masks = params.head_eval(Head::RoiMask, &feats)?;
    let (w, h) = (slice.width as f64, slice.height as f64);
    Ok(proposals
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = deltas.row(i);
            let refined = decode_deltas(&p.bbox, &[d[0], d[1], d[2], d[3]]).clip(w, h);
            Detection {
                bbox: if refined.is_degenerate() {
                    p.bbox
                } else {
                    refined
                },
                class_prob: sigmoid(logits.get(i, 0)),
                mask_grid: masks.row(i).iter().map(|&z| sigmoid(z)).collect(),
            }
        })
        .collect())
}

/// Keeps candidates with `p ≥ threshold`, applies NMS and caps at `max_det`
/// (highest probability first).
pub fn filter_detections(candidates: &[Detection], cfg: &InferConfig) -> Vec<Detection> {
    let passing: Vec<&Detection> = candidates
        .iter()
        .filter(|d| d.class_prob >= cfg.threshold)
        .collect();
    let boxes: Vec<BBox> = passing.iter().map(|d| d.bbox).collect();
    let scores: Vec<f64> = passing.iter().map(|d| d.class_prob).collect();
    nms(&boxes, &scores, cfg.nms_iou)
        .into_iter()
        .take(cfg.max_det)
        .map(|i| passing[i].clone())
        .collect()
}

pub fn infer(
    slice: &SyntheticSlice,
    params: &HeadParams,
    cfg: &InferConfig,
) -> Result<DetectionSet> {
    let cands = candidate_detections(slice, params)?;
    Ok(DetectionSet {
        slice_id: slice.slice_id.clone(),
        detections: filter_detections(&cands, cfg),
    })
}
