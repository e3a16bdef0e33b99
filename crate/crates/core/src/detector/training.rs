//! Training-mode forward pass: anchor and RoI sampling, target construction,
//! and the differentiable head outputs the losses consume.

use rand::seq::SliceRandom;
use rand::Rng;

use super::anchors::Anchor;
use super::features::features_matrix;
use super::heads::{Head, HeadParams};
use super::proposals::{
    anchor_labels, assign_labels, mask_target, rpn_forward, select_proposals, Proposal,
};
use crate::autodiff::{Graph, Tensor, Value};
use crate::error::Result;
use crate::geometry::{encode_deltas, BBox};
use crate::syndata::SyntheticSlice;

/// A differentiable prediction paired with its flat regression/mask target.
#[derive(Debug, Clone)]
pub struct Targeted {
    pub pred: Value,
    pub target: Vec<f64>,
    /// Number of rows (anchors or RoIs) the prediction covers.
    pub count: usize,
}

/// Everything the six loss terms need for one slice.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    pub positive_slice: bool,
    /// Number of GT lesions on the slice.
    pub gt_count: usize,
    /// Objectness probabilities of the sampled anchors (`n×1`) and their labels.
    pub rpn_probs: Option<Value>,
    pub rpn_labels: Vec<f64>,
    /// Box deltas of sampled positive anchors; `None` on negative slices.
    pub rpn_deltas: Option<Targeted>,
    /// Class probabilities `p_i` of the sampled RoIs and their labels `p_i*`.
    pub roi_probs: Option<Value>,
    pub roi_labels: Vec<f64>,
    pub roi_deltas: Option<Targeted>,
    /// Mask probabilities of positive RoIs against resampled GT masks.
    pub mask_probs: Option<Targeted>,
    pub rois: Vec<Proposal>,
    /// RoI rows that came out of the RPN rather than from injected GT boxes.
    /// The slice-level max runs over these only.
    pub slice_rows: Vec<usize>,
}

/// Picks at most `batch` items with at most `batch·max_pos_fraction` positives,
/// filling the rest with negatives. Returned indices are sorted.
pub fn sample_balanced<R: Rng + ?Sized>(
    mut pos: Vec<usize>,
    mut neg: Vec<usize>,
    batch: usize,
    max_pos_fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    let pos_cap = ((batch as f64) * max_pos_fraction).floor() as usize;
    pos.shuffle(rng);
    pos.truncate(pos_cap.max(1).min(batch));
    neg.shuffle(rng);
    neg.truncate(batch - pos.len());
    let mut out = pos;
    out.extend(neg);
    out.sort_unstable();
    out
}

/// Runs both stages on `slice` inside `g`. `anchor_features` must be the
/// feature matrix of `anchors` on this slice.
pub fn forward_train<R: Rng + ?Sized>(
    g: &mut Graph,
    params: &HeadParams,
    slice: &SyntheticSlice,
    anchors: &[Anchor],
    anchor_features: &Tensor,
    rng: &mut R,
) -> Result<StageOutputs> {
    let cfg = &params.config;
    let gt: Vec<BBox> = slice.gt_boxes();
    let gt_lesions: Vec<_> = slice.gt_lesions().collect();
    let positive_slice = !gt.is_empty();

    // anchor stage
    let labels = anchor_labels(anchors, &gt, cfg.pos_iou, cfg.neg_iou);
    let pos: Vec<usize> = (0..anchors.len())
        .filter(|&i| labels[i].0 == Some(1))
        .collect();
    let neg: Vec<usize> = (0..anchors.len())
        .filter(|&i| labels[i].0 == Some(0))
        .collect();
    let sampled = sample_balanced(pos, neg, cfg.rpn_batch, cfg.max_positive_fraction, rng);

    let feats = g.constant(anchor_features.clone());
    let (rpn_probs, rpn_labels) = if sampled.is_empty() {
        (None, Vec::new())
    } else {
        let x = g.select_rows(feats, &sampled)?;
        let logits = params.head_forward(g, Head::RpnCls, x)?;
        let probs = g.sigmoid(logits);
        let lab = sampled
            .iter()
            .map(|&i| f64::from(labels[i].0.unwrap_or(0)))
            .collect();
        (Some(probs), lab)
    };

    let rpn_pos: Vec<usize> = sampled
        .iter()
        .copied()
        .filter(|&i| labels[i].0 == Some(1))
        .collect();
    let rpn_deltas = if positive_slice && !rpn_pos.is_empty() {
        let x = g.select_rows(feats, &rpn_pos)?;
        let pred = params.head_forward(g, Head::RpnReg, x)?;
        let target = rpn_pos
            .iter()
            .flat_map(|&i| {
                let k = labels[i].1.expect("positive anchor has a GT");
                encode_deltas(&anchors[i].bbox, &gt[k])
            })
            .collect();
        Some(Targeted {
            pred,
            target,
            count: rpn_pos.len(),
        })
    } else {
        None
    };

    // proposal stage; proposals are detached from the RPN graph
    let rpn = rpn_forward(params, anchor_features)?;
    let mut candidates = select_proposals(
        anchors,
        &rpn.objectness,
        &rpn.deltas,
        slice.width,
        slice.height,
        cfg.k_pre,
        cfg.nms_iou,
        cfg.k_post,
    );
    candidates.extend(gt.iter().map(|b| Proposal::new(*b, 1.0, None)));
    assign_labels(&mut candidates, &gt, cfg.pos_iou, cfg.neg_iou);
    let pos: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].label == Some(1))
        .collect();
    let neg: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].label == Some(0))
        .collect();
    let chosen = sample_balanced(pos, neg, cfg.roi_batch, cfg.max_positive_fraction, rng);
    let rois: Vec<Proposal> = chosen.iter().map(|&i| candidates[i].clone()).collect();

    let mut out = StageOutputs {
        positive_slice,
        gt_count: gt.len(),
        rpn_probs,
        rpn_labels,
        rpn_deltas,
        roi_probs: None,
        roi_labels: Vec::new(),
        roi_deltas: None,
        mask_probs: None,
        rois: Vec::new(),
        slice_rows: Vec::new(),
    };
    if rois.is_empty() {
        return Ok(out);
    }

    let boxes: Vec<BBox> = rois.iter().map(|p| p.bbox).collect();
    let roi_feats = g.constant(features_matrix(slice, &boxes)?);
    let logits = params.head_forward(g, Head::RoiCls, roi_feats)?;
    out.roi_probs = Some(g.sigmoid(logits));
    out.roi_labels = rois
        .iter()
        .map(|p| f64::from(p.label.unwrap_or(0)))
        .collect();

    let roi_pos: Vec<usize> = (0..rois.len())
        .filter(|&i| rois[i].label == Some(1))
        .collect();
    if positive_slice && !roi_pos.is_empty() {
        let x = g.select_rows(roi_feats, &roi_pos)?;
        let deltas = params.head_forward(g, Head::RoiBox, x)?;
        let mut box_t = Vec::with_capacity(4 * roi_pos.len());
        let mut mask_t = Vec::with_capacity(cfg.mask_size * cfg.mask_size * roi_pos.len());
        for &i in &roi_pos {
            let k = rois[i].gt_index.expect("positive RoI has a GT");
            box_t.extend(encode_deltas(&rois[i].bbox, &gt[k]));
            mask_t.extend(mask_target(
                &gt_lesions[k].mask,
                &rois[i].bbox,
                cfg.mask_size,
            ));
        }
        out.roi_deltas = Some(Targeted {
            pred: deltas,
            target: box_t,
            count: roi_pos.len(),
        });
        let mask_logits = params.head_forward(g, Head::RoiMask, x)?;
        out.mask_probs = Some(Targeted {
            pred: g.sigmoid(mask_logits),
            target: mask_t,
            count: roi_pos.len(),
        });
    }
    out.slice_rows = (0..rois.len())
        .filter(|&i| rois[i].anchor_index.is_some())
        .collect();
    out.rois = rois;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_sampling_caps_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_balanced((0..20).collect(), (20..100).collect(), 16, 0.5, &mut rng);
        assert_eq!(s.len(), 16);
        assert_eq!(s.iter().filter(|&&i| i < 20).count(), 8);
        let s = sample_balanced(vec![3], (10..12).collect(), 16, 0.5, &mut rng);
        assert_eq!(s, vec![3, 10, 11]);
        let s = sample_balanced(vec![], vec![], 16, 0.5, &mut rng);
        assert!(s.is_empty());
    }
}
