use serde::{Deserialize, Serialize};

use super::anchors::Anchor;
use super::heads::{Head, HeadParams};
use crate::autodiff::{sigmoid, Tensor};
use crate::error::Result;
use crate::geometry::{decode_deltas, iou, nms_sorted, BBox};
use crate::syndata::Mask;

/// Candidate region from the first stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub objectness: f64,
    /// Source anchor; `None` for ground-truth boxes injected during training.
    pub anchor_index: Option<usize>,
    /// Training label `p*`: `Some(1)` positive, `Some(0)` negative, `None` excluded.
    pub label: Option<u8>,
    pub gt_index: Option<usize>,
}

impl Proposal {
    pub fn new(bbox: BBox, objectness: f64, anchor_index: Option<usize>) -> Self {
        Self {
            bbox,
            objectness,
            anchor_index,
            label: None,
            gt_index: None,
        }
    }
}

/// Per-anchor RPN output.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnOutput {
    pub objectness: Vec<f64>,
    pub deltas: Vec<[f64; 4]>,
}

fn rows4(t: &Tensor) -> Vec<[f64; 4]> {
    (0..t.rows())
        .map(|r| {
            let x = t.row(r);
            [x[0], x[1], x[2], x[3]]
        })
        .collect()
}

/// Objectness `sigmoid(logit)` and box deltas for every anchor feature row.
pub fn rpn_forward(params: &HeadParams, anchor_features: &Tensor) -> Result<RpnOutput> {
    let logits = params.head_eval(Head::RpnCls, anchor_features)?;
    let deltas = params.head_eval(Head::RpnReg, anchor_features)?;
    Ok(RpnOutput {
        objectness: logits.data().iter().map(|&z| sigmoid(z)).collect(),
        deltas: rows4(&deltas),
    })
}

/// Decodes and clips every anchor, keeps the `k_pre` highest-objectness boxes
/// (ties by anchor index), applies greedy NMS and returns at most `k_post`
/// survivors by descending objectness. Boxes that clip to zero area are skipped.
#[allow(clippy::too_many_arguments)]
pub fn select_proposals(
    anchors: &[Anchor],
    objectness: &[f64],
    deltas: &[[f64; 4]],
    width: usize,
    height: usize,
    k_pre: usize,
    nms_iou: f64,
    k_post: usize,
) -> Vec<Proposal> {
    let boxes: Vec<BBox> = anchors
        .iter()
        .zip(deltas)
        .map(|(a, d)| decode_deltas(&a.bbox, d).clip(width as f64, height as f64))
        .collect();
    let mut order: Vec<usize> = (0..anchors.len())
        .filter(|&i| !boxes[i].is_degenerate())
        .collect();
    order.sort_by(|&a, &b| objectness[b].total_cmp(&objectness[a]).then(a.cmp(&b)));
    order.truncate(k_pre);
    nms_sorted(&boxes, &order, nms_iou, k_post)
        .into_iter()
        .map(|i| Proposal::new(boxes[i], objectness[i], Some(i)))
        .collect()
}

/// Label outcome for one box against the ground truth.
fn label_for(b: &BBox, gt: &[BBox], pos_iou: f64, neg_iou: f64) -> (Option<u8>, Option<usize>) {
    let mut best = (0.0, None);
    for (k, g) in gt.iter().enumerate() {
        let v = iou(b, g);
        if best.1.is_none() || v > best.0 {
            best = (v, Some(k));
        }
    }
    match best {
        (v, Some(k)) if v >= pos_iou => (Some(1), Some(k)),
        (v, _) if v < neg_iou => (Some(0), None),
        _ => (None, None),
    }
}

/// Assigns `p*`: positive (matched to the highest-IoU GT) when IoU ≥ `pos_iou`,
/// negative when IoU < `neg_iou` against every GT, otherwise excluded. With no
/// GT every proposal is negative.
pub fn assign_labels(proposals: &mut [Proposal], gt: &[BBox], pos_iou: f64, neg_iou: f64) {
    for p in proposals.iter_mut() {
        let (label, k) = label_for(&p.bbox, gt, pos_iou, neg_iou);
        p.label = label;
        p.gt_index = k;
    }
}

/// Anchor labels for the RPN losses: the IoU rule of [`assign_labels`], plus the
/// highest-IoU anchor of every GT is forced positive so small lesions always
/// have a positive anchor.
pub fn anchor_labels(
    anchors: &[Anchor],
    gt: &[BBox],
    pos_iou: f64,
    neg_iou: f64,
) -> Vec<(Option<u8>, Option<usize>)> {
    let mut out: Vec<_> = anchors
        .iter()
        .map(|a| label_for(&a.bbox, gt, pos_iou, neg_iou))
        .collect();
    for (k, g) in gt.iter().enumerate() {
        let mut best = (0.0, None);
        for (i, a) in anchors.iter().enumerate() {
            let v = iou(&a.bbox, g);
            if v > best.0 {
                best = (v, Some(i));
            }
        }
        if let (_, Some(i)) = best {
            if out[i].0 != Some(1) {
                out[i] = (Some(1), Some(k));
            }
        }
    }
    out
}

/// Ground-truth mask cropped to `b` and nearest-neighbour resampled to `m×m`
/// (row-major). Cells sampling outside the image are 0.
pub fn mask_target(mask: &Mask, b: &BBox, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * m);
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    for i in 0..m {
        let y = b.y1 + (i as f64 + 0.5) * b.height() / m as f64;
        for j in 0..m {
            let x = b.x1 + (j as f64 + 0.5) * b.width() / m as f64;
            let inside = x >= 0.0 && y >= 0.0 && x < w && y < h;
            let v = inside && mask.get(x.floor() as usize, y.floor() as usize);
            out.push(if v { 1.0 } else { 0.0 });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{build_anchors, DetectorConfig};

    fn anchor(b: BBox) -> Anchor {
        Anchor {
            bbox: b,
            grid: (0, 0),
            size_index: 0,
        }
    }

    #[test]
    fn duplicate_suppressed() {
        let b = BBox::new(5.0, 5.0, 15.0, 15.0);
        let a = [anchor(b), anchor(b)];
        let p = select_proposals(&a, &[0.8, 0.9], &[[0.0; 4]; 2], 64, 64, 64, 0.5, 16);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].objectness, 0.9);
        assert_eq!(p[0].anchor_index, Some(1));
    }

    #[test]
    fn disjoint_survive_up_to_k_post() {
        let a: Vec<Anchor> = (0..6)
            .map(|i| anchor(BBox::new(10.0 * i as f64, 0.0, 10.0 * i as f64 + 8.0, 8.0)))
            .collect();
        let s = [0.1, 0.6, 0.3, 0.5, 0.2, 0.4];
        let p = select_proposals(&a, &s, &[[0.0; 4]; 6], 64, 64, 64, 0.5, 16);
        assert_eq!(p.len(), 6);
        assert!(p.windows(2).all(|w| w[0].objectness >= w[1].objectness));
        let p = select_proposals(&a, &s, &[[0.0; 4]; 6], 64, 64, 64, 0.5, 4);
        assert_eq!(p.len(), 4);
        let p = select_proposals(&a, &s, &[[0.0; 4]; 6], 64, 64, 64, 0.5, 1);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].anchor_index, Some(1));
    }

    #[test]
    fn ties_broken_by_anchor_index() {
        let a: Vec<Anchor> = (0..4)
            .map(|i| anchor(BBox::new(10.0 * i as f64, 0.0, 10.0 * i as f64 + 8.0, 8.0)))
            .collect();
        let p = select_proposals(&a, &[0.5; 4], &[[0.0; 4]; 4], 64, 64, 2, 0.5, 16);
        let idx: Vec<_> = p.iter().map(|p| p.anchor_index.unwrap()).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn label_rules() {
        let gt = [BBox::new(0.0, 0.0, 10.0, 10.0)];
        let mut ps = vec![
            Proposal::new(BBox::new(0.0, 0.0, 10.0, 10.0), 0.5, None),
            // IoU 20/180 ≈ 0.111
            Proposal::new(BBox::new(8.0, 0.0, 18.0, 10.0), 0.5, None),
            // IoU 35/100 = 0.35, inside the dead zone
            Proposal::new(BBox::new(0.0, 0.0, 10.0, 3.5), 0.5, None),
        ];
        assert!((iou(&ps[1].bbox, &gt[0]) - 1.0 / 9.0).abs() < 1e-12);
        assert!((iou(&ps[2].bbox, &gt[0]) - 0.35).abs() < 1e-12);
        assign_labels(&mut ps, &gt, 0.5, 0.2);
        assert_eq!((ps[0].label, ps[0].gt_index), (Some(1), Some(0)));
        assert_eq!(ps[1].label, Some(0));
        assert_eq!(ps[2].label, None);

        assign_labels(&mut ps, &[], 0.5, 0.2);
        assert!(ps.iter().all(|p| p.label == Some(0)));
    }

    #[test]
    fn best_anchor_forced_positive() {
        let anchors = build_anchors(64, 64).unwrap();
        // small lesion between anchor centres: no anchor reaches IoU 0.5
        let gt = [BBox::new(6.0, 6.0, 11.0, 11.0)];
        let labels = anchor_labels(&anchors, &gt, 0.5, 0.2);
        assert!(anchors.iter().all(|a| iou(&a.bbox, &gt[0]) < 0.5));
        assert_eq!(labels.iter().filter(|l| l.0 == Some(1)).count(), 1);
    }

    #[test]
    fn mask_targets_full_and_empty() {
        let mut m = Mask::new(32, 32);
        for y in 4..20 {
            for x in 4..20 {
                m.set(x, y, true);
            }
        }
        let cfg = DetectorConfig::default();
        let full = mask_target(&m, &BBox::new(6.0, 6.0, 18.0, 18.0), cfg.mask_size);
        assert_eq!(full, vec![1.0; 64]);
        let empty = mask_target(&m, &BBox::new(22.0, 22.0, 30.0, 30.0), cfg.mask_size);
        assert_eq!(empty, vec![0.0; 64]);
    }
}
