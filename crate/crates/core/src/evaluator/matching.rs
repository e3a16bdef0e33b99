use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};

/// Box IoU at or above which a detection counts as hitting a lesion.
pub const LESION_IOU: f64 = 0.2;

/// Lesion-level outcome on one slice. Indices refer to the input slices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionMatchResult {
    /// `(gt_index, det_index)` pairs, sorted by GT index.
    pub tp: Vec<(usize, usize)>,
    /// Detections with IoU below the threshold against every GT.
    pub fp: Vec<usize>,
    /// GT lesions left without a matched detection.
    pub fn_: Vec<usize>,
}

impl LesionMatchResult {
    pub fn tp_count(&self) -> usize {
        self.tp.len()
    }
    pub fn fp_count(&self) -> usize {
        self.fp.len()
    }
    pub fn fn_count(&self) -> usize {
        self.fn_.len()
    }
}

/// Tries to give detection `d` a GT, re-routing earlier matches along an
/// augmenting path when its preferred GTs are taken.
fn augment(
    d: usize,
    edges: &[Vec<usize>],
    gt_owner: &mut [Option<usize>],
    visited: &mut [bool],
) -> bool {
    for &k in &edges[d] {
        if visited[k] {
            continue;
        }
        visited[k] = true;
        let free = match gt_owner[k] {
            None => true,
            Some(other) => augment(other, edges, gt_owner, visited),
        };
        if free {
            gt_owner[k] = Some(d);
            return true;
        }
    }
    false
}

/// Matches detections to GT lesions at IoU ≥ `iou_thresh`.
///
/// Detections are visited by descending score (ties by index), each claiming
/// its highest-IoU eligible GT. When every eligible GT is already claimed an
/// augmenting path is tried, so the number of TPs is the largest achievable
/// with each GT and each detection used at most once. A detection that
/// overlaps a GT at the threshold but ends up unmatched is neither TP nor FP.
pub fn match_lesions(
    det_boxes: &[BBox],
    det_scores: &[f64],
    gt: &[BBox],
    iou_thresh: f64,
) -> LesionMatchResult {
    let ious: Vec<Vec<f64>> = det_boxes
        .iter()
        .map(|d| gt.iter().map(|g| iou(d, g)).collect())
        .collect();
    let edges: Vec<Vec<usize>> = ious
        .iter()
        .map(|row| {
            let mut ks: Vec<usize> = (0..gt.len()).filter(|&k| row[k] >= iou_thresh).collect();
            ks.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ks
        })
        .collect();

    let mut order: Vec<usize> = (0..det_boxes.len()).collect();
    let score = |i: usize| det_scores.get(i).copied().unwrap_or(0.0);
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));

    let mut gt_owner: Vec<Option<usize>> = vec![None; gt.len()];
    for &d in &order {
        let mut visited = vec![false; gt.len()];
        augment(d, &edges, &mut gt_owner, &mut visited);
    }

    LesionMatchResult {
        tp: gt_owner
            .iter()
            .enumerate()
            .filter_map(|(k, o)| o.map(|d| (k, d)))
            .collect(),
        fp: (0..det_boxes.len())
            .filter(|&d| edges[d].is_empty())
            .collect(),
        fn_: (0..gt.len()).filter(|&k| gt_owner[k].is_none()).collect(),
    }
}
