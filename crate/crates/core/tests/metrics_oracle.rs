use costdet::detector::{Detection, DetectionSet, InferConfig, Model};
use costdet::evaluator::{
    aggregate, evaluate, iou, match_lesions, slice_confusion, slice_rates, threshold_sweep,
    EvalConfig, FpDenominator, SliceEval, LESION_IOU,
};
use costdet::geometry::BBox;
use costdet::syndata::{generate, GenConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest number of distinct (GT, detection) pairs with IoU ≥ thr, by exhaustive search.
fn brute_force_tp(dets: &[BBox], gt: &[BBox], thr: f64) -> usize {
    fn go(d: usize, dets: &[BBox], gt: &[BBox], used: &mut Vec<bool>, thr: f64) -> usize {
        if d == dets.len() {
            return 0;
        }
        let mut best = go(d + 1, dets, gt, used, thr);
        for k in 0..gt.len() {
            if !used[k] && iou(&dets[d], &gt[k]) >= thr {
                used[k] = true;
                best = best.max(1 + go(d + 1, dets, gt, used, thr));
                used[k] = false;
            }
        }
        best
    }
    go(0, dets, gt, &mut vec![false; gt.len()], thr)
}

fn random_box(r: &mut ChaCha8Rng) -> BBox {
    let x = r.random_range(0.0..24.0);
    let y = r.random_range(0.0..24.0);
    BBox::new(
        x,
        y,
        x + r.random_range(2.0..12.0),
        y + r.random_range(2.0..12.0),
    )
}

#[test]
fn matcher_equals_brute_force() {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut with_tp = 0;
    for _ in 0..2000 {
        let gt: Vec<BBox> = (0..r.random_range(0..=5))
            .map(|_| random_box(&mut r))
            .collect();
        let dets: Vec<BBox> = (0..r.random_range(0..=6))
            .map(|_| random_box(&mut r))
            .collect();
        let scores: Vec<f64> = dets.iter().map(|_| r.random_range(0.0..1.0)).collect();
        let m = match_lesions(&dets, &scores, &gt, LESION_IOU);

        let tp = brute_force_tp(&dets, &gt, LESION_IOU);
        assert_eq!(m.tp_count(), tp);
        assert_eq!(m.fn_count(), gt.len() - tp);
        let fp: Vec<usize> = (0..dets.len())
            .filter(|&d| gt.iter().all(|g| iou(&dets[d], g) < LESION_IOU))
            .collect();
        assert_eq!(m.fp, fp);
        for &(k, d) in &m.tp {
            assert!(iou(&dets[d], &gt[k]) >= LESION_IOU);
        }
        with_tp += usize::from(tp > 0);
    }
    assert!(
        with_tp > 200,
        "too few instances exercise matching ({with_tp})"
    );
}

#[test]
fn hand_counted_ten_slices() {
    let positive = [
        true, true, true, true, false, false, false, false, false, false,
    ];
    let detected = [
        true, false, true, true, false, true, false, true, false, false,
    ];
    let c = slice_confusion(&detected, &positive).unwrap();
    let (fpr, fnr, acc) = slice_rates(&c);
    assert_eq!((c.tp, c.fn_, c.fp, c.tn), (3, 1, 2, 4));
    assert_eq!(format!("{fpr:.4}"), "0.3333");
    assert_eq!(fnr, 0.25);
    assert_eq!(acc, 0.7);
}

#[test]
fn oracle_model_is_perfect() {
    let d = generate(&GenConfig {
        n_slices: 40,
        ..GenConfig::default()
    })
    .unwrap();
    let all: Vec<_> = d.iter().collect();
    let r = evaluate(
        &Model::Oracle { mask_size: 8 },
        &all,
        &EvalConfig::default(),
    )
    .unwrap();
    assert_eq!(r.lesion_fnr, 0.0);
    assert_eq!(r.lesion_fp_per_slice, 0.0);
    assert_eq!(r.slice_fnr, 0.0);
    assert_eq!(r.slice_fpr, 0.0);
    assert_eq!(r.slice_acc, 1.0);
}

fn det(b: BBox, p: f64) -> Detection {
    Detection {
        bbox: b,
        class_prob: p,
        mask_grid: Vec::new(),
    }
}

prop_compose! {
    fn arb_box()(x in 0.0..40.0f64, y in 0.0..40.0f64, w in 1.0..16.0f64, h in 1.0..16.0f64) -> BBox {
        BBox::new(x, y, x + w, y + h)
    }
}

prop_compose! {
    fn arb_slice()(gt in prop::collection::vec(arb_box(), 0..4),
                   dets in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..6)) -> (Vec<BBox>, Vec<(BBox, f64)>) {
        (gt, dets)
    }
}

fn slice_eval(gt: &[BBox], dets: &[(BBox, f64)]) -> SliceEval {
    let boxes: Vec<BBox> = dets.iter().map(|d| d.0).collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    SliceEval {
        slice_id: String::new(),
        positive: !gt.is_empty(),
        detections: dets.len(),
        lesions: match_lesions(&boxes, &scores, gt, LESION_IOU),
    }
}

proptest! {
    #[test]
    fn confusion_counts_sum_to_slices(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 0..50)) {
        let d: Vec<bool> = flags.iter().map(|f| f.0).collect();
        let p: Vec<bool> = flags.iter().map(|f| f.1).collect();
        prop_assert_eq!(slice_confusion(&d, &p).unwrap().total(), flags.len());
    }

    #[test]
    fn metrics_invariant_to_slice_order(slices in prop::collection::vec(arb_slice(), 1..8), rot in 0usize..8) {
        let evals: Vec<SliceEval> = slices.iter().map(|(g, d)| slice_eval(g, d)).collect();
        let mut rotated = evals.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        rotated.reverse();
        let a = aggregate(&evals, 0.7, FpDenominator::All).unwrap();
        let b = aggregate(&rotated, 0.7, FpDenominator::All).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn rates_bounded(slices in prop::collection::vec(arb_slice(), 1..8)) {
        let evals: Vec<SliceEval> = slices.iter().map(|(g, d)| slice_eval(g, d)).collect();
        let r = aggregate(&evals, 0.7, FpDenominator::All).unwrap();
        for v in [r.lesion_fnr, r.slice_fpr, r.slice_fnr, r.slice_acc] {
            prop_assert!(v.is_nan() || (0.0..=1.0).contains(&v));
        }
        prop_assert!(r.lesion_fp_per_slice >= 0.0);
        prop_assert_eq!(r.lesion.tp + r.lesion.fn_, slices.iter().map(|s| s.0.len()).sum::<usize>());
    }

    #[test]
    fn higher_threshold_keeps_a_subset(cands in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..16),
                                       t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let c: Vec<Detection> = cands.iter().map(|(b, p)| det(*b, *p)).collect();
        let uncapped = |t| InferConfig { threshold: t, max_det: usize::MAX, nms_iou: 0.5 };
        let a = costdet::detector::filter_detections(&c, &uncapped(lo));
        let b = costdet::detector::filter_detections(&c, &uncapped(hi));
        for d in &b {
            prop_assert!(a.contains(d));
        }
    }
}

#[test]
fn sweep_matches_per_threshold_recomputation_and_is_monotone() {
    let d = generate(&GenConfig {
        n_slices: 30,
        seed: 3,
        ..GenConfig::default()
    })
    .unwrap();
    let slices: Vec<_> = d.iter().collect();
    let mut params = costdet::detector::HeadParams::init(Default::default(), 5);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for name in ["roi_cls.w2", "roi_cls.b2", "roi_box.w2"] {
        for v in params.store.get_mut(name).unwrap().data_mut() {
            *v = r.random_range(-0.8..0.8);
        }
    }
    let model = Model::Heads(params);
    let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    let cfg = EvalConfig::default();
    let rows = threshold_sweep(&model, &slices, &grid, &cfg).unwrap();
    assert_eq!(rows.len(), grid.len());
    for (row, &t) in rows.iter().zip(&grid) {
        let fresh = evaluate(&model, &slices, &cfg.with_threshold(t)).unwrap();
        assert_eq!(row.report, fresh);
    }
    for w in rows.windows(2) {
        assert!(w[1].threshold > w[0].threshold);
        assert!(w[1].report.slice.fn_ >= w[0].report.slice.fn_);
        assert!(w[1].report.slice.fp <= w[0].report.slice.fp);
        assert!(w[1].report.slice_fpr <= w[0].report.slice_fpr);
    }

    let top = threshold_sweep(&model, &slices, &[1.0 - 1e-9], &cfg).unwrap();
    assert_eq!(top[0].report.slice_fnr, 1.0);
    assert_eq!(top[0].report.slice.tp + top[0].report.slice.fp, 0);
}

#[test]
fn detection_set_accessors() {
    let s = DetectionSet {
        slice_id: "x".into(),
        detections: vec![det(BBox::new(0.0, 0.0, 2.0, 2.0), 0.9)],
    };
    assert_eq!(s.scores(), vec![0.9]);
    assert_eq!(s.len(), 1);
}
