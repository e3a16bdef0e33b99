//! Central-difference gradient checking shared by the gradient tests and the
//! acceptance suite.
#![allow(dead_code)]

use costdet::autodiff::{Graph, Tensor, Value};
use costdet::detector::{DetectorConfig, Head, HeadParams, StageOutputs, Targeted};
use costdet::losses::{lesion_cost_loss, slice_cost_loss, slice_targets, total_loss, CostConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Absolute differences below this count as exact agreement.
pub const ABS_FLOOR: f64 = 1e-8;
pub const CASES: u64 = 100;

/// Builds a scalar loss from leaf variables; returns the loss node.
pub type Build<'a> = dyn Fn(&mut Graph, &[Value]) -> Value + 'a;

fn eval(inputs: &[Tensor], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vs: Vec<Value> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vs);
    g.item(out)
}

fn rel_error(a: f64, n: f64) -> f64 {
    let diff = (a - n).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / a.abs().max(n.abs())
    }
}

/// Worst disagreement between analytic and central-difference gradients over
/// every input element.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradError {
    /// Relative error, with differences under `ABS_FLOOR` counted as zero.
    pub rel: f64,
    pub abs: f64,
}

impl GradError {
    pub fn max(self, o: GradError) -> GradError {
        GradError {
            rel: self.rel.max(o.rel),
            abs: self.abs.max(o.abs),
        }
    }
}

pub fn worst_error(inputs: &[Tensor], build: &Build) -> GradError {
    let mut g = Graph::new();
    let vs: Vec<Value> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vs);
    g.backward_from(out).unwrap();
    let mut worst = GradError::default();
    for (k, v) in vs.iter().enumerate() {
        let analytic = g.grad(*v).data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * H);
            worst = worst.max(GradError {
                rel: rel_error(a, numeric),
                abs: (a - numeric).abs(),
            });
        }
    }
    worst
}

pub fn check(inputs: &[Tensor], build: &Build, what: &str) {
    let e = worst_error(inputs, build);
    assert!(e.rel <= REL_TOL, "{what}: {e:?}");
}

pub fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x6772_6164 ^ tag)
}

pub fn rand_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| r.random_range(lo..hi)).collect(),
    )
}

pub fn labels(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect()
}

/// Values whose pairwise gaps exceed `gap`, so max and smooth-L1 kinks are not straddled.
pub fn spread(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[1] - w[0] > gap) {
            return v;
        }
    }
}

pub fn away_from_kink(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let x: f64 = r.random_range(-3.0..3.0);
            if (x.abs() - 1.0).abs() > 1e-3 {
                break x;
            }
        })
        .collect()
}

pub fn random_cost(r: &mut ChaCha8Rng) -> CostConfig {
    CostConfig {
        alpha_lesion: r.random_range(0.5..4.0),
        beta_lesion: r.random_range(0.5..4.0),
        alpha_slice: r.random_range(0.5..4.0),
        beta_slice: r.random_range(0.5..4.0),
        use_slice_loss: r.random_bool(0.5),
    }
}

/// Worst error of the lesion-level cost loss over random logits and labels.
pub fn lesion_cost_term() -> GradError {
    let mut r = rng(7);
    let mut worst = GradError::default();
    for _ in 0..CASES {
        let n = r.random_range(1..8);
        let lab = labels(&mut r, n);
        let cfg = random_cost(&mut r);
        let inputs = [rand_tensor(&mut r, n, 1, -3.0, 3.0)];
        worst = worst.max(worst_error(&inputs, &|g, v| {
            let p = g.sigmoid(v[0]);
            lesion_cost_loss(g, Some(p), &lab, &cfg).unwrap()
        }));
    }
    worst
}

/// Worst error of the slice-level loss composed with the max mapping.
pub fn slice_cost_term() -> GradError {
    let mut r = rng(8);
    let mut worst = GradError::default();
    for _ in 0..CASES {
        let n = r.random_range(1..8);
        let lab = labels(&mut r, n);
        let cfg =
            random_cost(&mut r).with_slice(r.random_range(0.5..4.0), r.random_range(0.5..4.0));
        let has_gt = lab.contains(&1.0);
        let inputs = [Tensor::column(spread(&mut r, n, -3.0, 3.0, 1e-3))];
        worst = worst.max(worst_error(&inputs, &|g, v| {
            let p = g.sigmoid(v[0]);
            let (star, ps) = slice_targets(g, Some(p), &lab, has_gt).unwrap();
            slice_cost_loss(g, star, ps, &cfg).unwrap()
        }));
    }
    worst
}

/// Leaf layout for the total loss: rpn logits, rpn deltas, roi logits, roi
/// deltas, mask logits.
struct StageShape {
    n_rpn: usize,
    n_rpn_pos: usize,
    n_roi: usize,
    n_roi_pos: usize,
    m2: usize,
}

/// Worst error of the six-term total, alternating positive and negative
/// slices so both routings are covered.
pub fn total_loss_term() -> GradError {
    let mut r = rng(9);
    let mut worst = GradError::default();
    for case in 0..CASES {
        let positive = case % 2 == 0;
        let sh = StageShape {
            n_rpn: r.random_range(1..6),
            n_rpn_pos: r.random_range(1..3),
            n_roi: r.random_range(1..6),
            n_roi_pos: r.random_range(1..3),
            m2: 4,
        };
        let mut rpn_lab = labels(&mut r, sh.n_rpn);
        let mut roi_lab = labels(&mut r, sh.n_roi);
        if !positive {
            rpn_lab.iter_mut().for_each(|l| *l = 0.0);
            roi_lab.iter_mut().for_each(|l| *l = 0.0);
        }
        let rpn_t: Vec<f64> = (0..4 * sh.n_rpn_pos)
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let roi_t: Vec<f64> = (0..4 * sh.n_roi_pos)
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let mask_t = labels(&mut r, sh.m2 * sh.n_roi_pos);
        let cfg = random_cost(&mut r);
        let rpn_d: Vec<f64> = rpn_t
            .iter()
            .zip(away_from_kink(&mut r, rpn_t.len()))
            .map(|(t, d)| t + d)
            .collect();
        let roi_d: Vec<f64> = roi_t
            .iter()
            .zip(away_from_kink(&mut r, roi_t.len()))
            .map(|(t, d)| t + d)
            .collect();
        let inputs = [
            Tensor::column(spread(&mut r, sh.n_rpn, -3.0, 3.0, 1e-3)),
            Tensor::from_vec(sh.n_rpn_pos, 4, rpn_d),
            Tensor::column(spread(&mut r, sh.n_roi, -3.0, 3.0, 1e-3)),
            Tensor::from_vec(sh.n_roi_pos, 4, roi_d),
            rand_tensor(&mut r, sh.n_roi_pos, sh.m2, -3.0, 3.0),
        ];
        let build = |g: &mut Graph, v: &[Value]| {
            let rpn_probs = g.sigmoid(v[0]);
            let roi_probs = g.sigmoid(v[2]);
            let mask_probs = g.sigmoid(v[4]);
            let out = StageOutputs {
                positive_slice: positive,
                gt_count: usize::from(positive),
                rpn_probs: Some(rpn_probs),
                rpn_labels: rpn_lab.clone(),
                rpn_deltas: positive.then(|| Targeted {
                    pred: v[1],
                    target: rpn_t.clone(),
                    count: sh.n_rpn_pos,
                }),
                roi_probs: Some(roi_probs),
                roi_labels: roi_lab.clone(),
                roi_deltas: positive.then(|| Targeted {
                    pred: v[3],
                    target: roi_t.clone(),
                    count: sh.n_roi_pos,
                }),
                mask_probs: positive.then(|| Targeted {
                    pred: mask_probs,
                    target: mask_t.clone(),
                    count: sh.n_roi_pos,
                }),
                rois: Vec::new(),
                slice_rows: (0..sh.n_roi.saturating_sub(1)).collect(),
            };
            total_loss(g, &out, &cfg).unwrap().total
        };
        worst = worst.max(worst_error(&inputs, &build));
    }
    worst
}

/// Worst error of the lesion cost loss with respect to the classification
/// head's own weights.
pub fn cls_head_parameters() -> GradError {
    let mut r = rng(10);
    let cfg = DetectorConfig {
        hidden: 4,
        ..DetectorConfig::default()
    };
    let mut worst = GradError::default();
    for case in 0..CASES {
        let params = HeadParams::init(cfg.clone(), case);
        let names = ["roi_cls.w1", "roi_cls.b1", "roi_cls.w2", "roi_cls.b2"];
        let mut inputs: Vec<Tensor> = names
            .iter()
            .map(|n| {
                let t = params.store.get(n).unwrap();
                rand_tensor(&mut r, t.rows(), t.cols(), -0.5, 0.5)
            })
            .collect();
        let n = r.random_range(1..5);
        inputs.push(rand_tensor(&mut r, n, params.feature_dim(), 0.0, 1.0));
        let lab = labels(&mut r, n);
        let cost = random_cost(&mut r);
        let build = |g: &mut Graph, v: &[Value]| {
            let mut p = params.clone();
            for (k, name) in names.iter().enumerate() {
                p.store.insert(name, g.data(v[k]).clone());
            }
            // same computation as the head, spelled out so the leaves carry the gradient
            let z1 = g.matmul(v[4], v[0]).unwrap();
            let z1 = g.add_bias(z1, v[1]).unwrap();
            let h = g.tanh(z1);
            let z2 = g.matmul(h, v[2]).unwrap();
            let z2 = g.add_bias(z2, v[3]).unwrap();
            let reference = p.head_eval(Head::RoiCls, g.data(v[4])).unwrap();
            assert_eq!(reference.data(), g.data(z2).data());
            let probs = g.sigmoid(z2);
            lesion_cost_loss(g, Some(probs), &lab, &cost).unwrap()
        };
        worst = worst.max(worst_error(&inputs, &build));
    }
    worst
}
