//! Per-slice SGD over the training split.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::detector::{
    build_anchors, features_matrix, forward_train, Anchor, DetectorConfig, HeadParams, Model,
};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalConfig, MetricsReport};
use crate::geometry::BBox;
use crate::losses::{total_loss, CostConfig, LossValues};
use crate::syndata::{augment_affine, split_of, Split, SyntheticSlice};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub cost: CostConfig,
    /// Random affine augmentation of every training slice, every epoch.
    pub augment: bool,
    /// Checkpoint interval in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Evaluate on the validation split after each epoch.
    pub validate: bool,
    pub detector: DetectorConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.001,
            seed: 0,
            cost: CostConfig::default(),
            augment: false,
            checkpoint_every: 0,
            validate: true,
            detector: DetectorConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate_config(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        self.cost.validate()
    }
}

/// Validation summary recorded after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub lesion_fnr: f64,
    pub lesion_fp_per_slice: f64,
    pub slice_fnr: f64,
    pub slice_fpr: f64,
    pub slice_acc: f64,
}

impl From<&MetricsReport> for EpochSummary {
    fn from(r: &MetricsReport) -> Self {
        Self {
            lesion_fnr: r.lesion_fnr,
            lesion_fp_per_slice: r.lesion_fp_per_slice,
            slice_fnr: r.slice_fnr,
            slice_fpr: r.slice_fpr,
            slice_acc: r.slice_acc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean of every loss term over the training slices of this epoch.
    pub train: LossValues,
    pub val: Option<EpochSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
    /// Number of parameter updates performed.
    pub updates: usize,
    /// Wall-clock seconds; kept out of the CSV so logs are reproducible.
    pub wall_time_secs: f64,
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_nan() => "NaN".into(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,rpn_reg,rpn_cls,box,mask,cost_cls,slice_cls,total,val_lesion_fnr,val_lesion_fp_per_slice,val_slice_fnr,val_slice_fpr,val_slice_acc";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let t = &r.train;
            let v = r.val;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                t.rpn_reg,
                t.rpn_cls,
                t.box_reg,
                t.mask,
                t.cost_cls,
                t.slice_cls,
                t.total,
                fmt(v.map(|v| v.lesion_fnr)),
                fmt(v.map(|v| v.lesion_fp_per_slice)),
                fmt(v.map(|v| v.slice_fnr)),
                fmt(v.map(|v| v.slice_fpr)),
                fmt(v.map(|v| v.slice_acc)),
            ));
        }
        s
    }
}

/// Forward pass, loss, backward and one SGD update on a single slice.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut HeadParams,
    slice: &SyntheticSlice,
    anchors: &[Anchor],
    anchor_features: &Tensor,
    cost: &CostConfig,
    lr: f64,
    rng: &mut R,
) -> Result<LossValues> {
    let mut g = Graph::new();
    let out = forward_train(&mut g, params, slice, anchors, anchor_features, rng)?;
    let loss = total_loss(&mut g, &out, cost)?;
    let values = loss.values(&g);
    if !values.total.is_finite() {
        return Err(Error::Divergence {
            slice_id: slice.slice_id.clone(),
        });
    }
    let grads = g.backward(loss.total, &params.store)?;
    if grads
        .values()
        .any(|t| t.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Divergence {
            slice_id: slice.slice_id.clone(),
        });
    }
    params.store.sgd_step(&grads, lr)?;
    Ok(values)
}

/// Runs inference and metrics on the validation slices without touching `params`.
pub fn evaluate_epoch(
    params: &HeadParams,
    val: &[&SyntheticSlice],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if val.is_empty() {
        return Err(Error::EmptySplit("validation split has no slices".into()));
    }
    evaluate(&Model::Heads(params.clone()), val, cfg)
}

/// Trains on the `train` split of `dataset`, validating on its `val` split.
pub fn train(dataset: &[SyntheticSlice], cfg: &TrainConfig) -> Result<(HeadParams, TrainLog)> {
    train_with(dataset, cfg, |_, _| Ok(()))
}

/// As [`train`], calling `on_epoch(epoch, params)` after every epoch (1-based).
pub fn train_with<F>(
    dataset: &[SyntheticSlice],
    cfg: &TrainConfig,
    on_epoch: F,
) -> Result<(HeadParams, TrainLog)>
where
    F: FnMut(usize, &HeadParams) -> Result<()>,
{
    let tr = split_of(dataset, Split::Train);
    let val = split_of(dataset, Split::Val);
    train_on(&tr, &val, cfg, on_epoch)
}

/// Trains from seeded initial parameters on explicit slice lists.
pub fn train_on<F>(
    train_slices: &[&SyntheticSlice],
    val: &[&SyntheticSlice],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(HeadParams, TrainLog)>
where
    F: FnMut(usize, &HeadParams) -> Result<()>,
{
    cfg.validate_config()?;
    if train_slices.is_empty() {
        return Err(Error::EmptySplit("training split has no slices".into()));
    }
    let start = Instant::now();
    let first = train_slices[0];
    if train_slices
        .iter()
        .any(|s| s.channels != cfg.detector.channels)
    {
        return Err(Error::Config(format!(
            "detector expects {} channels but the dataset has {}",
            cfg.detector.channels, first.channels
        )));
    }
    let anchors = build_anchors(first.height, first.width)?;
    let anchor_boxes: Vec<BBox> = anchors.iter().map(|a| a.bbox).collect();
    let cached: Vec<Option<Tensor>> = if cfg.augment {
        vec![None; train_slices.len()]
    } else {
        train_slices
            .iter()
            .map(|s| features_matrix(s, &anchor_boxes).map(Some))
            .collect::<Result<_>>()?
    };

    let mut params = HeadParams::init(cfg.detector.clone(), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_slices.len()).collect();
    let mut log = TrainLog {
        rows: Vec::with_capacity(cfg.epochs),
        updates: 0,
        wall_time_secs: 0.0,
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossValues::default();
        for &i in &order {
            let owned;
            let (slice, feats_owned);
            let feats = match &cached[i] {
                Some(f) => {
                    slice = train_slices[i];
                    f
                }
                None => {
                    owned = augment_affine(train_slices[i], rng.random());
                    slice = &owned;
                    feats_owned = features_matrix(slice, &anchor_boxes)?;
                    &feats_owned
                }
            };
            let v = train_step(
                &mut params,
                slice,
                &anchors,
                feats,
                &cfg.cost,
                cfg.lr,
                &mut rng,
            )?;
            sum.add(&v);
            log.updates += 1;
        }
        let val_summary = if cfg.validate && !val.is_empty() {
            Some(EpochSummary::from(&evaluate_epoch(
                &params, val, &cfg.eval,
            )?))
        } else {
            None
        };
        log.rows.push(EpochRow {
            epoch,
            train: sum.scaled(1.0 / train_slices.len() as f64),
            val: val_summary,
        });
        on_epoch(epoch, &params)?;
    }
    log.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Head;
    use crate::syndata::{generate, GenConfig};

    fn data(n: usize, pf: f64, seed: u64) -> Vec<SyntheticSlice> {
        generate(&GenConfig {
            n_slices: n,
            positive_fraction: pf,
            seed,
            ..GenConfig::default()
        })
        .unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            validate: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epochs_zero_rejected() {
        let d = data(10, 0.5, 0);
        let err = train(&d, &quick(0)).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn one_slice_one_update() {
        let d = data(1, 1.0, 0);
        let s: Vec<&SyntheticSlice> = d.iter().collect();
        let (_, log) = train_on(&s, &[], &quick(1), |_, _| Ok(())).unwrap();
        assert_eq!(log.updates, 1);
        assert_eq!(log.rows.len(), 1);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let d = data(20, 0.5, 1);
        let cfg = TrainConfig {
            lr: 0.0,
            ..quick(1)
        };
        let (p, _) = train(&d, &cfg).unwrap();
        assert_eq!(p, HeadParams::init(cfg.detector.clone(), cfg.seed));
    }

    #[test]
    fn deterministic() {
        let d = data(20, 0.5, 2);
        let cfg = TrainConfig {
            augment: true,
            ..quick(2)
        };
        let a = train(&d, &cfg).unwrap();
        let b = train(&d, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_csv(), b.1.to_csv());
    }

    #[test]
    fn negative_only_leaves_regression_heads() {
        let d = data(20, 0.0, 3);
        let cfg = TrainConfig {
            lr: 0.05,
            ..quick(1)
        };
        let (p, _) = train(&d, &cfg).unwrap();
        let p0 = HeadParams::init(cfg.detector.clone(), cfg.seed);
        for head in [Head::RpnReg, Head::RoiBox, Head::RoiMask] {
            for name in head.final_layer() {
                assert_eq!(p.store.get(&name), p0.store.get(&name), "{name}");
            }
        }
        assert_ne!(p.store.get("roi_cls.b2"), p0.store.get("roi_cls.b2"));
    }

    #[test]
    fn epoch_evaluation() {
        let d = data(20, 0.5, 4);
        let val = split_of(&d, Split::Train);
        let p = HeadParams::init(DetectorConfig::default(), 0);
        let r = evaluate_epoch(&p, &val, &EvalConfig::default()).unwrap();
        assert_eq!(r.slice_fnr, 1.0);
        let r = evaluate_epoch(&p, &val, &EvalConfig::default().with_threshold(0.4)).unwrap();
        assert_eq!(r.slice_fnr, 0.0);
        assert!(matches!(
            evaluate_epoch(&p, &[], &EvalConfig::default()),
            Err(Error::EmptySplit(_))
        ));
    }
}
