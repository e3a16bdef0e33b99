use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Value};
use crate::error::Result;

/// Architecture and proposal/labelling hyperparameters shared by training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub channels: usize,
    pub hidden: usize,
    /// Mask grid side `M`.
    pub mask_size: usize,
    pub k_pre: usize,
    pub k_post: usize,
    pub nms_iou: f64,
    /// Proposal/anchor IoU at or above which the label is positive.
    pub pos_iou: f64,
    /// IoU below which (against every GT) the label is negative.
    pub neg_iou: f64,
    /// Anchors sampled per slice for the RPN classification loss.
    pub rpn_batch: usize,
    /// RoIs sampled per slice for the RoI losses.
    pub roi_batch: usize,
    /// Upper bound on the positive share of each sampled batch.
    pub max_positive_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            hidden: 32,
            mask_size: 8,
            k_pre: 64,
            k_post: 16,
            nms_iou: 0.5,
            pos_iou: 0.5,
            neg_iou: 0.2,
            rpn_batch: 64,
            roi_batch: 16,
            max_positive_fraction: 0.5,
        }
    }
}

/// The five heads. Each is a two-layer dense network `tanh(x·W1 + b1)·W2 + b2`
/// over the box feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    RpnCls,
    RpnReg,
    RoiCls,
    RoiBox,
    RoiMask,
}

impl Head {
    pub const ALL: [Head; 5] = [
        Head::RpnCls,
        Head::RpnReg,
        Head::RoiCls,
        Head::RoiBox,
        Head::RoiMask,
    ];

    pub fn prefix(&self) -> &'static str {
        match self {
            Head::RpnCls => "rpn_cls",
            Head::RpnReg => "rpn_reg",
            Head::RoiCls => "roi_cls",
            Head::RoiBox => "roi_box",
            Head::RoiMask => "roi_mask",
        }
    }

    pub fn outputs(&self, cfg: &DetectorConfig) -> usize {
        match self {
            Head::RpnCls | Head::RoiCls => 1,
            Head::RpnReg | Head::RoiBox => 4,
            Head::RoiMask => cfg.mask_size * cfg.mask_size,
        }
    }

    /// Names of the final-layer parameters (`W2`, `b2`).
    pub fn final_layer(&self) -> [String; 2] {
        [
            format!("{}.w2", self.prefix()),
            format!("{}.b2", self.prefix()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub config: DetectorConfig,
    pub store: ParamStore,
}

impl HeadParams {
    /// Seeded init: hidden layers Glorot-uniform, final layers zero so every
    /// head starts at logit 0 (probability 0.5, zero deltas).
    pub fn init(config: DetectorConfig, seed: u64) -> Self {
        let f = super::feature_dim(config.channels);
        let mut store = ParamStore::new(seed);
        for head in Head::ALL {
            let p = head.prefix();
            store.init_uniform(&format!("{p}.w1"), f, config.hidden, 1.0);
            store.init_zeros(&format!("{p}.b1"), 1, config.hidden);
            store.init_zeros(&format!("{p}.w2"), config.hidden, head.outputs(&config));
            store.init_zeros(&format!("{p}.b2"), 1, head.outputs(&config));
        }
        Self { config, store }
    }

    pub fn feature_dim(&self) -> usize {
        super::feature_dim(self.config.channels)
    }

    /// Raw head output (logits or deltas), one row per input row.
    pub fn head_forward(&self, g: &mut Graph, head: Head, x: Value) -> Result<Value> {
        let p = head.prefix();
        let w1 = g.param(&self.store, &format!("{p}.w1"))?;
        let b1 = g.param(&self.store, &format!("{p}.b1"))?;
        let w2 = g.param(&self.store, &format!("{p}.w2"))?;
        let b2 = g.param(&self.store, &format!("{p}.b2"))?;
        let z1 = g.matmul(x, w1)?;
        let z1 = g.add_bias(z1, b1)?;
        let h = g.tanh(z1);
        let z2 = g.matmul(h, w2)?;
        g.add_bias(z2, b2)
    }

    /// Graph-free evaluation of a head, bit-identical to [`head_forward`](Self::head_forward).
    pub fn head_eval(&self, head: Head, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.head_forward(&mut g, head, xv)?;
        Ok(g.data(out).clone())
    }
}
