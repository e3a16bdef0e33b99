//! The six-term multi-task detection loss with cost-sensitive classification
//! at the lesion (RoI) and slice levels.
//!
//! ```text
//! total = rpn_reg + rpn_cls + box + mask + cost_cls + slice_cls
//! ```
//!
//! On slices without ground-truth lesions only the classification terms are
//! kept: `rpn_cls`, the negative half of `cost_cls` and (when enabled) the
//! negative half of `slice_cls`. The regression and mask terms are reported
//! as detached zeros there.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Value, PROB_EPS};
use crate::detector::StageOutputs;
use crate::error::{Error, Result};

/// Misclassification costs. `(1, 1)` at either level is plain binary cross entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub alpha_lesion: f64,
    pub beta_lesion: f64,
    pub alpha_slice: f64,
    pub beta_slice: f64,
    pub use_slice_loss: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            alpha_lesion: 1.0,
            beta_lesion: 1.0,
            alpha_slice: 1.0,
            beta_slice: 1.0,
            use_slice_loss: false,
        }
    }
}

fn fmt_weight(w: f64) -> String {
    if w.fract() == 0.0 && w.abs() < 1e9 {
        format!("{}", w as i64)
    } else {
        format!("{w}").replace('.', "p")
    }
}

impl CostConfig {
    pub fn lesion(alpha: f64, beta: f64) -> Self {
        Self {
            alpha_lesion: alpha,
            beta_lesion: beta,
            ..Self::default()
        }
    }

    pub fn with_slice(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha_slice = alpha;
        self.beta_slice = beta;
        self.use_slice_loss = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = [
            self.alpha_lesion,
            self.beta_lesion,
            self.alpha_slice,
            self.beta_slice,
        ];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config(
                "cost weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Short tag naming the cost tuple, e.g. `a3b1` or `a1b1_s3b1`.
    pub fn tag(&self) -> String {
        let mut t = format!(
            "a{}b{}",
            fmt_weight(self.alpha_lesion),
            fmt_weight(self.beta_lesion)
        );
        if self.use_slice_loss {
            t.push_str(&format!(
                "_s{}b{}",
                fmt_weight(self.alpha_slice),
                fmt_weight(self.beta_slice)
            ));
        }
        t
    }
}

/// Plain-number view of a [`LossBreakdown`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub rpn_reg: f64,
    pub rpn_cls: f64,
    pub box_reg: f64,
    pub mask: f64,
    pub cost_cls: f64,
    pub slice_cls: f64,
    pub total: f64,
}

impl LossValues {
    pub fn add(&mut self, o: &LossValues) {
        self.rpn_reg += o.rpn_reg;
        self.rpn_cls += o.rpn_cls;
        self.box_reg += o.box_reg;
        self.mask += o.mask;
        self.cost_cls += o.cost_cls;
        self.slice_cls += o.slice_cls;
        self.total += o.total;
    }

    pub fn scaled(&self, c: f64) -> LossValues {
        LossValues {
            rpn_reg: self.rpn_reg * c,
            rpn_cls: self.rpn_cls * c,
            box_reg: self.box_reg * c,
            mask: self.mask * c,
            cost_cls: self.cost_cls * c,
            slice_cls: self.slice_cls * c,
            total: self.total * c,
        }
    }
}

/// All six terms as graph nodes; inactive terms are detached zero scalars.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub rpn_reg: Value,
    pub rpn_cls: Value,
    pub box_reg: Value,
    pub mask: Value,
    pub cost_cls: Value,
    pub slice_cls: Value,
    pub total: Value,
}

impl LossBreakdown {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            rpn_reg: g.item(self.rpn_reg),
            rpn_cls: g.item(self.rpn_cls),
            box_reg: g.item(self.box_reg),
            mask: g.item(self.mask),
            cost_cls: g.item(self.cost_cls),
            slice_cls: g.item(self.slice_cls),
            total: g.item(self.total),
        }
    }
}

fn zero(g: &mut Graph) -> Value {
    g.constant(Tensor::scalar(0.0))
}

/// Mean over labelled proposals of
/// `−α·p*·log p − β·(1−p*)·log(1−p)`. With no proposals the result is a detached zero.
///
/// Evaluated as `α·mean(pos part) + β·mean(neg part)`, so scaling `α` on a
/// positives-only batch scales the loss by exactly that factor.
pub fn lesion_cost_loss(
    g: &mut Graph,
    probs: Option<Value>,
    labels: &[f64],
    cfg: &CostConfig,
) -> Result<Value> {
    let Some(p) = probs else {
        return Ok(zero(g));
    };
    if labels.is_empty() {
        return Ok(zero(g));
    }
    let inv = 1.0 / labels.len() as f64;
    let pos = g.weighted_bce(p, labels, 1.0, 0.0)?;
    let pos = g.scale(pos, inv);
    let pos = g.scale(pos, cfg.alpha_lesion);
    let neg = g.weighted_bce(p, labels, 0.0, 1.0)?;
    let neg = g.scale(neg, inv);
    let neg = g.scale(neg, cfg.beta_lesion);
    g.add(pos, neg)
}

/// Lesion-to-slice mapping: `p_slice* = max p_i*`, `p_slice = max p_i`.
/// With no proposals, `p_slice*` comes from the slice's ground truth and
/// `p_slice` is the constant `ε` (no detection).
pub fn slice_targets(
    g: &mut Graph,
    probs: Option<Value>,
    labels: &[f64],
    slice_has_gt: bool,
) -> Result<(f64, Value)> {
    match probs {
        Some(p) if !labels.is_empty() => {
            let star = labels.iter().copied().fold(0.0, f64::max);
            Ok((star, g.max_reduce(p)?))
        }
        _ => {
            let star = if slice_has_gt { 1.0 } else { 0.0 };
            Ok((star, g.constant(Tensor::scalar(PROB_EPS))))
        }
    }
}

/// `−α_slice·p*·log p_slice − β_slice·(1−p*)·log(1−p_slice)`.
pub fn slice_cost_loss(
    g: &mut Graph,
    p_star: f64,
    p_slice: Value,
    cfg: &CostConfig,
) -> Result<Value> {
    g.weighted_bce(p_slice, &[p_star], cfg.alpha_slice, cfg.beta_slice)
}

/// Mean binary cross entropy over rows, `0` when there are none.
fn mean_bce(g: &mut Graph, probs: Option<Value>, labels: &[f64]) -> Result<Value> {
    match probs {
        Some(p) if !labels.is_empty() => {
            let s = g.weighted_bce(p, labels, 1.0, 1.0)?;
            Ok(g.scale(s, 1.0 / labels.len() as f64))
        }
        _ => Ok(zero(g)),
    }
}

fn smooth_l1_per_row(g: &mut Graph, t: &crate::detector::Targeted) -> Result<Value> {
    let s = g.smooth_l1(t.pred, &t.target)?;
    Ok(g.scale(s, 1.0 / t.count as f64))
}

/// Builds every loss term for one slice and the routed total.
///
/// Positive slices: `rpn_reg + rpn_cls + box + mask + cost_cls (+ slice_cls)`.
/// Negative slices: `rpn_cls + cost_cls (+ slice_cls)`, where every label is 0
/// so only the β-weighted halves are non-zero.
pub fn total_loss(g: &mut Graph, out: &StageOutputs, cfg: &CostConfig) -> Result<LossBreakdown> {
    let rpn_cls = mean_bce(g, out.rpn_probs, &out.rpn_labels)?;
    let cost_cls = lesion_cost_loss(g, out.roi_probs, &out.roi_labels, cfg)?;
    let slice_cls = if cfg.use_slice_loss {
        let probs = match out.roi_probs {
            Some(p) if !out.slice_rows.is_empty() => Some(g.select_rows(p, &out.slice_rows)?),
            _ => None,
        };
        let labels: Vec<f64> = out.slice_rows.iter().map(|&i| out.roi_labels[i]).collect();
        let (star, p_slice) = slice_targets(g, probs, &labels, out.positive_slice)?;
        slice_cost_loss(g, star, p_slice, cfg)?
    } else {
        zero(g)
    };

    let (rpn_reg, box_reg, mask) = if out.positive_slice {
        let rpn_reg = match &out.rpn_deltas {
            Some(t) => smooth_l1_per_row(g, t)?,
            None => zero(g),
        };
        let box_reg = match &out.roi_deltas {
            Some(t) => smooth_l1_per_row(g, t)?,
            None => zero(g),
        };
        let mask = match &out.mask_probs {
            Some(t) => {
                let s = g.weighted_bce(t.pred, &t.target, 1.0, 1.0)?;
                g.scale(s, 1.0 / t.target.len() as f64)
            }
            None => zero(g),
        };
        (rpn_reg, box_reg, mask)
    } else {
        (zero(g), zero(g), zero(g))
    };

    let total = if out.positive_slice {
        let t = g.add(rpn_reg, rpn_cls)?;
        let t = g.add(t, box_reg)?;
        let t = g.add(t, mask)?;
        g.add(t, cost_cls)?
    } else {
        g.add(rpn_cls, cost_cls)?
    };
    let total = if cfg.use_slice_loss {
        g.add(total, slice_cls)?
    } else {
        total
    };

    Ok(LossBreakdown {
        rpn_reg,
        rpn_cls,
        box_reg,
        mask,
        cost_cls,
        slice_cls,
        total,
    })
}
