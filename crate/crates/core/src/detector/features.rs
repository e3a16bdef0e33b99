//! Fixed, non-learned per-box features standing in for a convolutional backbone.
//!
//! For each channel: mean, standard deviation, minimum and maximum over the
//! pixels inside the box, and the inner-minus-ring contrast (mean inside minus
//! mean over a 2-px ring around the box, clipped to the image; 0 when the ring
//! is empty). Followed by the normalised geometry `(cx/W, cy/H, w/W, h/H)`.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::syndata::SyntheticSlice;

pub const RING_WIDTH: usize = 2;

pub fn feature_dim(channels: usize) -> usize {
    5 * channels + 4
}

/// Integer pixel span `[lo, hi)` covered by `[a, b)`, at least one pixel wide.
fn pixel_span(a: f64, b: f64, limit: usize) -> (usize, usize) {
    let lo = a.round().clamp(0.0, limit as f64) as usize;
    let hi = b.round().clamp(0.0, limit as f64) as usize;
    if hi > lo {
        (lo, hi)
    } else {
        let c = (0.5 * (a + b)).floor().clamp(0.0, (limit - 1) as f64) as usize;
        (c, c + 1)
    }
}

pub fn box_features(slice: &SyntheticSlice, b: &BBox) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(feature_dim(slice.channels));
    box_features_into(slice, b, &mut out)?;
    Ok(out)
}

fn box_features_into(slice: &SyntheticSlice, b: &BBox, out: &mut Vec<f64>) -> Result<()> {
    if b.area() <= 0.0 || !b.area().is_finite() {
        return Err(Error::Feature(format!("degenerate box {b:?}")));
    }
    let (w, h) = (slice.width, slice.height);
    let (x0, x1) = pixel_span(b.x1, b.x2, w);
    let (y0, y1) = pixel_span(b.y1, b.y2, h);
    let (rx0, rx1) = (x0.saturating_sub(RING_WIDTH), (x1 + RING_WIDTH).min(w));
    let (ry0, ry1) = (y0.saturating_sub(RING_WIDTH), (y1 + RING_WIDTH).min(h));
    let inner_n = ((x1 - x0) * (y1 - y0)) as f64;

    for c in 0..slice.channels {
        let chan = slice.channel(c);
        let (mut sum, mut sq) = (0.0, 0.0);
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in y0..y1 {
            for &v in &chan[y * w + x0..y * w + x1] {
                let v = f64::from(v);
                sum += v;
                sq += v * v;
                mn = mn.min(v);
                mx = mx.max(v);
            }
        }
        let mut outer = 0.0;
        for y in ry0..ry1 {
            for &v in &chan[y * w + rx0..y * w + rx1] {
                outer += f64::from(v);
            }
        }
        let ring_n = ((rx1 - rx0) * (ry1 - ry0)) as f64 - inner_n;
        let mean = sum / inner_n;
        let var = (sq / inner_n - mean * mean).max(0.0);
        let contrast = if ring_n > 0.0 {
            mean - (outer - sum) / ring_n
        } else {
            0.0
        };
        out.extend_from_slice(&[mean, var.sqrt(), mn, mx, contrast]);
    }
    let (cx, cy) = b.center();
    out.extend_from_slice(&[
        cx / w as f64,
        cy / h as f64,
        b.width() / w as f64,
        b.height() / h as f64,
    ]);
    Ok(())
}

/// Feature matrix with one row per box.
pub fn features_matrix(slice: &SyntheticSlice, boxes: &[BBox]) -> Result<Tensor> {
    let dim = feature_dim(slice.channels);
    let mut data = Vec::with_capacity(boxes.len() * dim);
    for b in boxes {
        box_features_into(slice, b, &mut data)?;
    }
    Ok(Tensor::from_vec(boxes.len(), dim, data))
}
