use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const ANCHOR_STRIDE: usize = 8;
pub const ANCHOR_SIZES: [f64; 3] = [8.0, 16.0, 24.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub bbox: BBox,
    /// (row, column) of the stride cell.
    pub grid: (usize, usize),
    pub size_index: usize,
}

/// Square anchors of every size in [`ANCHOR_SIZES`] centred on each cell of an
/// 8-px grid, clipped to the image. Ordered by row, column, then size.
pub fn build_anchors(height: usize, width: usize) -> Result<Vec<Anchor>> {
    if height == 0
        || width == 0
        || !height.is_multiple_of(ANCHOR_STRIDE)
        || !width.is_multiple_of(ANCHOR_STRIDE)
    {
        return Err(Error::Config(format!(
            "image size {height}x{width} is not a positive multiple of the anchor stride {ANCHOR_STRIDE}"
        )));
    }
    let (rows, cols) = (height / ANCHOR_STRIDE, width / ANCHOR_STRIDE);
    let half = ANCHOR_STRIDE as f64 / 2.0;
    let mut out = Vec::with_capacity(rows * cols * ANCHOR_SIZES.len());
    for i in 0..rows {
        for j in 0..cols {
            let cx = (j * ANCHOR_STRIDE) as f64 + half;
            let cy = (i * ANCHOR_STRIDE) as f64 + half;
            for (k, &s) in ANCHOR_SIZES.iter().enumerate() {
                let b = BBox::new(cx - s / 2.0, cy - s / 2.0, cx + s / 2.0, cy + s / 2.0)
                    .clip(width as f64, height as f64);
                out.push(Anchor {
                    bbox: b,
                    grid: (i, j),
                    size_index: k,
                });
            }
        }
    }
    Ok(out)
}
