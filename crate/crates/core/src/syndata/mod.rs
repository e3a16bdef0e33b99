//! Deterministic synthetic multi-channel slices with elliptical lesions, the
//! on-disk dataset format, and joint affine augmentation.

mod augment;
mod generate;
mod io;
mod rle;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

pub use augment::{apply_affine, augment_affine, AffineParams};
pub use generate::{generate, GenConfig};
pub use io::{load_dataset, save_dataset, Manifest, ManifestEntry};
pub use rle::{rle_decode, rle_encode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Integer pixel box, half-open: columns `x1..x2`, rows `y1..y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl PixelBox {
    pub fn to_bbox(&self) -> BBox {
        BBox::new(
            f64::from(self.x1),
            f64::from(self.y1),
            f64::from(self.x2),
            f64::from(self.y2),
        )
    }
}

/// Binary `height × width` bitmap, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height);
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tight box around the set pixels, or `None` for an empty mask.
    pub fn tight_box(&self) -> Option<PixelBox> {
        let mut b: Option<PixelBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let (x, y) = (x as u32, y as u32);
                b = Some(match b {
                    None => PixelBox {
                        x1: x,
                        y1: y,
                        x2: x + 1,
                        y2: y + 1,
                    },
                    Some(p) => PixelBox {
                        x1: p.x1.min(x),
                        y1: p.y1.min(y),
                        x2: p.x2.max(x + 1),
                        y2: p.y2.max(y + 1),
                    },
                });
            }
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub bbox: PixelBox,
    pub mask: Mask,
    /// Clinically significant; only significant lesions count as ground truth.
    pub significant: bool,
}

impl Lesion {
    /// Builds a lesion whose bbox is the tight box of `mask`. `None` if the mask is empty.
    pub fn from_mask(mask: Mask, significant: bool) -> Option<Self> {
        let bbox = mask.tight_box()?;
        Some(Self {
            bbox,
            mask,
            significant,
        })
    }
}

/// A `C×H×W` image with intensities in `[0,1]` plus its lesion annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSlice {
    pub slice_id: String,
    pub split: Split,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-major, then row-major.
    pub data: Vec<f32>,
    pub lesions: Vec<Lesion>,
}

impl SyntheticSlice {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// A slice is positive when it carries at least one significant lesion.
    pub fn is_positive(&self) -> bool {
        self.lesions.iter().any(|l| l.significant)
    }

    /// Ground-truth lesions (significant ones only).
    pub fn gt_lesions(&self) -> impl Iterator<Item = &Lesion> {
        self.lesions.iter().filter(|l| l.significant)
    }

    pub fn gt_boxes(&self) -> Vec<BBox> {
        self.gt_lesions().map(|l| l.bbox.to_bbox()).collect()
    }
}

/// Slices belonging to `split`, in dataset order.
pub fn split_of(slices: &[SyntheticSlice], split: Split) -> Vec<&SyntheticSlice> {
    slices.iter().filter(|s| s.split == split).collect()
}
