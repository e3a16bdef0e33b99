use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Lesion, Mask, PixelBox, Split, SyntheticSlice};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_slices: usize,
    /// Probability that a slice carries lesions.
    pub positive_fraction: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Ellipse semi-axis range in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Lesion contrast range (intensity units).
    pub contrast_min: f64,
    pub contrast_max: f64,
    pub noise_sigma: f64,
    /// Probability of each benign look-alike, annotated as a non-significant lesion.
    pub distractor_rate: f64,
    /// Number of look-alike draws per slice.
    pub max_distractors: usize,
    /// Fraction of look-alikes that carry the exact lesion signature while
    /// staying non-significant (label noise).
    pub mimic_fraction: f64,
    pub seed: u64,
    /// (train, val, test); must sum to 1.
    pub split_ratios: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_slices: 200,
            positive_fraction: 0.4,
            channels: 3,
            height: 64,
            width: 64,
            radius_min: 6.0,
            radius_max: 10.0,
            contrast_min: 0.12,
            contrast_max: 0.35,
            noise_sigma: 0.08,
            distractor_rate: 0.5,
            max_distractors: 2,
            mimic_fraction: 0.25,
            seed: 0,
            split_ratios: [0.8, 0.1, 0.1],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("channels, height and width must be positive");
        }
        if !(self.positive_fraction >= 0.0 && self.positive_fraction <= 1.0) {
            return bad("positive_fraction must lie in [0, 1]");
        }
        if !(self.radius_min > 0.0 && self.radius_max >= self.radius_min) {
            return bad("lesion radius range is empty");
        }
        let extent = 2.0 * self.radius_max + 4.0;
        if extent > self.width as f64 || extent > self.height as f64 {
            return bad("lesion radius range does not fit the image");
        }
        if !(self.contrast_min >= 0.0 && self.contrast_max >= self.contrast_min) {
            return bad("contrast range is empty");
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return bad("noise_sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.distractor_rate)
            || !(0.0..=1.0).contains(&self.mimic_fraction)
        {
            return bad("distractor_rate and mimic_fraction must lie in [0, 1]");
        }
        if self.split_ratios.iter().any(|&r| r < 0.0)
            || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("split ratios must be non-negative and sum to 1");
        }
        Ok(())
    }

    /// Exact (train, val, test) counts for `n_slices`.
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.n_slices as f64;
        let train = (n * self.split_ratios[0]).round() as usize;
        let val = ((n * self.split_ratios[1]).round() as usize).min(self.n_slices - train);
        [train, val, self.n_slices - train - val]
    }
}

/// Per-channel intensity response of a malignant lesion: slightly dark on
/// channel 0, dark on channel 1, bright on channel 2 (T2w / ADC / DWI-like).
const LESION_SIGNATURE: [f64; 3] = [-0.5, -1.0, 1.0];
/// Benign look-alike: same response as a lesion on channels 0 and 2, only
/// weakly dark on channel 1.
const DISTRACTOR_SIGNATURE: [f64; 3] = [-0.5, -0.4, 1.0];
const BACKGROUND: [f64; 3] = [0.45, 0.6, 0.3];

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        u * u + v * v <= 1.0
    }

    fn rasterize(&self, width: usize, height: usize) -> Mask {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }
}

fn boxes_touch(a: &PixelBox, b: &PixelBox, margin: u32) -> bool {
    a.x1 < b.x2 + margin && b.x1 < a.x2 + margin && a.y1 < b.y2 + margin && b.y1 < a.y2 + margin
}

fn place_ellipse(
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
    taken: &[PixelBox],
) -> Option<(Ellipse, Mask, PixelBox)> {
    for _ in 0..32 {
        let rx = rng.random_range(cfg.radius_min..=cfg.radius_max);
        let ry = rng.random_range(cfg.radius_min..=cfg.radius_max);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let r = rx.max(ry) + 2.0;
        let cx = rng.random_range(r..=(cfg.width as f64 - r));
        let cy = rng.random_range(r..=(cfg.height as f64 - r));
        let e = Ellipse {
            cx,
            cy,
            rx,
            ry,
            angle,
        };
        let mask = e.rasterize(cfg.width, cfg.height);
        let Some(bbox) = mask.tight_box() else {
            continue;
        };
        if taken.iter().any(|t| boxes_touch(t, &bbox, 3)) {
            continue;
        }
        return Some((e, mask, bbox));
    }
    None
}

fn box_blur(field: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; field.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(height) {
                for xx in x.saturating_sub(1)..(x + 2).min(width) {
                    s += field[yy * width + xx];
                    n += 1.0;
                }
            }
            out[y * width + x] = s / n;
        }
    }
    out
}

fn paint(img: &mut [f64], mask: &Mask, channels: usize, signature: &[f64; 3], contrast: f64) {
    let n = mask.width() * mask.height();
    for c in 0..channels {
        let delta = signature[c % 3] * contrast;
        for (i, &b) in mask.bits().iter().enumerate() {
            if b {
                img[c * n + i] += delta;
            }
        }
    }
}

fn generate_one(cfg: &GenConfig, index: usize, split: Split) -> SyntheticSlice {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let (w, h, ch) = (cfg.width, cfg.height, cfg.channels);
    let n = w * h;

    let positive = rng.random_bool(cfg.positive_fraction);
    let n_lesions = if positive { rng.random_range(1..=3) } else { 0 };
    let n_distractors = (0..cfg.max_distractors)
        .filter(|_| rng.random_bool(cfg.distractor_rate))
        .count();

    let coarse = Normal::new(0.0, 2.0 * cfg.noise_sigma).expect("sigma validated");
    let fine = Normal::new(0.0, 0.5 * cfg.noise_sigma).expect("sigma validated");
    let mut img = vec![0.0f64; ch * n];
    for c in 0..ch {
        let field: Vec<f64> = (0..n).map(|_| coarse.sample(&mut rng)).collect();
        let smooth = box_blur(&box_blur(&field, w, h), w, h);
        for i in 0..n {
            img[c * n + i] = BACKGROUND[c % 3] + smooth[i];
        }
    }

    let mut taken = Vec::new();
    let mut lesions = Vec::new();
    for _ in 0..n_lesions {
        let Some((_e, mask, bbox)) = place_ellipse(&mut rng, cfg, &taken) else {
            continue;
        };
        let contrast = rng.random_range(cfg.contrast_min..=cfg.contrast_max);
        paint(&mut img, &mask, ch, &LESION_SIGNATURE, contrast);
        taken.push(bbox);
        lesions.push(Lesion {
            bbox,
            mask,
            significant: true,
        });
    }
    for _ in 0..n_distractors {
        if let Some((_e, mask, bbox)) = place_ellipse(&mut rng, cfg, &taken) {
            let contrast = rng.random_range(cfg.contrast_min..=cfg.contrast_max);
            let signature = if rng.random_bool(cfg.mimic_fraction) {
                &LESION_SIGNATURE
            } else {
                &DISTRACTOR_SIGNATURE
            };
            paint(&mut img, &mask, ch, signature, contrast);
            taken.push(bbox);
            lesions.push(Lesion {
                bbox,
                mask,
                significant: false,
            });
        }
    }

    let data = img
        .iter()
        .map(|&v| (v + fine.sample(&mut rng)).clamp(0.0, 1.0) as f32)
        .collect();

    SyntheticSlice {
        slice_id: format!("s{index:05}"),
        split,
        channels: ch,
        height: h,
        width: w,
        data,
        lesions,
    }
}

/// Generates `cfg.n_slices` slices. Output is a pure function of `cfg`.
pub fn generate(cfg: &GenConfig) -> Result<Vec<SyntheticSlice>> {
    cfg.validate()?;
    let [train, val, _] = cfg.split_counts();
    let mut order: Vec<usize> = (0..cfg.n_slices).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Test; cfg.n_slices];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok((0..cfg.n_slices)
        .map(|i| generate_one(cfg, i, splits[i]))
        .collect())
}
