use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Lesion, Mask, SyntheticSlice};

/// Rotation about the image centre, isotropic scale, then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation_deg: 0.0,
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// Rotation in ±15°, translation in ±4 px, scale in [0.9, 1.1].
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            rotation_deg: rng.random_range(-15.0..=15.0),
            scale: rng.random_range(0.9..=1.1),
            tx: rng.random_range(-4.0..=4.0),
            ty: rng.random_range(-4.0..=4.0),
        }
    }
}

/// Maps an output pixel centre back to source coordinates.
struct InverseMap {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    cx: f64,
    cy: f64,
    tx: f64,
    ty: f64,
}

impl InverseMap {
    fn new(p: &AffineParams, width: usize, height: usize) -> Self {
        let (s, c) = p.rotation_deg.to_radians().sin_cos();
        // inverse of scale·R(θ) is R(−θ)/scale
        Self {
            a: c / p.scale,
            b: s / p.scale,
            c: -s / p.scale,
            d: c / p.scale,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            tx: p.tx,
            ty: p.ty,
        }
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let u = x - self.cx - self.tx;
        let v = y - self.cy - self.ty;
        (
            self.a * u + self.b * v + self.cx,
            self.c * u + self.d * v + self.cy,
        )
    }
}

fn bilinear(chan: &[f32], width: usize, height: usize, u: f64, v: f64) -> f64 {
    let u = u.clamp(0.0, (width - 1) as f64);
    let v = v.clamp(0.0, (height - 1) as f64);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let at = |x: usize, y: usize| f64::from(chan[y * width + x]);
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Applies `params` jointly to channels (bilinear, edge-clamped) and lesion
/// masks (nearest neighbour). Boxes are recomputed from the transformed masks;
/// lesions that leave the frame entirely are dropped.
pub fn apply_affine(slice: &SyntheticSlice, params: &AffineParams) -> SyntheticSlice {
    let (w, h) = (slice.width, slice.height);
    let map = InverseMap::new(params, w, h);
    let n = w * h;
    let mut data = vec![0.0f32; slice.data.len()];
    let mut sources = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            sources.push(map.apply(x as f64 + 0.5, y as f64 + 0.5));
        }
    }
    for c in 0..slice.channels {
        let chan = slice.channel(c);
        for (i, &(sx, sy)) in sources.iter().enumerate() {
            let v = bilinear(chan, w, h, sx - 0.5, sy - 0.5);
            data[c * n + i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    let lesions = slice
        .lesions
        .iter()
        .filter_map(|l| {
            let mut m = Mask::new(w, h);
            for (i, &(sx, sy)) in sources.iter().enumerate() {
                let (fx, fy) = (sx.floor(), sy.floor());
                if fx >= 0.0
                    && fy >= 0.0
                    && (fx as usize) < w
                    && (fy as usize) < h
                    && l.mask.get(fx as usize, fy as usize)
                {
                    m.set(i % w, i / w, true);
                }
            }
            Lesion::from_mask(m, l.significant)
        })
        .collect();
    SyntheticSlice {
        slice_id: slice.slice_id.clone(),
        split: slice.split,
        channels: slice.channels,
        height: h,
        width: w,
        data,
        lesions,
    }
}

/// Random affine augmentation drawn from `seed`.
pub fn augment_affine(slice: &SyntheticSlice, seed: u64) -> SyntheticSlice {
    apply_affine(slice, &AffineParams::sample(seed))
}
