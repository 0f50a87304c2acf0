use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ppm::RawImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps 8-bit pixels to `[H, W, 3]` with values `v / 255`.
pub fn normalize(image: &RawImage) -> Tensor<f32> {
    let data = image.pixels().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::from_vec(vec![image.height(), image.width(), 3], data)
        .expect("image dimensions are positive")
}

/// Inverse of [`normalize`]: scales by 255, rounds and clamps to `0..=255`.
pub fn to_raw(t: &Tensor<f32>) -> Result<RawImage> {
    let (h, w, c) = hwc(t)?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let pixels = t
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    RawImage::new(h, w, pixels)
}

fn hwc(t: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape(format!("expected an [H, W, C] image, got {s:?}"))),
    }
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(input - 1),
                frac: (src - lo as f64) as f32,
            }
        })
        .collect()
}

/// Bilinear resampling of an `[H, W, C]` image with half-pixel centers and
/// border clamping.
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (h, w, c) = hwc(t)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::param(format!(
            "target size must be positive, got {out_h}x{out_w}"
        )));
    }
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = t.data();
    let at = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch];
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for ty in &ys {
        for tx in &xs {
            for ch in 0..c {
                let a = at(ty.lo, tx.lo, ch);
                let b = at(ty.lo, tx.hi, ch);
                let top = a + (b - a) * tx.frac;
                let a = at(ty.hi, tx.lo, ch);
                let b = at(ty.hi, tx.hi, ch);
                let bottom = a + (b - a) * tx.frac;
                out.push(top + (bottom - top) * ty.frac);
            }
        }
    }
    Tensor::from_vec(vec![out_h, out_w, c], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    FlipHRot90,
    Contrast,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 7] = [
        AugmentOp::Rot90,
        AugmentOp::Rot180,
        AugmentOp::Rot270,
        AugmentOp::FlipH,
        AugmentOp::FlipV,
        AugmentOp::FlipHRot90,
        AugmentOp::Contrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentOp::Rot90 => "rot90",
            AugmentOp::Rot180 => "rot180",
            AugmentOp::Rot270 => "rot270",
            AugmentOp::FlipH => "flip_h",
            AugmentOp::FlipV => "flip_v",
            AugmentOp::FlipHRot90 => "flip_h_rot90",
            AugmentOp::Contrast => "contrast",
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::param(format!("unknown augmentation `{s}`")))
    }
}

/// Builds an `[oh, ow, c]` image whose pixel `(y, x)` is copied from the
/// source pixel returned by `src`.
fn remap(
    t: &Tensor<f32>,
    oh: usize,
    ow: usize,
    src: impl Fn(usize, usize) -> (usize, usize),
) -> Tensor<f32> {
    let (_, w, c) = hwc(t).expect("checked by caller");
    let data = t.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = src(y, x);
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&data[base..base + c]);
        }
    }
    Tensor::from_vec(vec![oh, ow, c], out).expect("remap preserves element count")
}

fn contrast_stretch(t: &Tensor<f32>) -> Tensor<f32> {
    let (_, _, c) = hwc(t).expect("checked by caller");
    let mut out = t.clone();
    for ch in 0..c {
        let mut vals: Vec<f32> = t.data().iter().skip(ch).step_by(c).copied().collect();
        vals.sort_by(f32::total_cmp);
        let lo = percentile(&vals, 0.02);
        let hi = percentile(&vals, 0.98);
        if hi - lo <= f32::EPSILON {
            continue;
        }
        for v in out.data_mut().iter_mut().skip(ch).step_by(c) {
            *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Linearly interpolated quantile of sorted values.
fn percentile(sorted: &[f32], q: f64) -> f32 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let f = (pos - lo as f64) as f32;
    sorted[lo] + (sorted[hi] - sorted[lo]) * f
}

/// Applies one augmentation to an `[H, W, C]` image. Rotations are
/// clockwise: `rot90` sends pixel `(i, j)` to `(j, H - 1 - i)`.
pub fn augment(t: &Tensor<f32>, op: AugmentOp) -> Result<Tensor<f32>> {
    let (h, w, _) = hwc(t)?;
    Ok(match op {
        AugmentOp::Rot90 => remap(t, w, h, |y, x| (h - 1 - x, y)),
        AugmentOp::Rot180 => remap(t, h, w, |y, x| (h - 1 - y, w - 1 - x)),
        AugmentOp::Rot270 => remap(t, w, h, |y, x| (x, w - 1 - y)),
        AugmentOp::FlipH => remap(t, h, w, |y, x| (y, w - 1 - x)),
        AugmentOp::FlipV => remap(t, h, w, |y, x| (h - 1 - y, x)),
        AugmentOp::FlipHRot90 => augment(&augment(t, AugmentOp::FlipH)?, AugmentOp::Rot90)?,
        AugmentOp::Contrast => contrast_stretch(t),
    })
}
