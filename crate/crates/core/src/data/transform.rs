//! Frame transforms for the rotated / recolored / rescaled digit sequences.
//!
//! Inputs are square grayscale images in `[0, 1]`; outputs are
//! interleaved RGB frames of the same side length (`side·side·3`).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::Tensor;

/// Degrees of rotation and hue per sequence step.
pub const STEP_DEGREES: f64 = 20.0;
pub const SCALE_BASE: f64 = 0.60;
pub const SCALE_STEP: f64 = 0.0366;
/// Peak horizontal stretch of the keystone warp.
pub const KEYSTONE_AMPLITUDE: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Rotation,
    Hue,
    Scale,
    Perspective,
    /// Rotation and hue change together.
    HueRotation,
    /// Keystone warp and hue change together.
    HuePerspective,
    /// Cyclic horizontal translation (toy data).
    Shift,
    SpriteX,
    SpriteY,
    SpriteOrientation,
    SpriteScale,
}

impl TransformKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::Rotation => "rotation",
            TransformKind::Hue => "hue",
            TransformKind::Scale => "scale",
            TransformKind::Perspective => "perspective",
            TransformKind::HueRotation => "hue-rotation",
            TransformKind::HuePerspective => "hue-perspective",
            TransformKind::Shift => "shift",
            TransformKind::SpriteX => "sprite-x",
            TransformKind::SpriteY => "sprite-y",
            TransformKind::SpriteOrientation => "sprite-orientation",
            TransformKind::SpriteScale => "sprite-scale",
        }
    }
}

fn bilinear(img: &[f64], side: usize, x: f64, y: f64) -> f64 {
    // Pixel (r, c) is centred at (c, r); outside the image reads as zero.
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let get = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= side as f64 || c >= side as f64 {
            0.0
        } else {
            img[r as usize * side + c as usize]
        }
    };
    let v = get(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + get(y0, x0 + 1.0) * fx * (1.0 - fy)
        + get(y0 + 1.0, x0) * (1.0 - fx) * fy
        + get(y0 + 1.0, x0 + 1.0) * fx * fy;
    v.clamp(0.0, 1.0)
}

/// Resamples `img` through an inverse map from output to source coordinates.
fn warp(img: &[f64], side: usize, inv: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let (sx, sy) = inv(c as f64, r as f64);
            out[r * side + c] = bilinear(img, side, sx, sy);
        }
    }
    out
}

fn rotate(img: &[f64], side: usize, degrees: f64) -> Vec<f64> {
    let ctr = (side as f64 - 1.0) / 2.0;
    let (s, c) = (degrees * PI / 180.0).sin_cos();
    warp(img, side, |x, y| {
        let (dx, dy) = (x - ctr, y - ctr);
        (c * dx + s * dy + ctr, -s * dx + c * dy + ctr)
    })
}

fn rescale(img: &[f64], side: usize, factor: f64) -> Vec<f64> {
    let ctr = (side as f64 - 1.0) / 2.0;
    warp(img, side, |x, y| ((x - ctr) / factor + ctr, (y - ctr) / factor + ctr))
}

fn keystone(img: &[f64], side: usize, k: f64) -> Vec<f64> {
    let ctr = (side as f64 - 1.0) / 2.0;
    warp(img, side, |x, y| {
        let stretch = 1.0 + k * (y - ctr) / side as f64;
        ((x - ctr) / stretch + ctr, y)
    })
}

/// RGB multipliers of a fully saturated hue (degrees).
fn hue_rgb(h: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

fn to_rgb(gray: &[f64], tint: [f64; 3]) -> Vec<f64> {
    gray.iter().flat_map(|&v| tint.map(|t| t * v)).collect()
}

fn side_of(img: &[f64]) -> Result<usize> {
    let side = (img.len() as f64).sqrt().round() as usize;
    ensure!(
        side > 0 && side * side == img.len(),
        Dimension,
        "frame of {} pixels is not square",
        img.len()
    );
    Ok(side)
}

/// Applies step `step` of a length-`seq_len` cyclic transform to a
/// grayscale square image, returning an RGB frame. Geometric-only kinds
/// render white.
pub fn transform_frame(img: &[f64], kind: TransformKind, step: usize, seq_len: usize) -> Result<Vec<f64>> {
    let side = side_of(img)?;
    ensure!(step < seq_len, Usage, "step {step} outside [0, {seq_len})");
    let deg = STEP_DEGREES * step as f64;
    let keystone_k = KEYSTONE_AMPLITUDE * (2.0 * PI * step as f64 / seq_len as f64).sin();
    let white = [1.0; 3];
    Ok(match kind {
        TransformKind::Rotation => to_rgb(&rotate(img, side, deg), white),
        TransformKind::Hue => to_rgb(img, hue_rgb(deg)),
        TransformKind::Scale => to_rgb(&rescale(img, side, SCALE_BASE + SCALE_STEP * step as f64), white),
        TransformKind::Perspective => to_rgb(&keystone(img, side, keystone_k), white),
        TransformKind::HueRotation => to_rgb(&rotate(img, side, deg), hue_rgb(deg)),
        TransformKind::HuePerspective => to_rgb(&keystone(img, side, keystone_k), hue_rgb(deg)),
        other => {
            return Err(crate::error::Error::Config(format!(
                "transform {} does not apply to digit frames",
                other.name()
            )))
        }
    })
}

/// Frames `start, start+1, …` (mod `seq_len`) of a cyclic transform, one
/// row per frame, with the step index of each frame.
pub fn make_cyclic_sequence(
    img: &[f64],
    kind: TransformKind,
    start: usize,
    seq_len: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let y: Vec<usize> = (0..seq_len).map(|j| (start + j) % seq_len).collect();
    let rows = y
        .iter()
        .map(|&k| transform_frame(img, kind, k, seq_len))
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::from_rows(&rows)?, y))
}
