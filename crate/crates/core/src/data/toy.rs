//! Small procedural images under cyclic horizontal translation.
//!
//! Each base image is a few Gaussian blobs, thresholded to binary pixels,
//! placed on a grid that wraps horizontally, so rolling the pixel columns is lossless and a
//! sequence of `S` steps of `side / S` pixels returns to its start.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::rng::stream;

pub const TOY_SIDE: usize = 16;

/// `n` binary blob images of `side × side` pixels.
pub fn toy_images(n: usize, side: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, &[0x746f79, i as u64]);
            let blobs = rng.random_range(1..=3);
            let params: Vec<(f64, f64, f64, f64)> = (0..blobs)
                .map(|_| {
                    (
                        rng.random_range(0.0..side as f64),
                        rng.random_range(0.15 * side as f64..0.85 * side as f64),
                        rng.random_range(1.0..2.5),
                        rng.random_range(0.6..1.0),
                    )
                })
                .collect();
            let mut img = vec![0.0; side * side];
            for r in 0..side {
                for c in 0..side {
                    let mut v = 0.0;
                    for &(bx, by, sigma, amp) in &params {
                        let dx = (c as f64 - bx).abs();
                        let dx = dx.min(side as f64 - dx);
                        let dy = r as f64 - by;
                        v += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                    }
                    img[r * side + c] = if v >= 0.5 { 1.0 } else { 0.0 };
                }
            }
            img
        })
        .collect()
}

/// Rolls the columns of a square image right by `px`.
pub fn shift_columns(img: &[f64], side: usize, px: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for r in 0..side {
        for c in 0..side {
            out[r * side + (c + px) % side] = img[r * side + c];
        }
    }
    out
}

/// Step `step` of an `seq_len`-step translation cycle.
pub fn shift_frame(img: &[f64], side: usize, step: usize, seq_len: usize) -> Result<Vec<f64>> {
    ensure!(
        seq_len > 0 && side.is_multiple_of(seq_len),
        Config,
        "image width {side} is not a multiple of the sequence length {seq_len}"
    );
    ensure!(step < seq_len, Usage, "step {step} outside [0, {seq_len})");
    Ok(shift_columns(img, side, step * side / seq_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_deterministic_and_in_range() {
        let a = toy_images(5, 16, 3);
        assert_eq!(a, toy_images(5, 16, 3));
        assert_ne!(a, toy_images(5, 16, 4));
        assert!(a.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.iter().all(|img| img.iter().cloned().fold(0.0, f64::max) > 0.5));
    }

    #[test]
    fn full_cycle_is_identity() {
        let img = &toy_images(1, 16, 0)[0];
        let mut cur = img.clone();
        for _ in 0..8 {
            cur = shift_columns(&cur, 16, 2);
        }
        assert_eq!(&cur, img);
        assert_eq!(shift_frame(img, 16, 3, 8).unwrap(), shift_columns(img, 16, 6));
        assert!(shift_frame(img, 16, 0, 5).is_err());
        assert!(shift_frame(img, 16, 8, 8).is_err());
    }
}
