//! Binary portable anymap grids (P5 gray, P6 color).

use std::fs;
use std::path::Path;

use crate::error::{ensure, Result};

/// Encodes `tiles` (each `side·side·channels` values in `[0,1]`, RGB
/// interleaved) into a grid with `cols` tiles per row.
pub fn encode_grid(tiles: &[&[f64]], cols: usize, side: usize, channels: usize) -> Result<Vec<u8>> {
    ensure!(channels == 1 || channels == 3, Usage, "images have 1 or 3 channels, got {channels}");
    let tile_len = side * side * channels;
    ensure!(tiles.iter().all(|t| t.len() == tile_len), Dimension, "every tile must hold {tile_len} values");
    let cols = cols.clamp(1, tiles.len().max(1));
    let (cols, rows) = if tiles.is_empty() { (0, 0) } else { (cols, tiles.len().div_ceil(cols)) };
    let (w, h) = (cols * side, rows * side);
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let mut px = vec![0u8; w * h * channels];
    for (i, tile) in tiles.iter().enumerate() {
        let (tr, tc) = (i / cols, i % cols);
        for r in 0..side {
            for c in 0..side {
                for ch in 0..channels {
                    let v = tile[(r * side + c) * channels + ch];
                    let dst = ((tr * side + r) * w + tc * side + c) * channels + ch;
                    px[dst] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }
    out.extend_from_slice(&px);
    Ok(out)
}

pub fn write_grid(path: &Path, tiles: &[&[f64]], cols: usize, side: usize, channels: usize) -> Result<()> {
    fs::write(path, encode_grid(tiles, cols, side, channels)?)?;
    Ok(())
}

pub fn grid_extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_grid_layout() {
        let a = [0.0, 1.0, 0.5, 0.25];
        let b = [1.0; 4];
        let bytes = encode_grid(&[&a, &b, &a], 2, 2, 1).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 16);
        assert_eq!(&px[..4], &[0, 255, 255, 255]);
        assert_eq!(&px[4..8], &[128, 64, 255, 255]);
        assert_eq!(&px[8..12], &[0, 255, 0, 0]);
    }

    #[test]
    fn color_and_empty() {
        let t = [1.0, 0.0, 0.0];
        let bytes = encode_grid(&[&t], 4, 1, 3).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\x00\x00".to_vec());
        assert_eq!(encode_grid(&[], 4, 16, 1).unwrap(), b"P5\n0 0\n255\n".to_vec());
        assert!(encode_grid(&[&t], 1, 2, 3).is_err());
    }
}
