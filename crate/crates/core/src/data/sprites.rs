//! Procedural 2-D shape sprites on a 3×5×15×15×15 factor grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::Tensor;

pub const SPRITE_SIDE: usize = 64;
pub const N_SCALES: usize = 5;
pub const GRID: usize = 15;
/// Pixels between neighboring x / y grid positions.
pub const POSITION_STEP: f64 = 3.0;
const MAX_RADIUS: f64 = 10.0;
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Ellipse,
    Heart,
}

pub const SHAPES: [Shape; 3] = [Shape::Square, Shape::Ellipse, Shape::Heart];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpriteSpec {
    pub shape: Shape,
    pub scale: usize,
    pub orientation: usize,
    pub x: usize,
    pub y: usize,
}

/// The factor a sprite sequence varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpriteFactor {
    X,
    Y,
    Orientation,
    Scale,
}

impl SpriteSpec {
    pub const GRID_SIZE: usize = 3 * N_SCALES * GRID * GRID * GRID;

    pub fn new(shape: Shape, scale: usize, orientation: usize, x: usize, y: usize) -> Result<Self> {
        ensure!(scale < N_SCALES, Domain, "scale index {scale} outside [0, {N_SCALES})");
        for (name, v) in [("orientation", orientation), ("x", x), ("y", y)] {
            ensure!(v < GRID, Domain, "{name} index {v} outside [0, {GRID})");
        }
        Ok(Self { shape, scale, orientation, x, y })
    }

    /// The `i`-th point of the grid in row-major factor order.
    pub fn from_index(i: usize) -> Result<Self> {
        ensure!(i < Self::GRID_SIZE, Domain, "grid index {i} outside [0, {})", Self::GRID_SIZE);
        let (y, i) = (i % GRID, i / GRID);
        let (x, i) = (i % GRID, i / GRID);
        let (orientation, i) = (i % GRID, i / GRID);
        let (scale, i) = (i % N_SCALES, i / N_SCALES);
        Self::new(SHAPES[i], scale, orientation, x, y)
    }

    pub fn center(&self) -> (f64, f64) {
        let c = SPRITE_SIDE as f64 / 2.0;
        let off = |k: usize| (k as f64 - (GRID / 2) as f64) * POSITION_STEP;
        (c + off(self.x), c + off(self.y))
    }

    pub fn radius(&self) -> f64 {
        MAX_RADIUS * (0.6 + 0.1 * self.scale as f64)
    }

    pub fn angle(&self) -> f64 {
        2.0 * PI * self.orientation as f64 / GRID as f64
    }

    fn with_factor(mut self, factor: SpriteFactor, value: usize) -> Self {
        match factor {
            SpriteFactor::X => self.x = value,
            SpriteFactor::Y => self.y = value,
            SpriteFactor::Orientation => self.orientation = value,
            SpriteFactor::Scale => self.scale = value % N_SCALES,
        }
        self
    }
}

fn inside(shape: Shape, u: f64, v: f64) -> bool {
    match shape {
        Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
        Shape::Ellipse => u * u + 4.0 * v * v <= 1.0,
        Shape::Heart => {
            // Implicit heart, flipped so the point faces down in image rows.
            let (x, y) = (1.2 * u, -1.2 * v + 0.1);
            let a = x * x + y * y - 1.0;
            a * a * a - x * x * y * y * y <= 0.0
        }
    }
}

/// Renders a sprite with `SUPERSAMPLE²` coverage anti-aliasing.
pub fn sprites_render(spec: &SpriteSpec) -> Vec<f64> {
    let (cx, cy) = spec.center();
    let r = spec.radius();
    let (s, c) = spec.angle().sin_cos();
    let n = SUPERSAMPLE as f64;
    let mut img = vec![0.0; SPRITE_SIDE * SPRITE_SIDE];
    for row in 0..SPRITE_SIDE {
        for col in 0..SPRITE_SIDE {
            let mut hit = 0;
            for a in 0..SUPERSAMPLE {
                for b in 0..SUPERSAMPLE {
                    let px = col as f64 + (b as f64 + 0.5) / n - cx;
                    let py = row as f64 + (a as f64 + 0.5) / n - cy;
                    // Rotate into the shape frame.
                    let u = (c * px + s * py) / r;
                    let v = (-s * px + c * py) / r;
                    if inside(spec.shape, u, v) {
                        hit += 1;
                    }
                }
            }
            img[row * SPRITE_SIDE + col] = hit as f64 / (n * n);
        }
    }
    img
}

/// A 15-frame sequence varying one factor cyclically from `start`. Scale
/// sequences loop the five scales three times, so `y` still spans 0..15.
pub fn sprites_sequence(spec: &SpriteSpec, factor: SpriteFactor, start: usize) -> Result<(Tensor, Vec<usize>)> {
    let y: Vec<usize> = (0..GRID).map(|j| (start + j) % GRID).collect();
    let rows: Vec<Vec<f64>> = y
        .iter()
        .map(|&k| sprites_render(&spec.with_factor(factor, k)))
        .collect();
    Ok((Tensor::from_rows(&rows)?, y))
}
