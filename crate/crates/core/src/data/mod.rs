//! Datasets of cyclic transformation sequences.

mod idx;
mod sprites;
mod toy;
mod transform;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use idx::{load_idx, load_idx_file, IdxData, IMAGES_MAGIC, LABELS_MAGIC};
pub use sprites::{sprites_render, sprites_sequence, Shape, SpriteFactor, SpriteSpec, GRID, SHAPES, SPRITE_SIDE};
pub use toy::{shift_columns, shift_frame, toy_images, TOY_SIDE};
pub use transform::{make_cyclic_sequence, transform_frame, TransformKind};

use crate::error::{ensure, Error, Result};
use crate::nn::Tensor;
use crate::rng::stream;

/// One transformation sequence: `S` frames (rows) and the step index of
/// each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Tensor,
    pub kind: TransformKind,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub sequences: Vec<Sequence>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// All frames as a `B × S × N` tensor.
    pub fn frames(&self) -> Tensor {
        let b = self.sequences.len();
        let (s, n) = self
            .sequences
            .first()
            .map(|q| (q.frames.rows(), q.frames.last_dim()))
            .unwrap_or((0, 0));
        let data = self.sequences.iter().flat_map(|q| q.frames.data().iter().copied()).collect();
        Tensor::from_vec(vec![b, s, n], data).expect("uniform sequence shapes")
    }
}

#[derive(Debug, Clone)]
enum Source {
    Digits(Vec<Vec<f64>>),
    Sprites(Vec<SpriteSpec>),
    Toy(Vec<Vec<f64>>),
}

/// Base images plus the transforms applied to them. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    source: Source,
    kinds: Vec<TransformKind>,
    seq_len: usize,
    side: usize,
    channels: usize,
}

fn sprite_factor(kind: TransformKind) -> Option<SpriteFactor> {
    match kind {
        TransformKind::SpriteX => Some(SpriteFactor::X),
        TransformKind::SpriteY => Some(SpriteFactor::Y),
        TransformKind::SpriteOrientation => Some(SpriteFactor::Orientation),
        TransformKind::SpriteScale => Some(SpriteFactor::Scale),
        _ => None,
    }
}

impl Dataset {
    /// Grayscale square digit images under color/geometric transforms.
    pub fn digits(images: Vec<Vec<f64>>, kinds: Vec<TransformKind>, seq_len: usize) -> Result<Self> {
        ensure!(!images.is_empty(), Usage, "no base images");
        ensure!(!kinds.is_empty(), Config, "no transforms selected");
        ensure!(seq_len >= 2, Config, "sequence length must be at least 2");
        let side = (images[0].len() as f64).sqrt() as usize;
        ensure!(
            images.iter().all(|i| i.len() == side * side),
            Dimension,
            "base images must be square and equally sized"
        );
        for k in &kinds {
            ensure!(
                sprite_factor(*k).is_none() && *k != TransformKind::Shift,
                Config,
                "transform {} does not apply to digit images",
                k.name()
            );
        }
        Ok(Self { source: Source::Digits(images), kinds, seq_len, side, channels: 3 })
    }

    pub fn sprites(specs: Vec<SpriteSpec>, kinds: Vec<TransformKind>) -> Result<Self> {
        ensure!(!specs.is_empty(), Usage, "no base sprites");
        ensure!(!kinds.is_empty(), Config, "no transforms selected");
        for k in &kinds {
            ensure!(sprite_factor(*k).is_some(), Config, "transform {} does not apply to sprites", k.name());
        }
        Ok(Self { source: Source::Sprites(specs), kinds, seq_len: GRID, side: SPRITE_SIDE, channels: 1 })
    }

    /// `n_base` random sprites from the full grid.
    pub fn sprites_sampled(n_base: usize, kinds: Vec<TransformKind>, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, &[0x737072]);
        let specs = (0..n_base)
            .map(|_| SpriteSpec::from_index(rng.random_range(0..SpriteSpec::GRID_SIZE)))
            .collect::<Result<Vec<_>>>()?;
        Self::sprites(specs, kinds)
    }

    /// Procedural blob images under cyclic horizontal translation.
    pub fn toy(n_base: usize, side: usize, seq_len: usize, seed: u64) -> Result<Self> {
        ensure!(n_base > 0, Usage, "no base images");
        ensure!(
            seq_len >= 2 && side.is_multiple_of(seq_len),
            Config,
            "image width {side} is not a multiple of the sequence length {seq_len}"
        );
        Ok(Self {
            source: Source::Toy(toy_images(n_base, side, seed)),
            kinds: vec![TransformKind::Shift],
            seq_len,
            side,
            channels: 1,
        })
    }

    pub fn n_base(&self) -> usize {
        match &self.source {
            Source::Digits(v) | Source::Toy(v) => v.len(),
            Source::Sprites(v) => v.len(),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn kinds(&self) -> &[TransformKind] {
        &self.kinds
    }

    /// Side length and channel count of a frame.
    pub fn frame_shape(&self) -> (usize, usize) {
        (self.side, self.channels)
    }

    pub fn frame_dim(&self) -> usize {
        self.side * self.side * self.channels
    }

    /// Untransformed base image `i` (grayscale).
    pub fn base_image(&self, i: usize) -> Vec<f64> {
        match &self.source {
            Source::Digits(v) | Source::Toy(v) => v[i].clone(),
            Source::Sprites(v) => sprites_render(&v[i]),
        }
    }

    /// Whether step `y` is a canonical (reference) pose for `kind`. Sprite
    /// scale sequences repeat, so they have three.
    pub fn is_canonical(&self, kind: TransformKind, y: usize) -> bool {
        match kind {
            TransformKind::SpriteScale => y.is_multiple_of(sprites::N_SCALES),
            _ => y == 0,
        }
    }

    pub fn make(&self, base: usize, kind: TransformKind, start: usize) -> Result<Sequence> {
        ensure!(base < self.n_base(), Usage, "base index {base} outside [0, {})", self.n_base());
        ensure!(self.kinds.contains(&kind), Usage, "transform {} not in this dataset", kind.name());
        let s = self.seq_len;
        let start = start % s;
        let (frames, y) = match &self.source {
            Source::Digits(v) => make_cyclic_sequence(&v[base], kind, start, s)?,
            Source::Sprites(v) => sprites_sequence(&v[base], sprite_factor(kind).expect("checked"), start)?,
            Source::Toy(v) => {
                let y: Vec<usize> = (0..s).map(|j| (start + j) % s).collect();
                let rows = y
                    .iter()
                    .map(|&k| shift_frame(&v[base], self.side, k, s))
                    .collect::<Result<Vec<_>>>()?;
                (Tensor::from_rows(&rows)?, y)
            }
        };
        Ok(Sequence { frames, kind, y })
    }

    fn draw(&self, base: usize, seed: u64, keys: &[u64]) -> Result<Sequence> {
        let mut rng = stream(seed, keys);
        let kind = self.kinds[rng.random_range(0..self.kinds.len())];
        let start = rng.random_range(0..self.seq_len);
        self.make(base, kind, start)
    }

    /// Shuffled base order of one epoch.
    fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_base()).collect();
        order.shuffle(&mut stream(seed, &[0x65706f6368, epoch]));
        order
    }

    /// `n` sequences for evaluation, deterministic per seed. Bases cycle
    /// through a shuffled order when `n` exceeds the dataset size.
    pub fn eval_sequences(&self, n: usize, seed: u64) -> Result<Vec<Sequence>> {
        let order = self.epoch_order(seed, u64::MAX);
        (0..n)
            .map(|i| self.draw(order[i % order.len()], seed, &[0x6576616c, i as u64]))
            .collect()
    }
}

/// Batches of one epoch: every base image once in a seeded order, each
/// with a random transform kind and start. A trailing partial batch is
/// dropped so every batch has exactly `batch_size` sequences.
pub fn batch_iterator(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> impl Iterator<Item = Result<SequenceBatch>> + '_ {
    let order = if batch_size == 0 { Vec::new() } else { dataset.epoch_order(seed, epoch) };
    let n_batches = if batch_size == 0 { 0 } else { order.len() / batch_size };
    (0..n_batches).map(move |b| {
        let sequences = (b * batch_size..(b + 1) * batch_size)
            .map(|i| dataset.draw(order[i], seed, &[0x64726177, epoch, i as u64]))
            .collect::<Result<Vec<_>>>()?;
        Ok(SequenceBatch { sequences })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Toy,
    Mnist,
    Sprites,
}

/// Dataset section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Number of base images (toy, sprites) or a cap on loaded digits
    /// (mnist; 0 keeps all).
    pub n_base: usize,
    /// Frames per sequence; sprites are always 15.
    pub seq_len: Option<usize>,
    /// Toy image side.
    pub side: usize,
    /// Empty selects every transform of the kind.
    pub transforms: Vec<TransformKind>,
    /// IDX image file, relative to the data directory.
    pub images: String,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Toy,
            n_base: 500,
            seq_len: None,
            side: TOY_SIDE,
            transforms: Vec::new(),
            images: "train-images-idx3-ubyte".into(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn seq_len(&self) -> usize {
        self.seq_len.unwrap_or(match self.kind {
            DatasetKind::Toy => 8,
            DatasetKind::Mnist => 18,
            DatasetKind::Sprites => GRID,
        })
    }

    /// Color channels per frame.
    pub fn channels(&self) -> usize {
        match self.kind {
            DatasetKind::Mnist => 3,
            _ => 1,
        }
    }

    /// Builds the dataset; `data_dir` is required for file-backed kinds.
    pub fn build(&self, data_dir: Option<&Path>) -> Result<Dataset> {
        match self.kind {
            DatasetKind::Toy => {
                ensure!(self.transforms.iter().all(|k| *k == TransformKind::Shift), Config, "data.transforms: toy data only supports shift");
                Dataset::toy(self.n_base, self.side, self.seq_len(), self.seed)
            }
            DatasetKind::Sprites => {
                ensure!(self.seq_len() == GRID, Config, "data.seq_len: sprite sequences have {GRID} frames");
                let kinds = if self.transforms.is_empty() {
                    vec![
                        TransformKind::SpriteX,
                        TransformKind::SpriteY,
                        TransformKind::SpriteOrientation,
                        TransformKind::SpriteScale,
                    ]
                } else {
                    self.transforms.clone()
                };
                Dataset::sprites_sampled(self.n_base, kinds, self.seed)
            }
            DatasetKind::Mnist => {
                let dir = data_dir.ok_or_else(|| Error::Config("mnist data needs a data directory (TOPOCAPS_DATA_DIR)".into()))?;
                let IdxData::Images(t) = load_idx_file(&dir.join(&self.images))? else {
                    return Err(Error::Format(format!("{} holds labels, not images", self.images)));
                };
                let (n, px) = (t.shape()[0], t.shape()[1] * t.shape()[2]);
                let keep = if self.n_base == 0 { n } else { self.n_base.min(n) };
                let images = t.data()[..keep * px].chunks(px).map(<[f64]>::to_vec).collect();
                let kinds = if self.transforms.is_empty() {
                    vec![TransformKind::Rotation, TransformKind::Hue, TransformKind::Scale]
                } else {
                    self.transforms.clone()
                };
                Dataset::digits(images, kinds, self.seq_len())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_have_fixed_shape_and_cyclic_traces() {
        let ds = Dataset::toy(20, 16, 8, 1).unwrap();
        let batches: Vec<_> = batch_iterator(&ds, 8, 5, 0).collect::<Result<_>>().unwrap();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            assert_eq!(b.frames().shape(), &[8, 8, 256]);
            for s in &b.sequences {
                assert!(s.y.windows(2).all(|w| w[1] == (w[0] + 1) % 8));
                assert!(s.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn stream_is_seeded_and_reshuffled() {
        let ds = Dataset::toy(16, 16, 8, 1).unwrap();
        let a: Vec<_> = batch_iterator(&ds, 4, 9, 0).map(|b| b.unwrap()).collect();
        let b: Vec<_> = batch_iterator(&ds, 4, 9, 0).map(|b| b.unwrap()).collect();
        let c: Vec<_> = batch_iterator(&ds, 4, 9, 1).map(|b| b.unwrap()).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn kinds_are_uniform() {
        let imgs = vec![vec![0.0; 4]; 10_000];
        let kinds = vec![TransformKind::Rotation, TransformKind::Hue, TransformKind::Scale];
        let ds = Dataset::digits(imgs, kinds.clone(), 2).unwrap();
        let mut counts = [0usize; 3];
        for batch in batch_iterator(&ds, 100, 3, 0) {
            for s in batch.unwrap().sequences {
                counts[kinds.iter().position(|k| *k == s.kind).unwrap()] += 1;
            }
        }
        let (n, p) = (10_000.0, 1.0 / 3.0);
        let sd = (n * p * (1.0 - p));
        for c in counts {
            assert!((c as f64 - n * p).abs() < 3.0 * sd.sqrt(), "{counts:?}");
        }
    }

    #[test]
    fn toy_sequence_matches_shift() {
        let ds = Dataset::toy(3, 16, 8, 2).unwrap();
        let s = ds.make(1, TransformKind::Shift, 3).unwrap();
        assert_eq!(s.y[0], 3);
        assert_eq!(s.frames.row(0), shift_columns(&ds.base_image(1), 16, 6).as_slice());
        assert!(ds.make(1, TransformKind::Hue, 0).is_err());
    }

    #[test]
    fn spec_defaults_and_errors() {
        let spec = DatasetSpec { n_base: 4, ..Default::default() };
        let ds = spec.build(None).unwrap();
        assert_eq!((ds.seq_len(), ds.frame_dim()), (8, 256));
        let mnist = DatasetSpec { kind: DatasetKind::Mnist, ..Default::default() };
        assert!(matches!(mnist.build(None), Err(Error::Config(_))));
        let missing = mnist.build(Some(Path::new("/nonexistent")));
        assert!(matches!(missing, Err(Error::Format(_))));
        let sprites = DatasetSpec { kind: DatasetKind::Sprites, n_base: 2, ..Default::default() };
        let ds = sprites.build(None).unwrap();
        assert_eq!(ds.frame_dim(), 4096);
        assert!(ds.is_canonical(TransformKind::SpriteScale, 10));
        assert!(!ds.is_canonical(TransformKind::SpriteX, 10));
    }

    #[test]
    fn eval_draws_are_deterministic() {
        let ds = Dataset::toy(5, 16, 8, 0).unwrap();
        assert_eq!(ds.eval_sequences(12, 4).unwrap(), ds.eval_sequences(12, 4).unwrap());
    }
}
