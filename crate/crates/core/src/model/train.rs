//! Minibatch training with classical momentum and resumable checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, TvaeModel};
use crate::data::{batch_iterator, Dataset};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::nn::{Checkpoint, ParamSet, SgdMomentum};
use crate::rng::Noise;
use crate::vi::elbo_sequence;

const VELOCITY_PREFIX: &str = "velocity.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Sequences per batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size > 0, Config, "train.batch_size must be positive");
        ensure!(self.epochs > 0, Config, "train.epochs must be positive");
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            Config,
            "train.learning_rate must be a nonnegative finite number"
        );
        ensure!((0.0..1.0).contains(&self.momentum), Config, "train.momentum must lie in [0, 1)");
        Ok(())
    }
}

/// Per-epoch means over sequences. `elbo` is the per-sequence sum over
/// frames; `elbo_per_frame` divides it by the sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl_z: f64,
    pub kl_u: f64,
    pub elbo_per_frame: f64,
}

pub struct Trainer {
    pub model: TvaeModel,
    pub cfg: TrainConfig,
    opt: SgdMomentum,
    history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(model: TvaeModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = SgdMomentum::new(&model.params, cfg.learning_rate, cfg.momentum)?;
        Ok(Self { model, cfg, opt, history: Vec::new() })
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// One pass over the dataset. Every sequence gets its own noise stream,
    /// so results do not depend on the execution strategy.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochStats> {
        let epoch = self.history.len();
        let (seed, bs, exec) = (self.cfg.seed, self.cfg.batch_size, self.cfg.exec);
        let mut sums = [0.0; 4];
        let mut count = 0usize;
        for (bi, batch) in batch_iterator(data, bs, seed, epoch as u64).enumerate() {
            let batch = batch?;
            let model = &self.model;
            let outs = exec.map_range(0..batch.len(), |b| {
                let mut noise = Noise::seeded(seed, &[0x747261696e, epoch as u64, bi as u64, b as u64]);
                elbo_sequence(model, &batch.sequences[b].frames, &mut noise)
            });
            let mut grads: Option<ModelParams> = None;
            for out in outs {
                let out = out?;
                sums[0] += out.elbo;
                sums[1] += out.recon_nll;
                sums[2] += out.kl_z;
                sums[3] += out.kl_u;
                let g = out.grads.expect("requested gradients");
                match &mut grads {
                    Some(acc) => acc.accumulate(&g),
                    None => grads = Some(g),
                }
            }
            count += batch.len();
            // Ascent direction averaged over the batch, negated for descent.
            let mut grads = grads.expect("nonempty batch");
            grads.scale(-1.0 / batch.len() as f64);
            self.opt.step(&mut self.model.params, &grads)?;
        }
        ensure!(count > 0, Usage, "dataset yields no full batch of {bs} sequences");
        let n = count as f64;
        let stats = EpochStats {
            epoch,
            elbo: sums[0] / n,
            recon: sums[1] / n,
            kl_z: sums[2] / n,
            kl_u: sums[3] / n,
            elbo_per_frame: sums[0] / n / data.seq_len() as f64,
        };
        ensure!(stats.elbo.is_finite(), Degenerate, "ELBO diverged at epoch {epoch}");
        self.history.push(stats);
        Ok(stats)
    }

    /// Trains until `cfg.epochs` epochs are done, calling `on_epoch` after
    /// each one.
    pub fn run(&mut self, data: &Dataset, mut on_epoch: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.history.len() < self.cfg.epochs {
            self.run_epoch(data)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    /// Model, optimizer state and history in one checkpoint.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.model.to_checkpoint()?;
        let names: Vec<_> = self.model.params.params().into_iter().map(|p| (p.name, p.shape)).collect();
        for ((name, shape), v) in names.into_iter().zip(self.opt.velocity()) {
            ck.push(format!("{VELOCITY_PREFIX}{name}"), shape, v.clone());
        }
        let mut train = toml::Table::new();
        let enc = |e: toml::ser::Error| Error::Format(format!("train state: {e}"));
        train.insert("config".into(), toml::Value::Table(toml::Table::try_from(&self.cfg).map_err(enc)?));
        let hist = self
            .history
            .iter()
            .map(|h| toml::Table::try_from(h).map(toml::Value::Table))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(enc)?;
        train.insert("history".into(), toml::Value::Array(hist));
        ck.meta.insert("train".into(), toml::Value::Table(train));
        Ok(ck)
    }

    /// Restores a trainer saved by [`Trainer::to_checkpoint`]. `cfg` may
    /// extend `epochs`; everything else should match the original run.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let model = TvaeModel::from_checkpoint(ck)?;
        let mut t = Self::new(model, cfg)?;
        let names: Vec<_> = t.model.params.params().into_iter().map(|p| p.name).collect();
        for (name, v) in names.iter().zip(t.opt.velocity_mut()) {
            let key = format!("{VELOCITY_PREFIX}{name}");
            let e = ck.get(&key).ok_or_else(|| Error::Format(format!("checkpoint has no `{key}`")))?;
            ensure!(e.data.len() == v.len(), Format, "`{key}` has {} values, expected {}", e.data.len(), v.len());
            v.copy_from_slice(&e.data);
        }
        if let Some(hist) = ck.meta.get("train").and_then(|t| t.get("history")) {
            t.history = hist
                .clone()
                .try_into()
                .map_err(|e| Error::Format(format!("train history: {e}")))?;
        }
        Ok(t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_checkpoint()?.save(dir)
    }
}

/// Trains `model` in place and returns the per-epoch history.
pub fn train(model: &mut TvaeModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    let mut t = Trainer::new(model.clone(), cfg.clone())?;
    t.run(data, |_| Ok(()))?;
    *model = t.model;
    Ok(t.history)
}

/// Writes `epoch,elbo,recon,kl_z,kl_u,elbo_per_frame` rows.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for h in history {
        w.serialize(h).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
