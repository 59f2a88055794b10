//! The `topocaps` command line: `train`, `eval`, `traverse`, `sample`.

mod config;
mod image;

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{EvalSection, ModelSection, RunConfig, TopoSection};
pub use image::{encode_grid, grid_extension, write_grid};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{evaluate, report_from_latents, write_metrics_csv, EvalOptions, MetricsReport};
use crate::model::{build_model, write_history_csv, TrainConfig, Trainer, TvaeModel};
use crate::nn::{Checkpoint, Tensor};
use crate::rng::{normal_vec, stream, Noise};
use crate::topography::roll_capsules;

pub const DATA_DIR_ENV: &str = "TOPOCAPS_DATA_DIR";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Parser)]
#[command(name = "topocaps", version, about = "Topographic VAEs with learned equivariant capsules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; resumes when --checkpoint is given.
    Train(CommonArgs),
    /// Equivariance metrics and likelihood bounds on evaluation sequences.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Replace model latents with exactly rolled random latents.
        #[arg(long)]
        debug_synthetic_latents: bool,
    },
    /// Input / reconstruction / capsule-traversal grids.
    Traverse {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        n_examples: Option<usize>,
    },
    /// Decode draws from the prior.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides train.seed (train) or eval.seed (other verbs).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Run single-threaded.
    #[arg(long)]
    pub deterministic: bool,
}

impl CommonArgs {
    fn exec(&self) -> Exec {
        if self.deterministic {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }
}

/// Holds the run-directory lock for the life of a command.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "{} is locked by another writer ({} exists)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

/// Loads a checkpoint and the run configuration: `--config` wins over the
/// copy stored at training time.
fn load_run(common: &CommonArgs) -> Result<(TvaeModel, RunConfig, PathBuf)> {
    let dir = common
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Usage("--checkpoint is required".into()))?;
    let ck = Checkpoint::load(&dir)?;
    let model = TvaeModel::from_checkpoint(&ck)?;
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => match ck.meta.get("run") {
            Some(v) => {
                let cfg: RunConfig = v
                    .clone()
                    .try_into()
                    .map_err(|e| Error::Format(format!("manifest run config: {e}")))?;
                cfg.check()?;
                cfg
            }
            None => RunConfig::default(),
        },
    };
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| dir.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")));
    Ok((model, cfg, out))
}

fn check_data_fits(model: &TvaeModel, data: &Dataset) -> Result<()> {
    if model.input_dim() != data.frame_dim() {
        return Err(Error::Config(format!(
            "model.arch expects {} inputs but the dataset frames have {}",
            model.input_dim(),
            data.frame_dim()
        )));
    }
    Ok(())
}

pub fn cmd_train(common: &CommonArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    let train_cfg = TrainConfig { exec: common.exec(), ..cfg.train.clone() };
    let out = common.out.clone().unwrap_or_else(|| Path::new("runs").join(&cfg.name));
    let data = cfg.data.build(data_dir().as_deref())?;

    let mut trainer = match &common.checkpoint {
        Some(dir) => Trainer::from_checkpoint(&Checkpoint::load(dir)?, train_cfg)?,
        None => {
            let topo = cfg.topo.build()?;
            let model = build_model(cfg.model.arch.clone(), topo, cfg.model.likelihood, cfg.train.seed)?;
            Trainer::new(model, train_cfg)?
        }
    };
    check_data_fits(&trainer.model, &data)?;
    let _lock = RunLock::acquire(&out)?;
    let ck_dir = out.join(CHECKPOINT_DIR);
    let hist_path = out.join(HISTORY_FILE);
    let run_table = cfg.to_table()?;
    let save = |t: &Trainer| -> Result<()> {
        let mut ck = t.to_checkpoint()?;
        ck.meta.insert("run".into(), toml::Value::Table(run_table.clone()));
        ck.save(&ck_dir)?;
        write_history_csv(&hist_path, t.history())
    };
    trainer.run(&data, |t| {
        if let Some(h) = t.history().last() {
            println!(
                "epoch {:>4}  elbo {:.4}  recon {:.4}  kl_z {:.4}  kl_u {:.4}",
                h.epoch, h.elbo, h.recon, h.kl_z, h.kl_u
            );
        }
        save(t)
    })?;
    // Already-finished resumes still refresh the outputs.
    save(&trainer)?;
    let written = vec![
        ck_dir.join(crate::nn::checkpoint::MANIFEST_FILE),
        ck_dir.join(crate::nn::checkpoint::PARAMS_FILE),
        hist_path,
    ];
    written.iter().for_each(|p| announce(p));
    Ok(written)
}

/// Exactly rolled random latents following each sequence's factor trace.
fn synthetic_latents(model: &TvaeModel, seqs: &[crate::data::Sequence], seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    let layout = model.topo().layout;
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            let base = normal_vec(&mut stream(seed, &[0x73796e, i as u64]), layout.len());
            s.y.iter().map(|&y| roll_capsules(&base, &layout, y as isize)).collect()
        })
        .collect()
}

pub fn cmd_eval(common: &CommonArgs, synthetic: bool) -> Result<Vec<PathBuf>> {
    let (model, cfg, out) = load_run(common)?;
    let seed = common.seed.unwrap_or(cfg.eval.seed);
    let data = cfg.data.build(data_dir().as_deref())?;
    check_data_fits(&model, &data)?;
    let seqs = data.eval_sequences(cfg.eval.n_sequences, seed)?;
    let opts = EvalOptions {
        seed,
        per_capsule: cfg.eval.per_capsule,
        is_samples: cfg.eval.is_samples,
        exec: common.exec(),
    };
    let report = if synthetic {
        let lat = synthetic_latents(&model, &seqs, seed)?;
        let (eq_error, capcorr) = report_from_latents(&lat, &seqs, &data, &model.topo().layout, opts.per_capsule)?;
        let topo = model.topo();
        MetricsReport {
            variant: "synthetic".into(),
            half_window: topo.half_window,
            kernel: topo.kernel,
            eq_error,
            capcorr,
            n_sequences: seqs.len(),
            seed,
            aggregation: "mean-per-sequence",
            log_px: None,
            elbo: None,
        }
    } else {
        evaluate(&model, &data, &seqs, &opts)?
    };
    fs::create_dir_all(&out)?;
    let path = out.join(METRICS_FILE);
    write_metrics_csv(&path, &[report])?;
    announce(&path);
    Ok(vec![path])
}

pub fn cmd_traverse(common: &CommonArgs, n_examples: Option<usize>) -> Result<Vec<PathBuf>> {
    let (model, cfg, out) = load_run(common)?;
    let seed = common.seed.unwrap_or(cfg.eval.seed);
    let data = cfg.data.build(data_dir().as_deref())?;
    check_data_fits(&model, &data)?;
    let n = n_examples.unwrap_or(cfg.eval.n_examples);
    let seqs = data.eval_sequences(n, seed)?;
    let (side, channels) = data.frame_shape();
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let steps = s.frames.rows();
        let t = model.infer_t_sequence(&s.frames, &mut Noise::Zero)?;
        let recon = model.decode_mean(&Tensor::from_rows(&t)?)?;
        let trav = model.capsule_traversal(&s.frames, steps)?;
        let tiles: Vec<&[f64]> = (0..steps)
            .map(|l| s.frames.row(l))
            .chain((0..steps).map(|l| recon.row(l)))
            .chain((0..steps).map(|l| trav.row(l)))
            .collect();
        let path = out.join(format!("traverse_{i:03}.{}", grid_extension(channels)));
        write_grid(&path, &tiles, steps, side, channels)?;
        announce(&path);
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_sample(common: &CommonArgs, n: Option<usize>) -> Result<Vec<PathBuf>> {
    let (model, cfg, out) = load_run(common)?;
    let seed = common.seed.unwrap_or(cfg.eval.seed);
    let n = n.unwrap_or(cfg.eval.n_samples);
    // Prior samples need no data; only the frame layout.
    let channels = cfg.data.channels();
    let side = ((model.input_dim() / channels) as f64).sqrt().round() as usize;
    if side * side * channels != model.input_dim() {
        return Err(Error::Config(format!(
            "model.arch input width {} is not a square {channels}-channel frame",
            model.input_dim()
        )));
    }
    let samples = model.sample_prior(n, &mut Noise::seeded(seed, &[0x7072696f72]))?;
    let tiles: Vec<&[f64]> = (0..samples.rows()).map(|r| samples.row(r)).collect();
    fs::create_dir_all(&out)?;
    let path = out.join(format!("samples.{}", grid_extension(channels)));
    write_grid(&path, &tiles, 8, side, channels)?;
    announce(&path);
    Ok(vec![path])
}

pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Eval { common, debug_synthetic_latents } => cmd_eval(&common, debug_synthetic_latents),
        Command::Traverse { common, n_examples } => cmd_traverse(&common, n_examples),
        Command::Sample { common, n } => cmd_sample(&common, n),
    }
}
