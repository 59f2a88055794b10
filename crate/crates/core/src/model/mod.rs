//! Encoders, decoder and learned offset assembled into the trainable
//! variants: TVAE (shifting coherence), BubbleVAE (stationary coherence),
//! plain VAE (no topography) and the single 2-D torus model.

mod train;

pub use train::{train, write_history_csv, EpochStats, TrainConfig, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::exec::Exec;
use crate::nn::params::prefixed;
use crate::nn::{Checkpoint, Mlp, ParamRef, ParamSet, Tensor};
use crate::rng::{self, Noise};
use crate::topography::{
    construct_t_with, roll_capsules, Boundary, Neighborhood, TopographyConfig, Variant,
};
use crate::vi::{reparam_sample, DiagonalGaussian, Likelihood};

/// Network widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchPreset {
    /// 28×28×3 inputs, encoders (972, 648, 648), decoder (648, 972, 2352).
    Mnist,
    /// 64×64 inputs, encoders (674, 450, 450), decoder (450, 675, 4096).
    Dsprites,
    /// `[input, hidden.., latent]`; encoders end in `2·latent`, the decoder
    /// mirrors the hidden widths.
    Toy { sizes: Vec<usize> },
}

impl ArchPreset {
    pub fn input_dim(&self) -> usize {
        match self {
            ArchPreset::Mnist => 2352,
            ArchPreset::Dsprites => 4096,
            ArchPreset::Toy { sizes } => sizes.first().copied().unwrap_or(0),
        }
    }

    fn latent_dim(&self) -> usize {
        match self {
            ArchPreset::Mnist => 324,
            ArchPreset::Dsprites => 225,
            ArchPreset::Toy { sizes } => sizes.last().copied().unwrap_or(0),
        }
    }

    fn encoder_hidden(&self) -> Vec<usize> {
        match self {
            ArchPreset::Mnist => vec![972, 648],
            ArchPreset::Dsprites => vec![674, 450],
            ArchPreset::Toy { sizes } => sizes[1..sizes.len().saturating_sub(1)].to_vec(),
        }
    }

    fn decoder_hidden(&self) -> Vec<usize> {
        match self {
            ArchPreset::Mnist => vec![648, 972],
            ArchPreset::Dsprites => vec![450, 675],
            ArchPreset::Toy { .. } => self.encoder_hidden().into_iter().rev().collect(),
        }
    }

    /// Encoder widths ending in `out`.
    pub fn encoder_sizes(&self, out: usize) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.encoder_hidden());
        s.push(out);
        s
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.latent_dim()];
        s.extend(self.decoder_hidden());
        s.push(self.input_dim());
        s
    }
}

/// Trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder_z: Mlp,
    pub encoder_u: Option<Mlp>,
    pub decoder: Mlp,
    /// Learned offset; absent for the plain VAE.
    pub mu: Option<f64>,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder_z: self.encoder_z.zeros_like(),
            encoder_u: self.encoder_u.as_ref().map(Mlp::zeros_like),
            decoder: self.decoder.zeros_like(),
            mu: self.mu.map(|_| 0.0),
        }
    }

    pub fn accumulate(&mut self, other: &ModelParams) {
        self.encoder_z.accumulate(&other.encoder_z);
        if let (Some(a), Some(b)) = (self.encoder_u.as_mut(), other.encoder_u.as_ref()) {
            a.accumulate(b);
        }
        self.decoder.accumulate(&other.decoder);
        if let (Some(a), Some(b)) = (self.mu.as_mut(), other.mu) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.encoder_z.scale(s);
        if let Some(u) = self.encoder_u.as_mut() {
            u.scale(s);
        }
        self.decoder.scale(s);
        if let Some(m) = self.mu.as_mut() {
            *m *= s;
        }
    }
}

impl ParamSet for ModelParams {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = prefixed("encoder_z", self.encoder_z.params());
        if let Some(u) = &self.encoder_u {
            out.extend(prefixed("encoder_u", u.params()));
        }
        out.extend(prefixed("decoder", self.decoder.params()));
        if let Some(m) = &self.mu {
            out.push(ParamRef::new("mu".into(), vec![1], std::slice::from_ref(m)));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder_z.params_mut();
        if let Some(u) = &mut self.encoder_u {
            out.extend(u.params_mut());
        }
        out.extend(self.decoder.params_mut());
        if let Some(m) = &mut self.mu {
            out.push(std::slice::from_mut(m));
        }
        out
    }
}

/// Serializable description of a model, stored in checkpoint manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: ArchPreset,
    pub topo: TopographyConfig,
    #[serde(default)]
    pub likelihood: Likelihood,
}

#[derive(Debug, Clone)]
pub struct TvaeModel {
    pub params: ModelParams,
    spec: ModelSpec,
    nb: Neighborhood,
}

/// Builds and initializes a model. `mu` starts at `topo.mu_init`.
pub fn build_model(
    arch: ArchPreset,
    topo: TopographyConfig,
    likelihood: Likelihood,
    seed: u64,
) -> Result<TvaeModel> {
    topo.validate()?;
    if let ArchPreset::Toy { sizes } = &arch {
        ensure!(
            sizes.len() >= 2 && sizes.iter().all(|&s| s > 0),
            Config,
            "toy sizes must be [input, hidden.., latent] with positive entries, got {:?}",
            sizes
        );
    }
    ensure!(
        arch.latent_dim() == topo.layout.len(),
        Config,
        "preset latent width {} does not match capsule layout {}x{} = {}",
        arch.latent_dim(),
        topo.layout.n_capsules,
        topo.layout.capsule_dim,
        topo.layout.len()
    );
    if let Likelihood::Gaussian { sigma } = likelihood {
        ensure!(sigma > 0.0 && sigma.is_finite(), Config, "gaussian sigma must be positive");
    }
    let n = topo.layout.len();
    let encoder_z = Mlp::init(&arch.encoder_sizes(2 * n), rng::splitmix(seed, 1))?;
    let encoder_u = if topo.uses_u() {
        Some(Mlp::init(&arch.encoder_sizes(2 * topo.u_len()), rng::splitmix(seed, 2))?)
    } else {
        None
    };
    let decoder = Mlp::init(&arch.decoder_sizes(), rng::splitmix(seed, 3))?;
    let mu = topo.uses_u().then_some(topo.mu_init);
    let params = ModelParams {
        encoder_z,
        encoder_u,
        decoder,
        mu,
    };
    TvaeModel::from_parts(ModelSpec { arch, topo, likelihood }, params)
}

/// Posterior parameters for a batch of frames.
#[derive(Debug, Clone)]
pub struct Posteriors {
    pub z: Vec<DiagonalGaussian>,
    pub u: Option<Vec<DiagonalGaussian>>,
}

impl TvaeModel {
    pub fn from_parts(spec: ModelSpec, params: ModelParams) -> Result<Self> {
        spec.topo.validate()?;
        let n = spec.topo.layout.len();
        ensure!(
            params.encoder_z.out_dim() == 2 * n,
            Dimension,
            "encoder_z outputs {} but 2·C·D = {}",
            params.encoder_z.out_dim(),
            2 * n
        );
        ensure!(
            params.encoder_u.is_some() == spec.topo.uses_u() && params.mu.is_some() == spec.topo.uses_u(),
            Config,
            "variant {:?} {} a u-encoder and mu",
            spec.topo.variant,
            if spec.topo.uses_u() { "requires" } else { "has no" }
        );
        if let Some(u) = &params.encoder_u {
            ensure!(
                u.out_dim() == 2 * spec.topo.u_len(),
                Dimension,
                "encoder_u outputs {} but needs {}",
                u.out_dim(),
                2 * spec.topo.u_len()
            );
        }
        ensure!(
            params.decoder.in_dim() == n && params.decoder.out_dim() == params.encoder_z.in_dim(),
            Dimension,
            "decoder maps {} -> {}, expected {} -> {}",
            params.decoder.in_dim(),
            params.decoder.out_dim(),
            n,
            params.encoder_z.in_dim()
        );
        let nb = spec.topo.neighborhood()?;
        Ok(Self { params, spec, nb })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn topo(&self) -> &TopographyConfig {
        &self.spec.topo
    }

    pub fn likelihood(&self) -> Likelihood {
        self.spec.likelihood
    }

    pub(crate) fn neighborhood(&self) -> &Neighborhood {
        &self.nb
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.topo.layout.len()
    }

    pub fn input_dim(&self) -> usize {
        self.params.encoder_z.in_dim()
    }

    pub fn mu(&self) -> f64 {
        self.params.mu.unwrap_or(0.0)
    }

    /// Frame indices feeding the window of frame `l` in a sequence of `s`
    /// frames, oldest first. Cyclic capsules wrap in time; linear-padded
    /// capsules replicate the edge frames.
    pub fn window_frames(&self, l: usize, s: usize) -> Vec<usize> {
        let topo = &self.spec.topo;
        if !topo.uses_u() {
            return vec![l];
        }
        topo.offsets()
            .into_iter()
            .map(|d| {
                let i = l as isize + d;
                match topo.boundary {
                    Boundary::Cyclic => i.rem_euclid(s as isize) as usize,
                    Boundary::LinearPadded => i.clamp(0, s as isize - 1) as usize,
                }
            })
            .collect()
    }

    /// Posterior parameters for every row of `x`.
    pub fn encode(&self, x: &Tensor) -> Result<Posteriors> {
        let (hz, _) = self.params.encoder_z.forward(x)?;
        let z = (0..hz.rows())
            .map(|r| DiagonalGaussian::from_encoder_row(hz.row(r)))
            .collect::<Result<Vec<_>>>()?;
        let u = match &self.params.encoder_u {
            Some(enc) => {
                let (hu, _) = enc.forward(x)?;
                Some(
                    (0..hu.rows())
                        .map(|r| DiagonalGaussian::from_encoder_row(hu.row(r)))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            None => None,
        };
        Ok(Posteriors { z, u })
    }

    /// Decoder outputs (logits or means, per the likelihood) for rows of `t`.
    pub fn decode(&self, t: &Tensor) -> Result<Tensor> {
        Ok(self.params.decoder.forward(t)?.0)
    }

    /// Expected pixel values for each latent row.
    pub fn decode_mean(&self, t: &Tensor) -> Result<Tensor> {
        let out = self.decode(t)?;
        let lik = self.likelihood();
        let data = (0..out.rows()).flat_map(|r| lik.mean(out.row(r))).collect();
        Tensor::from_vec(out.shape().to_vec(), data)
    }

    /// `t_l` for every frame of a cyclic sequence. `Noise::Zero` gives the
    /// deterministic mode: `z` at its posterior mean and each `u²` at its
    /// posterior second moment `m² + s²`. Plugging in the mean of `u` would
    /// shrink the denominator toward `√ε` and blow `t` up.
    pub fn infer_t_sequence(&self, x_seq: &Tensor, noise: &mut Noise) -> Result<Vec<Vec<f64>>> {
        let s = x_seq.rows();
        self.spec.topo.check_sequence_len(s)?;
        let post = self.encode(x_seq)?;
        let z: Vec<Vec<f64>> = post
            .z
            .iter()
            .map(|g| reparam_sample(g, &noise.sample(g.len())))
            .collect::<Result<_>>()?;
        let deterministic = matches!(noise, Noise::Zero);
        let u: Vec<Vec<f64>> = match &post.u {
            Some(us) if deterministic => us
                .iter()
                .map(|g| {
                    g.mean
                        .iter()
                        .zip(&g.log_std)
                        .map(|(m, ls)| (m * m + (2.0 * ls).exp()).sqrt())
                        .collect()
                })
                .collect(),
            Some(us) => us
                .iter()
                .map(|g| reparam_sample(g, &noise.sample(g.len())))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        (0..s)
            .map(|l| {
                let window: Vec<&[f64]> = if u.is_empty() {
                    Vec::new()
                } else {
                    self.window_frames(l, s).into_iter().map(|f| u[f].as_slice()).collect()
                };
                Ok(construct_t_with(&self.nb, &z[l], &window, self.mu(), &self.spec.topo)?.t)
            })
            .collect()
    }

    /// Deterministic `t` for a single image, replicating it across the
    /// temporal window.
    pub fn infer_t_single(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = (2 * self.spec.topo.half_window).max(1);
        let mut data = Vec::with_capacity(s * x.len());
        for _ in 0..s {
            data.extend_from_slice(x);
        }
        let seq = Tensor::matrix(s, x.len(), data)?;
        Ok(self.infer_t_sequence(&seq, &mut Noise::Zero)?.swap_remove(0))
    }

    /// Encodes the window around the first frame of `x_partial` into `t_0`
    /// (deterministic mode) and decodes `Roll_l(t_0)` for `l = 0..n_steps`.
    /// Returns expected pixel values, one row per step.
    pub fn capsule_traversal(&self, x_partial: &Tensor, n_steps: usize) -> Result<Tensor> {
        let t0 = self.infer_t_sequence(x_partial, &mut Noise::Zero)?.swap_remove(0);
        let layout = self.spec.topo.layout;
        let rows = (0..n_steps)
            .map(|l| roll_capsules(&t0, &layout, l as isize))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Tensor::from_vec(vec![0, self.input_dim()], Vec::new());
        }
        self.decode_mean(&Tensor::from_rows(&rows)?)
    }

    /// Decodes `n` draws from the generative model: `z` and every `u` of the
    /// window standard normal, `t` built as in inference. Returns expected
    /// pixel values, one row per draw.
    pub fn sample_prior(&self, n: usize, noise: &mut Noise) -> Result<Tensor> {
        if n == 0 {
            return Tensor::from_vec(vec![0, self.input_dim()], Vec::new());
        }
        let d = self.latent_dim();
        let (m, w) = (self.nb.u_len(), self.nb.window_len());
        let rows = (0..n)
            .map(|_| {
                let z = noise.sample(d);
                let window: Vec<Vec<f64>> = if self.spec.topo.uses_u() {
                    (0..w).map(|_| noise.sample(m)).collect()
                } else {
                    Vec::new()
                };
                Ok(construct_t_with(&self.nb, &z, &window, self.mu(), &self.spec.topo)?.t)
            })
            .collect::<Result<Vec<_>>>()?;
        self.decode_mean(&Tensor::from_rows(&rows)?)
    }

    /// For each latent unit, the index of the image with the largest
    /// deterministic `t` value (ties go to the lowest index).
    pub fn max_activating_images(&self, images: &Tensor, exec: Exec) -> Result<Vec<usize>> {
        ensure!(images.rows() > 0, Usage, "dataset is empty");
        let ts = exec
            .map_range(0..images.rows(), |i| self.infer_t_single(images.row(i)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let n = self.latent_dim();
        Ok((0..n)
            .map(|j| {
                let mut best = 0;
                for (i, t) in ts.iter().enumerate() {
                    if t[j] > ts[best][j] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let spec = toml::Table::try_from(&self.spec)
            .map_err(|e| crate::Error::Format(format!("model spec: {e}")))?;
        let mut meta = toml::Table::new();
        meta.insert("model".into(), toml::Value::Table(spec));
        let mut ck = Checkpoint::new(meta);
        ck.push_params("", &self.params);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: ModelSpec = ck
            .meta
            .get("model")
            .cloned()
            .ok_or_else(|| crate::Error::Format("manifest has no [meta.model] table".into()))?
            .try_into()
            .map_err(|e| crate::Error::Format(format!("manifest model spec: {e}")))?;
        let mut model = build_model(spec.arch.clone(), spec.topo.clone(), spec.likelihood, 0)
            .map_err(|e| crate::Error::Format(format!("manifest model spec: {e}")))?;
        ck.restore_into("", &mut model.params)?;
        Ok(model)
    }

    pub fn variant(&self) -> Variant {
        self.spec.topo.variant
    }
}
