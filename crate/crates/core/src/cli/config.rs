//! Run configuration files (TOML with `model`, `topo`, `data`, `train` and
//! `eval` sections).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::{ArchPreset, TrainConfig};
use crate::topography::{Boundary, CapsuleLayout, TopographyConfig, Variant};
use crate::vi::Likelihood;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: ArchPreset,
    pub likelihood: Likelihood,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: ArchPreset::Toy { sizes: vec![256, 128, 64] },
            likelihood: Likelihood::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopoSection {
    pub variant: Variant,
    pub capsules: usize,
    pub capsule_dim: usize,
    pub half_window: usize,
    pub kernel: usize,
    pub boundary: Boundary,
    pub causal: bool,
    pub nu: usize,
    /// Defaults per variant when absent.
    pub mu_init: Option<f64>,
    pub epsilon: f64,
    pub torus_dims: Option<[usize; 2]>,
}

impl Default for TopoSection {
    fn default() -> Self {
        Self {
            variant: Variant::Shifting,
            capsules: 8,
            capsule_dim: 8,
            half_window: 4,
            kernel: 3,
            boundary: Boundary::Cyclic,
            causal: false,
            nu: 1,
            mu_init: None,
            epsilon: 1e-6,
            torus_dims: None,
        }
    }
}

impl TopoSection {
    pub fn build(&self) -> Result<TopographyConfig> {
        let prefix = |e: Error| match e {
            Error::Config(m) => Error::Config(format!("topo: {m}")),
            other => other,
        };
        let layout = CapsuleLayout::new(self.capsules, self.capsule_dim).map_err(prefix)?;
        let mut cfg = match self.variant {
            Variant::Shifting => TopographyConfig::shifting(layout, self.half_window, self.kernel),
            Variant::Stationary => TopographyConfig::stationary(layout, self.half_window, self.kernel),
            Variant::None => {
                let mut c = TopographyConfig::none(layout);
                c.half_window = self.half_window;
                c
            }
            Variant::Torus2d => {
                let [h, w] = self.torus_dims.ok_or_else(|| Error::Config("topo.torus_dims is required for torus2d".into()))?;
                let mut c = TopographyConfig::torus2d(h, w, self.kernel);
                c.layout = layout;
                c.half_window = self.half_window;
                c
            }
        };
        cfg.boundary = self.boundary;
        cfg.causal = self.causal;
        cfg.nu = self.nu;
        cfg.epsilon = self.epsilon;
        if let Some(m) = self.mu_init {
            cfg.mu_init = m;
        }
        cfg.validate().map_err(prefix)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_sequences: usize,
    pub seed: u64,
    /// Importance samples for the likelihood estimate; 0 skips it.
    pub is_samples: usize,
    pub per_capsule: bool,
    /// Sequences drawn by `traverse`.
    pub n_examples: usize,
    /// Prior draws decoded by `sample`.
    pub n_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_sequences: 200, seed: 0, is_samples: 10, per_capsule: false, n_examples: 4, n_samples: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub model: ModelSection,
    pub topo: TopoSection,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            model: ModelSection::default(),
            topo: TopoSection::default(),
            data: DatasetSpec::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Cross-section validation.
    pub fn check(&self) -> Result<()> {
        let topo = self.topo.build()?;
        let s = self.data.seq_len();
        if topo.check_sequence_len(s).is_err() {
            return Err(Error::Config(format!(
                "topo.half_window: window exceeds sequence (2L = {} > S = {s})",
                2 * topo.half_window
            )));
        }
        self.train.validate()?;
        if self.eval.n_sequences < 2 {
            return Err(Error::Config("eval.n_sequences must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Format(format!("run config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_toy_run() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.topo.build().unwrap(), TopographyConfig::shifting(CapsuleLayout::new(8, 8).unwrap(), 4, 3));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[topo]\nhalf_windw = 2\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("half_windw")), "{err}");
        let err = RunConfig::parse("[train]\nlearning_rate = \"fast\"\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn oversized_window_is_rejected() {
        let err = RunConfig::parse("[topo]\nhalf_window = 5\n[data]\nseq_len = 8\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("window exceeds sequence")), "{err}");
    }

    #[test]
    fn sections_parse() {
        let text = r#"
name = "vae"
[model]
arch = { kind = "toy", sizes = [16, 8, 8] }
likelihood = { kind = "gaussian", sigma = 0.1 }
[topo]
variant = "none"
capsules = 2
capsule_dim = 4
half_window = 0
[data]
kind = "toy"
n_base = 8
side = 4
seq_len = 4
[train]
learning_rate = 0.001
epochs = 3
[eval]
n_sequences = 10
"#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.topo.build().unwrap().variant, Variant::None);
        assert_eq!(cfg.train.epochs, 3);
        let back: RunConfig = cfg.to_table().unwrap().try_into().unwrap();
        assert_eq!(back, cfg);
    }
}
