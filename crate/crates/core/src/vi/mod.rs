//! Variational machinery: diagonal Gaussians, KL terms, decoder
//! likelihoods and the sequence bounds built from them.

mod elbo;

pub use elbo::{elbo_sequence, elbo_value, importance_log_px, ElboOutput, IsWeighting};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian with natural-log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        ensure!(
            mean.len() == log_std.len(),
            Dimension,
            "mean has {} entries, log_std {}",
            mean.len(),
            log_std.len()
        );
        ensure!(
            log_std.iter().all(|v| v.is_finite()),
            Domain,
            "log_std must be finite"
        );
        Ok(Self { mean, log_std })
    }

    /// Splits an encoder output row `[mean | log_std]` in half.
    pub fn from_encoder_row(row: &[f64]) -> Result<Self> {
        ensure!(row.len().is_multiple_of(2), Dimension, "encoder row has odd width {}", row.len());
        let (m, s) = row.split_at(row.len() / 2);
        Self::new(m.to_vec(), s.to_vec())
    }

    pub fn standard(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            log_std: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_normal(x, &self.mean, &self.log_std)
    }
}

/// `mean + exp(log_std)·noise`.
pub fn reparam_sample(g: &DiagonalGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        noise.len() == g.len(),
        Dimension,
        "noise has {} entries, posterior {}",
        noise.len(),
        g.len()
    );
    Ok(g.mean
        .iter()
        .zip(&g.log_std)
        .zip(noise)
        .map(|((m, s), e)| m + s.exp() * e)
        .collect())
}

/// `KL(N(mean, std²) ‖ N(0, 1))` summed over units.
pub fn kl_std_normal(g: &DiagonalGaussian) -> f64 {
    kl_terms(&g.mean, &g.log_std)
}

pub(crate) fn kl_terms(mean: &[f64], log_std: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .map(|(m, s)| 0.5 * (m * m + (2.0 * s).exp() - 2.0 * s - 1.0))
        .sum()
}

/// Log density of a diagonal Gaussian.
pub fn log_normal(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), s)| {
            let e = (x - m) * (-s).exp();
            -0.5 * (e * e + LN_2PI) - s
        })
        .sum()
}

pub fn log_std_normal(x: &[f64]) -> f64 {
    x.iter().map(|x| -0.5 * (x * x + LN_2PI)).sum()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli negative log-likelihood of `x ∈ [0,1]^N` under `σ(logits)`.
pub fn bernoulli_nll(x: &[f64], logits: &[f64]) -> Result<f64> {
    ensure!(
        x.len() == logits.len(),
        Dimension,
        "{} observations but {} logits",
        x.len(),
        logits.len()
    );
    ensure!(
        x.iter().all(|v| (0.0..=1.0).contains(v)),
        Domain,
        "bernoulli observations must lie in [0, 1]"
    );
    Ok(x.iter()
        .zip(logits)
        .map(|(x, l)| softplus(*l) - l * x)
        .sum())
}

/// `∂ nll / ∂ logits = σ(logit) − x`.
pub fn bernoulli_nll_grad(x: &[f64], logits: &[f64]) -> Vec<f64> {
    x.iter().zip(logits).map(|(x, l)| sigmoid(*l) - x).collect()
}

/// Observation model `p(x | decoder output)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum Likelihood {
    /// Decoder outputs are logits of independent Bernoullis.
    #[default]
    Bernoulli,
    /// Decoder outputs are means of independent Gaussians with fixed `sigma`.
    Gaussian { sigma: f64 },
}


impl Likelihood {
    pub fn nll(&self, x: &[f64], out: &[f64]) -> Result<f64> {
        match *self {
            Likelihood::Bernoulli => bernoulli_nll(x, out),
            Likelihood::Gaussian { sigma } => {
                ensure!(x.len() == out.len(), Dimension, "{} vs {}", x.len(), out.len());
                let ls = sigma.ln();
                Ok(x.iter()
                    .zip(out)
                    .map(|(x, m)| {
                        let e = (x - m) / sigma;
                        0.5 * (e * e + LN_2PI) + ls
                    })
                    .sum())
            }
        }
    }

    pub fn nll_grad(&self, x: &[f64], out: &[f64]) -> Vec<f64> {
        match *self {
            Likelihood::Bernoulli => bernoulli_nll_grad(x, out),
            Likelihood::Gaussian { sigma } => {
                let inv = 1.0 / (sigma * sigma);
                x.iter().zip(out).map(|(x, m)| (m - x) * inv).collect()
            }
        }
    }

    /// Maps decoder outputs to expected pixel values.
    pub fn mean(&self, out: &[f64]) -> Vec<f64> {
        match self {
            Likelihood::Bernoulli => out.iter().map(|&l| sigmoid(l)).collect(),
            Likelihood::Gaussian { .. } => out.to_vec(),
        }
    }
}

/// `log(mean(exp(w)))`, stable for any magnitude of `w`.
pub fn log_mean_exp(w: &[f64]) -> f64 {
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = w.iter().map(|v| (v - m).exp()).sum();
    m + (s / w.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream};

    #[test]
    fn reparam_examples() {
        let g = DiagonalGaussian::new(vec![1.0, -2.0], vec![0.3, -0.1]).unwrap();
        assert_eq!(reparam_sample(&g, &[0.0, 0.0]).unwrap(), g.mean);
        let n = [0.4, -1.3];
        assert_eq!(reparam_sample(&DiagonalGaussian::standard(2), &n).unwrap(), n.to_vec());
        assert!(reparam_sample(&g, &[0.0]).is_err());
    }

    #[test]
    fn reparam_sample_mean_clt() {
        let g = DiagonalGaussian::new(vec![0.7], vec![0.5f64.ln()]).unwrap();
        let noise = normal_vec(&mut stream(5, &[]), 100_000);
        let mean: f64 = noise
            .iter()
            .map(|e| reparam_sample(&g, &[*e]).unwrap()[0])
            .sum::<f64>()
            / 1e5;
        assert!((mean - 0.7).abs() < 3.0 * 0.5 / 1e5f64.sqrt());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_std_normal(&DiagonalGaussian::standard(4)), 0.0);
        let g = DiagonalGaussian::new(vec![1.0], vec![0.0]).unwrap();
        assert!((kl_std_normal(&g) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let g = DiagonalGaussian::new(vec![0.8, -0.3], vec![-0.4, 0.2]).unwrap();
        let mut r = stream(11, &[]);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = reparam_sample(&g, &normal_vec(&mut r, 2)).unwrap();
            acc += g.log_density(&x) - log_std_normal(&x);
        }
        let mc = acc / n as f64;
        let exact = kl_std_normal(&g);
        assert!((mc - exact).abs() < 0.01 * exact, "mc {mc} exact {exact}");
    }

    #[test]
    fn bernoulli_examples() {
        assert!(bernoulli_nll(&[1.0], &[800.0]).unwrap() < 1e-300);
        let v = bernoulli_nll(&[0.5; 3], &[0.0; 3]).unwrap();
        assert!((v - 3.0 * 2f64.ln()).abs() < 1e-15);
        assert!(bernoulli_nll(&[1.2], &[0.0]).is_err());
        let g = bernoulli_nll_grad(&[0.25, 1.0], &[0.0, 2.0]);
        assert!((g[0] - 0.25).abs() < 1e-15);
        assert!((g[1] - (sigmoid(2.0) - 1.0)).abs() < 1e-15);
        // Large negative logits stay finite.
        assert!(bernoulli_nll(&[1.0], &[-800.0]).unwrap().is_finite());
    }

    #[test]
    fn log_mean_exp_is_shift_equivariant() {
        let w = [1.0, -3.0, 0.5, 2.0];
        let base = log_mean_exp(&w);
        for c in [-1e4, -7.0, 0.0, 3.0, 1e4] {
            let shifted: Vec<f64> = w.iter().map(|v| v + c).collect();
            assert!((log_mean_exp(&shifted) - (base + c)).abs() < 1e-9 * c.abs().max(1.0));
        }
        assert!((log_mean_exp(&[2.0]) - 2.0).abs() < 1e-15);
    }
}
