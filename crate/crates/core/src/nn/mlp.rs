//! Dense feed-forward network with exact reverse-mode gradients.
//!
//! Layers are affine maps `y = W x + b` with a rectifier between layers and
//! the identity after the last one. Weights are row-major `(out, in)`.
//! Inputs are batched as matrices whose rows are independent examples.

use rand::distr::{Distribution, Uniform};

use super::params::{ParamRef, ParamSet};
use super::tensor::{matmul, matmul_at_acc, matmul_bt, Tensor};
use crate::error::{ensure, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    sizes: Vec<usize>,
    batch: usize,
    /// Input to each layer (post-rectifier for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    ensure!(
        layer_sizes.len() >= 2,
        Config,
        "layer_sizes needs at least 2 entries, got {}",
        layer_sizes.len()
    );
    ensure!(
        layer_sizes.iter().all(|&s| s > 0),
        Config,
        "layer sizes must be positive: {:?}",
        layer_sizes
    );
    Ok(())
}

impl Mlp {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` init for weights and biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = rng::stream(seed, &[0x4d4c50]);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
                let mut d = Dense::zeros(fan_in, fan_out);
                d.weight.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                d.bias.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                d
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        ensure!(!layers.is_empty(), Config, "an MLP needs at least one layer");
        for (i, l) in layers.iter().enumerate() {
            ensure!(
                l.weight.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim,
                Dimension,
                "layer {i} buffers do not match ({}, {})",
                l.out_dim,
                l.in_dim
            );
        }
        for (i, w) in layers.windows(2).enumerate() {
            ensure!(
                w[0].out_dim == w[1].in_dim,
                Dimension,
                "layer {} outputs {} but layer {} expects {}",
                i,
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            );
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].in_dim];
        s.extend(self.layers.iter().map(|l| l.out_dim));
        s
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Forward pass over a batch whose last axis is the input width.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        ensure!(
            x.last_dim() == self.in_dim(),
            Dimension,
            "input width {} but network expects {}",
            x.last_dim(),
            self.in_dim()
        );
        let batch = x.rows();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.out_dim];
            matmul_bt(&h, &layer.weight, batch, layer.in_dim, layer.out_dim, &mut out);
            for row in out.chunks_exact_mut(layer.out_dim) {
                for (o, b) in row.iter_mut().zip(&layer.bias) {
                    *o += b;
                }
            }
            inputs.push(h);
            if i < last {
                let act = out.iter().map(|&v| v.max(0.0)).collect();
                pre.push(out);
                h = act;
            } else {
                h = out;
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-scalar input") = self.out_dim();
        let y = Tensor::from_vec(shape, h)?;
        let cache = MlpCache {
            sizes: self.layer_sizes(),
            batch,
            inputs,
            pre,
        };
        Ok((y, cache))
    }

    /// Reverse pass. Returns parameter gradients (as an `Mlp` of the same
    /// shape) and the gradient with respect to the input batch.
    pub fn backward(&self, cache: &MlpCache, grad_y: &Tensor) -> Result<(Mlp, Tensor)> {
        if cache.sizes != self.layer_sizes() {
            return Err(Error::Usage(format!(
                "cache was produced by a network with sizes {:?}, not {:?}",
                cache.sizes,
                self.layer_sizes()
            )));
        }
        ensure!(
            grad_y.last_dim() == self.out_dim() && grad_y.rows() == cache.batch,
            Dimension,
            "grad_y is {}x{} but forward produced {}x{}",
            grad_y.rows(),
            grad_y.last_dim(),
            cache.batch,
            self.out_dim()
        );
        let batch = cache.batch;
        let mut grads = self.zeros_like();
        let mut g = grad_y.data().to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let gl = &mut grads.layers[i];
            matmul_at_acc(&g, &cache.inputs[i], batch, layer.out_dim, layer.in_dim, &mut gl.weight);
            for row in g.chunks_exact(layer.out_dim) {
                for (gb, v) in gl.bias.iter_mut().zip(row) {
                    *gb += v;
                }
            }
            let mut gx = vec![0.0; batch * layer.in_dim];
            matmul(&g, &layer.weight, batch, layer.out_dim, layer.in_dim, &mut gx);
            if i > 0 {
                for (v, &p) in gx.iter_mut().zip(&cache.pre[i - 1]) {
                    if p <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            g = gx;
        }
        let mut shape = grad_y.shape().to_vec();
        *shape.last_mut().expect("non-scalar grad") = self.in_dim();
        Ok((grads, Tensor::from_vec(shape, g)?))
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|x| *x *= s);
            l.bias.iter_mut().for_each(|x| *x *= s);
        }
    }
}

impl ParamSet for Mlp {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push(ParamRef::new(format!("{i}.weight"), vec![l.out_dim, l.in_dim], &l.weight));
            out.push(ParamRef::new(format!("{i}.bias"), vec![l.out_dim], &l.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }
}
