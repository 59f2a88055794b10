//! Capsule geometry, the `Roll` operator, neighborhood sums and the
//! construction of topographic Student's-t variables from Gaussians.
//!
//! A latent vector of length `C·D` is split into `C` contiguous capsules of
//! `D` units each. The neighborhood operator `W` maps a window of squared
//! `u` vectors (one per timestep offset δ) onto the `C·D` latent positions:
//!
//! * shifting:   `Σ_δ W_δ Roll_{-δ}(u²_{l+δ})`
//! * stationary: `Σ_δ W_δ u²_{l+δ}`
//! * torus2d:    a `K×K` cyclic box sum over an `H×W` grid (single step)
//!
//! `W_δ` is the same centered box kernel of width `K` for every δ. Rolling
//! the window element at offset δ by `-δ` aligns it with the current step,
//! so a representation that advances by `Roll_1` per observed step shares
//! its `u` variables along the diagonal `(l, i) ~ (l-1, i-1)`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::nn::Tensor;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapsuleLayout {
    pub n_capsules: usize,
    pub capsule_dim: usize,
}

impl CapsuleLayout {
    pub fn new(n_capsules: usize, capsule_dim: usize) -> Result<Self> {
        ensure!(
            n_capsules > 0 && capsule_dim > 0,
            Config,
            "capsule layout needs positive sizes, got {n_capsules}x{capsule_dim}"
        );
        Ok(Self {
            n_capsules,
            capsule_dim,
        })
    }

    /// Total number of latent units, `C·D`.
    pub fn len(&self) -> usize {
        self.n_capsules * self.capsule_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, v: &[f64]) -> Result<()> {
        ensure!(
            v.len() == self.len(),
            Dimension,
            "latent vector has length {} but layout is {}x{}",
            v.len(),
            self.n_capsules,
            self.capsule_dim
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Shifting,
    Stationary,
    None,
    Torus2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Cyclic,
    LinearPadded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopographyConfig {
    pub layout: CapsuleLayout,
    pub variant: Variant,
    /// Half-window `L`; the temporal window spans offsets `-L..=L`.
    pub half_window: usize,
    /// Spatial kernel width `K` (odd, or exactly `D`).
    pub kernel: usize,
    pub boundary: Boundary,
    pub causal: bool,
    /// Degrees of freedom for the classic `1/ν` scaling.
    pub nu: usize,
    pub mu_init: f64,
    pub epsilon: f64,
    pub torus_dims: Option<(usize, usize)>,
}

impl TopographyConfig {
    /// Shifting temporal coherence with cyclic capsules.
    pub fn shifting(layout: CapsuleLayout, half_window: usize, kernel: usize) -> Self {
        Self {
            layout,
            variant: Variant::Shifting,
            half_window,
            kernel,
            boundary: Boundary::Cyclic,
            causal: false,
            nu: 1,
            mu_init: 30.0,
            epsilon: 1e-6,
            torus_dims: None,
        }
    }

    pub fn stationary(layout: CapsuleLayout, half_window: usize, kernel: usize) -> Self {
        Self {
            variant: Variant::Stationary,
            ..Self::shifting(layout, half_window, kernel)
        }
    }

    /// Plain Gaussian latents (`t = z`).
    pub fn none(layout: CapsuleLayout) -> Self {
        Self {
            variant: Variant::None,
            mu_init: 0.0,
            ..Self::shifting(layout, 0, 1)
        }
    }

    /// Single 2-D torus of `h×w` units with a `kernel×kernel` box.
    pub fn torus2d(h: usize, w: usize, kernel: usize) -> Self {
        Self {
            layout: CapsuleLayout {
                n_capsules: 1,
                capsule_dim: h * w,
            },
            variant: Variant::Torus2d,
            half_window: 0,
            kernel,
            boundary: Boundary::Cyclic,
            causal: false,
            nu: 1,
            mu_init: 10.0,
            epsilon: 1e-6,
            torus_dims: Some((h, w)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.layout.capsule_dim;
        ensure!(!self.layout.is_empty(), Config, "layout must be nonempty");
        // An even width is only meaningful as the full-capsule box.
        let full_capsule = self.kernel == d && self.variant != Variant::Torus2d;
        ensure!(
            self.kernel >= 1 && (self.kernel % 2 == 1 || full_capsule),
            Config,
            "kernel K must be a positive odd integer (or equal D), got {}",
            self.kernel
        );
        ensure!(self.nu >= 1, Config, "nu must be positive");
        ensure!(
            self.epsilon >= 0.0 && self.epsilon.is_finite(),
            Config,
            "epsilon must be a nonnegative finite number"
        );
        ensure!(self.mu_init.is_finite(), Config, "mu_init must be finite");
        match self.variant {
            Variant::None => {
                ensure!(self.half_window == 0, Config, "variant none requires L = 0");
            }
            Variant::Torus2d => {
                let (h, w) = self
                    .torus_dims
                    .ok_or_else(|| Error::Config("torus2d needs torus_dims".into()))?;
                ensure!(self.layout.n_capsules == 1, Config, "torus2d requires a single capsule");
                ensure!(
                    h * w == d,
                    Config,
                    "torus_dims {h}x{w} do not cover capsule_dim {d}"
                );
                ensure!(self.half_window == 0, Config, "torus2d supports only L = 0");
                ensure!(
                    self.kernel <= h.min(w),
                    Config,
                    "kernel {} exceeds torus side {}",
                    self.kernel,
                    h.min(w)
                );
                ensure!(
                    self.boundary == Boundary::Cyclic,
                    Config,
                    "torus2d is cyclic by construction"
                );
            }
            Variant::Shifting | Variant::Stationary => {
                ensure!(
                    self.kernel <= d,
                    Config,
                    "kernel K = {} exceeds capsule_dim D = {}",
                    self.kernel,
                    d
                );
            }
        }
        Ok(())
    }

    /// Padding slots per capsule edge in the `u` vector.
    pub fn pad(&self) -> usize {
        match self.boundary {
            Boundary::Cyclic => 0,
            Boundary::LinearPadded => self.half_window,
        }
    }

    /// Length of each `u` vector (longer than `z` when padded).
    pub fn u_len(&self) -> usize {
        self.layout.n_capsules * (self.layout.capsule_dim + 2 * self.pad())
    }

    /// Temporal offsets δ entering the window, oldest first.
    pub fn offsets(&self) -> Vec<isize> {
        let l = self.half_window as isize;
        let hi = if self.causal { 0 } else { l };
        (-l..=hi).collect()
    }

    pub fn window_len(&self) -> usize {
        if self.causal {
            self.half_window + 1
        } else {
            2 * self.half_window + 1
        }
    }

    pub fn uses_u(&self) -> bool {
        self.variant != Variant::None
    }

    /// Checks that a cyclic sequence of `s` frames supports the window.
    pub fn check_sequence_len(&self, s: usize) -> Result<()> {
        ensure!(s >= 1, Config, "sequence must have at least one frame");
        ensure!(
            2 * self.half_window <= s,
            Config,
            "window exceeds sequence: L = {} needs S >= {}, got S = {}",
            self.half_window,
            2 * self.half_window,
            s
        );
        Ok(())
    }

    /// Sparse form of the neighborhood operator.
    pub fn neighborhood(&self) -> Result<Neighborhood> {
        self.validate()?;
        Ok(Neighborhood::build(self))
    }
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Cyclic shift within every capsule: entry `i` moves to `(i + delta) mod D`.
pub fn roll_capsules(v: &[f64], layout: &CapsuleLayout, delta: isize) -> Result<Vec<f64>> {
    layout.check(v)?;
    let d = layout.capsule_dim;
    let mut out = vec![0.0; v.len()];
    for (src, dst) in v.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        for (i, &x) in src.iter().enumerate() {
            dst[wrap(i as isize + delta, d)] = x;
        }
    }
    Ok(out)
}

/// Interpolates between the identity and `Roll_1`:
/// `out_j = α·v_{j-1} + (1-α)·v_j` within each capsule.
pub fn partial_roll(v: &[f64], layout: &CapsuleLayout, alpha: f64) -> Result<Vec<f64>> {
    ensure!(
        alpha > 0.0 && alpha <= 1.0,
        Config,
        "partial roll needs alpha in (0, 1], got {alpha}"
    );
    if alpha == 1.0 {
        return roll_capsules(v, layout, 1);
    }
    layout.check(v)?;
    let d = layout.capsule_dim;
    let mut out = vec![0.0; v.len()];
    for (src, dst) in v.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        for j in 0..d {
            let prev = src[wrap(j as isize - 1, d)];
            dst[j] = src[j] + alpha * (prev - src[j]);
        }
    }
    Ok(out)
}

/// One term of the neighborhood operator: output unit `out` receives
/// `u²[slot][u]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tap {
    pub out: u32,
    pub slot: u16,
    pub u: u32,
}

/// Precomputed sparse neighborhood operator for one config.
///
/// Maps a window of `window_len` vectors of length `u_len` onto `C·D`
/// outputs. All weights are 1, so the operator is a list of taps.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    n_out: usize,
    u_len: usize,
    window_len: usize,
    taps: Vec<Tap>,
}

impl Neighborhood {
    fn build(cfg: &TopographyConfig) -> Self {
        let c = cfg.layout.n_capsules;
        let d = cfg.layout.capsule_dim;
        let pad = cfg.pad();
        let padded = d + 2 * pad;
        let h = (cfg.kernel / 2) as isize;
        let mut taps = Vec::new();
        match cfg.variant {
            Variant::Torus2d => {
                let (rows, cols) = cfg.torus_dims.expect("validated");
                for r in 0..rows {
                    for col in 0..cols {
                        let out = r * cols + col;
                        for a in -h..=h {
                            for b in -h..=h {
                                let u = wrap(r as isize + a, rows) * cols + wrap(col as isize + b, cols);
                                taps.push(Tap {
                                    out: out as u32,
                                    slot: 0,
                                    u: u as u32,
                                });
                            }
                        }
                    }
                }
            }
            Variant::None | Variant::Shifting | Variant::Stationary => {
                let (offsets, k_lo, k_hi) = if cfg.variant == Variant::None {
                    (vec![0isize], 0, 0)
                } else {
                    (cfg.offsets(), -h, cfg.kernel as isize - 1 - h)
                };
                for cap in 0..c {
                    for i in 0..d {
                        let out = cap * d + i;
                        for (slot, &delta) in offsets.iter().enumerate() {
                            let shift = if cfg.variant == Variant::Shifting { delta } else { 0 };
                            for k in k_lo..=k_hi {
                                let pos = i as isize + shift + k;
                                let idx = match cfg.boundary {
                                    Boundary::Cyclic => wrap(pos, d),
                                    Boundary::LinearPadded => {
                                        let p = pos + pad as isize;
                                        if p < 0 || p >= padded as isize {
                                            continue;
                                        }
                                        p as usize
                                    }
                                };
                                taps.push(Tap {
                                    out: out as u32,
                                    slot: slot as u16,
                                    u: (cap * padded + idx) as u32,
                                });
                            }
                        }
                    }
                }
            }
        }
        Self {
            n_out: c * d,
            u_len: c * padded,
            window_len: if cfg.variant == Variant::None { 1 } else { cfg.window_len() },
            taps,
        }
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn u_len(&self) -> usize {
        self.u_len
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Number of taps feeding each output unit.
    pub fn neighborhood_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.n_out];
        for t in &self.taps {
            n[t.out as usize] += 1;
        }
        n
    }

    fn check_window<V: AsRef<[f64]>>(&self, window: &[V]) -> Result<()> {
        ensure!(
            window.len() == self.window_len,
            Dimension,
            "window has {} entries, expected {}",
            window.len(),
            self.window_len
        );
        for w in window {
            ensure!(
                w.as_ref().len() == self.u_len,
                Dimension,
                "window entry has length {}, expected {}",
                w.as_ref().len(),
                self.u_len
            );
        }
        Ok(())
    }

    /// Applies the operator to a window of (already squared) values.
    pub fn apply<V: AsRef<[f64]>>(&self, sq_window: &[V]) -> Result<Vec<f64>> {
        self.check_window(sq_window)?;
        let mut out = vec![0.0; self.n_out];
        for t in &self.taps {
            out[t.out as usize] += sq_window[t.slot as usize].as_ref()[t.u as usize];
        }
        Ok(out)
    }

    /// Adjoint: accumulates `grad_out` back onto each window slot.
    pub fn apply_adjoint(&self, grad_out: &[f64], grad_window: &mut [Vec<f64>]) {
        for t in &self.taps {
            grad_window[t.slot as usize][t.u as usize] += grad_out[t.out as usize];
        }
    }
}

/// `W`-weighted sum over a window of squared `u` vectors (oldest first).
pub fn neighborhood_sum<V: AsRef<[f64]>>(u_sq_window: &[V], config: &TopographyConfig) -> Result<Vec<f64>> {
    for w in u_sq_window {
        ensure!(
            w.as_ref().iter().all(|&v| v >= 0.0),
            Domain,
            "squared window entries must be nonnegative"
        );
    }
    config.neighborhood()?.apply(u_sq_window)
}

/// Forward values of the `t` construction, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TForward {
    pub t: Vec<f64>,
    /// `W·u² + ε` per unit.
    pub denom_sq: Vec<f64>,
}

/// Gradients of a scalar with respect to the inputs of [`construct_t`].
#[derive(Debug, Clone)]
pub struct TGrads {
    pub z: Vec<f64>,
    pub u_window: Vec<Vec<f64>>,
    pub mu: f64,
}

/// `t = (z − μ) / sqrt(W·[u²_window] + ε)`, or `t = z` for variant none.
pub fn construct_t<V: AsRef<[f64]>>(z: &[f64], u_window: &[V], mu: f64, config: &TopographyConfig) -> Result<Vec<f64>> {
    let nb = config.neighborhood()?;
    Ok(construct_t_with(&nb, z, u_window, mu, config)?.t)
}

pub fn construct_t_with<V: AsRef<[f64]>>(
    nb: &Neighborhood,
    z: &[f64],
    u_window: &[V],
    mu: f64,
    config: &TopographyConfig,
) -> Result<TForward> {
    config.layout.check(z)?;
    if config.variant == Variant::None {
        return Ok(TForward {
            t: z.to_vec(),
            denom_sq: vec![1.0; z.len()],
        });
    }
    let sq: Vec<Vec<f64>> = u_window
        .iter()
        .map(|u| u.as_ref().iter().map(|v| v * v).collect())
        .collect();
    let mut denom_sq = nb.apply(&sq)?;
    denom_sq.iter_mut().for_each(|s| *s += config.epsilon);
    let t = z
        .iter()
        .zip(&denom_sq)
        .map(|(zi, s)| (zi - mu) / s.sqrt())
        .collect();
    Ok(TForward { t, denom_sq })
}

/// Backward pass of [`construct_t_with`] given `∂loss/∂t`.
pub fn construct_t_backward<V: AsRef<[f64]>>(
    nb: &Neighborhood,
    fwd: &TForward,
    u_window: &[V],
    grad_t: &[f64],
    config: &TopographyConfig,
) -> TGrads {
    if config.variant == Variant::None {
        return TGrads {
            z: grad_t.to_vec(),
            u_window: Vec::new(),
            mu: 0.0,
        };
    }
    let mut gz = Vec::with_capacity(grad_t.len());
    let mut gs = Vec::with_capacity(grad_t.len());
    let mut gmu = 0.0;
    for ((g, s), t) in grad_t.iter().zip(&fwd.denom_sq).zip(&fwd.t) {
        let inv = 1.0 / s.sqrt();
        gz.push(g * inv);
        gmu -= g * inv;
        // ∂t/∂s = −t / (2s)
        gs.push(-g * t / (2.0 * s));
    }
    let mut gsq = vec![vec![0.0; nb.u_len()]; nb.window_len()];
    nb.apply_adjoint(&gs, &mut gsq);
    let gu = gsq
        .into_iter()
        .zip(u_window)
        .map(|(g, u)| g.iter().zip(u.as_ref()).map(|(gi, ui)| 2.0 * gi * ui).collect())
        .collect();
    TGrads {
        z: gz,
        u_window: gu,
        mu: gmu,
    }
}

/// Draws `n_samples` TPoT vectors from standard-normal `Z` and `U`.
///
/// With `classic_scaling` the denominator is `sqrt(W·U²/ν)` and every unit
/// must have exactly `ν` neighbors; otherwise the learned-model form
/// `(Z − mu_init)/sqrt(W·U² + ε)` is used. Returns an `n_samples × C·D`
/// matrix.
pub fn sample_tpot(
    config: &TopographyConfig,
    n_samples: usize,
    seed: u64,
    classic_scaling: bool,
    exec: Exec,
) -> Result<Tensor> {
    let nb = config.neighborhood()?;
    let n = config.layout.len();
    if classic_scaling {
        let sizes = nb.neighborhood_sizes();
        ensure!(
            sizes.iter().all(|&s| s == config.nu),
            Config,
            "classic scaling needs |N(j)| = nu = {} for every unit, got sizes in [{}, {}]",
            config.nu,
            sizes.iter().min().unwrap_or(&0),
            sizes.iter().max().unwrap_or(&0)
        );
    }
    const CHUNK: usize = 4096;
    let n_chunks = n_samples.div_ceil(CHUNK);
    let chunks = exec.map_range(0..n_chunks, |ci| {
        let rows = CHUNK.min(n_samples - ci * CHUNK);
        let mut rng = rng::stream(seed, &[0x7470_6f74, ci as u64]);
        let mut out = Vec::with_capacity(rows * n);
        let mut window = vec![vec![0.0; nb.u_len()]; nb.window_len()];
        let mut z = vec![0.0; n];
        for _ in 0..rows {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            for w in window.iter_mut() {
                for v in w.iter_mut() {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    *v = x * x;
                }
            }
            let s = nb.apply(&window).expect("window shaped by construction");
            if classic_scaling {
                let nu = config.nu as f64;
                out.extend(z.iter().zip(&s).map(|(zi, si)| zi / (si / nu).sqrt()));
            } else if config.variant == Variant::None {
                out.extend(z.iter().map(|zi| zi - config.mu_init));
            } else {
                out.extend(
                    z.iter()
                        .zip(&s)
                        .map(|(zi, si)| (zi - config.mu_init) / (si + config.epsilon).sqrt()),
                );
            }
        }
        out
    });
    Tensor::matrix(n_samples, n, chunks.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(c: usize, d: usize) -> CapsuleLayout {
        CapsuleLayout::new(c, d).unwrap()
    }

    #[test]
    fn roll_examples() {
        let l = layout(1, 3);
        assert_eq!(roll_capsules(&[1.0, 2.0, 3.0], &l, 1).unwrap(), vec![3.0, 1.0, 2.0]);
        let v = [1.0, 2.0, 3.0];
        assert_eq!(roll_capsules(&v, &l, 0).unwrap(), v.to_vec());
        assert_eq!(roll_capsules(&v, &l, 3).unwrap(), v.to_vec());
        // Capsules roll independently.
        let l2 = layout(2, 3);
        let v2 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(
            roll_capsules(&v2, &l2, 1).unwrap(),
            vec![3.0, 1.0, 2.0, 6.0, 4.0, 5.0]
        );
        assert!(matches!(roll_capsules(&v, &l2, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn partial_roll_examples() {
        let l = layout(2, 3);
        let v = [1.0, -2.0, 0.5, 4.0, 7.0, 3.0];
        assert_eq!(partial_roll(&v, &l, 1.0).unwrap(), roll_capsules(&v, &l, 1).unwrap());
        assert_eq!(partial_roll(&[2.0, 4.0], &layout(1, 2), 0.5).unwrap(), vec![3.0, 3.0]);
        assert_eq!(partial_roll(&[1.5; 6], &l, 0.3).unwrap(), vec![1.5; 6]);
        assert!(matches!(partial_roll(&v, &l, 0.0), Err(Error::Config(_))));
        assert!(matches!(partial_roll(&v, &l, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn neighborhood_sum_examples() {
        let l = layout(1, 3);
        let u = vec![vec![0.5, 2.0, 1.0]];
        let id = TopographyConfig::shifting(l, 0, 1);
        assert_eq!(neighborhood_sum(&u, &id).unwrap(), u[0]);

        let full = TopographyConfig::shifting(l, 0, 3);
        assert_eq!(neighborhood_sum(&u, &full).unwrap(), vec![3.5; 3]);

        let shift = TopographyConfig::shifting(l, 1, 1);
        let w = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(neighborhood_sum(&w, &shift).unwrap(), vec![0.0, 3.0, 0.0]);

        let stat = TopographyConfig::stationary(l, 1, 1);
        assert_eq!(neighborhood_sum(&w, &stat).unwrap(), vec![1.0, 1.0, 1.0]);

        // Even widths are accepted only as the whole capsule.
        let even = TopographyConfig::shifting(layout(2, 4), 0, 4);
        let v = vec![vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.5, 0.5, 1.0]];
        assert_eq!(neighborhood_sum(&v, &even).unwrap(), vec![10.0, 10.0, 10.0, 10.0, 2.0, 2.0, 2.0, 2.0]);
        assert!(TopographyConfig::shifting(layout(1, 6), 0, 4).validate().is_err());
    }

    #[test]
    fn neighborhood_sum_errors() {
        let cfg = TopographyConfig::shifting(layout(1, 3), 1, 1);
        let short = vec![vec![1.0; 3]; 2];
        assert!(matches!(neighborhood_sum(&short, &cfg), Err(Error::Dimension(_))));
        let neg = vec![vec![1.0, -1.0, 0.0]; 3];
        assert!(matches!(neighborhood_sum(&neg, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn causal_window_uses_only_past() {
        let mut cfg = TopographyConfig::shifting(layout(1, 3), 1, 1);
        cfg.causal = true;
        assert_eq!(cfg.offsets(), vec![-1, 0]);
        let w = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert_eq!(neighborhood_sum(&w, &cfg).unwrap(), vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn linear_padding_never_wraps() {
        let mut cfg = TopographyConfig::shifting(layout(1, 3), 1, 1);
        cfg.boundary = Boundary::LinearPadded;
        assert_eq!(cfg.u_len(), 5);
        // Padded capsule: [pad_l, u0, u1, u2, pad_r].
        let old = vec![10.0, 1.0, 2.0, 3.0, 20.0];
        let cur = vec![0.0; 5];
        let new = vec![30.0, 4.0, 5.0, 6.0, 40.0];
        let s = neighborhood_sum(&[old, cur, new], &cfg).unwrap();
        // out_i = old[i-1] + cur[i] + new[i+1] in padded coordinates.
        assert_eq!(s, vec![10.0 + 5.0, 1.0 + 6.0, 2.0 + 40.0]);

        let mut k3 = TopographyConfig::stationary(layout(1, 3), 0, 3);
        k3.boundary = Boundary::LinearPadded;
        let s = neighborhood_sum(&[vec![1.0, 2.0, 4.0]], &k3).unwrap();
        assert_eq!(s, vec![3.0, 7.0, 6.0]);
    }

    #[test]
    fn torus_box_sum() {
        let cfg = TopographyConfig::torus2d(3, 4, 3);
        let mut u = vec![0.0; 12];
        u[0] = 1.0; // grid (0, 0)
        let s = neighborhood_sum(&[u], &cfg).unwrap();
        // Cells within cyclic Chebyshev distance 1 of (0, 0).
        let hits: Vec<usize> = (0..12).filter(|&i| s[i] == 1.0).collect();
        assert_eq!(hits, vec![0, 1, 3, 4, 5, 7, 8, 9, 11]);
        assert_eq!(s.iter().sum::<f64>(), 9.0);
    }

    #[test]
    fn config_validation() {
        let l = layout(2, 4);
        assert!(TopographyConfig::shifting(l, 1, 2).validate().is_err());
        assert!(TopographyConfig::shifting(l, 1, 5).validate().is_err());
        let mut none = TopographyConfig::none(l);
        none.half_window = 1;
        assert!(none.validate().is_err());
        let mut torus = TopographyConfig::torus2d(4, 4, 5);
        assert!(torus.validate().is_err());
        torus.kernel = 3;
        assert!(torus.validate().is_ok());
        let cfg = TopographyConfig::shifting(l, 2, 1);
        assert!(cfg.check_sequence_len(4).is_ok());
        assert!(cfg.check_sequence_len(3).is_err());
    }

    #[test]
    fn construct_t_examples() {
        let l = layout(1, 1);
        let mut cfg = TopographyConfig::shifting(l, 0, 1);
        cfg.epsilon = 0.0;
        assert_eq!(construct_t(&[1.0], &[vec![1.0]], 0.0, &cfg).unwrap(), vec![1.0]);
        assert_eq!(construct_t(&[3.0], &[vec![2.0]], 1.0, &cfg).unwrap(), vec![1.0]);
        let none = TopographyConfig::none(l);
        assert_eq!(construct_t(&[3.5], &[vec![9.0]], 1.0, &none).unwrap(), vec![3.5]);
        assert!(construct_t(&[1.0, 2.0], &[vec![1.0]], 0.0, &cfg).is_err());
    }

    #[test]
    fn construct_t_gradients_match_finite_differences() {
        let l = layout(2, 3);
        let cfg = TopographyConfig::shifting(l, 1, 3);
        let nb = cfg.neighborhood().unwrap();
        let mut r = rng::stream(3, &[]);
        let z = rng::normal_vec(&mut r, 6);
        let u: Vec<Vec<f64>> = (0..3).map(|_| rng::normal_vec(&mut r, 6)).collect();
        let mu = 0.7;
        // loss = Σ c_j t_j with fixed random weights c.
        let c = rng::normal_vec(&mut r, 6);
        let loss = |z: &[f64], u: &[Vec<f64>], mu: f64| -> f64 {
            let t = construct_t_with(&nb, z, u, mu, &cfg).unwrap().t;
            t.iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let fwd = construct_t_with(&nb, &z, &u, mu, &cfg).unwrap();
        let g = construct_t_backward(&nb, &fwd, &u, &c, &cfg);
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..6 {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] += h;
            zm[i] -= h;
            let fd = (loss(&zp, &u, mu) - loss(&zm, &u, mu)) / (2.0 * h);
            assert!(rel(fd, g.z[i]) < 1e-4, "z[{i}]: {fd} vs {}", g.z[i]);
        }
        for s in 0..3 {
            for i in 0..6 {
                let (mut up, mut um) = (u.clone(), u.clone());
                up[s][i] += h;
                um[s][i] -= h;
                let fd = (loss(&z, &up, mu) - loss(&z, &um, mu)) / (2.0 * h);
                assert!(rel(fd, g.u_window[s][i]) < 1e-4, "u[{s}][{i}]");
            }
        }
        let fd = (loss(&z, &u, mu + h) - loss(&z, &u, mu - h)) / (2.0 * h);
        assert!(rel(fd, g.mu) < 1e-4);
    }

    #[test]
    fn classic_sampling_requires_uniform_neighborhoods() {
        let mut cfg = TopographyConfig::stationary(layout(2, 4), 2, 1);
        cfg.nu = 5;
        assert!(sample_tpot(&cfg, 10, 0, true, Exec::Sequential).is_ok());
        cfg.nu = 4;
        assert!(matches!(
            sample_tpot(&cfg, 10, 0, true, Exec::Sequential),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sampling_is_deterministic_across_strategies() {
        let cfg = TopographyConfig::shifting(layout(2, 4), 1, 3);
        let a = sample_tpot(&cfg, 9000, 42, false, Exec::Sequential).unwrap();
        let b = sample_tpot(&cfg, 9000, 42, false, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[9000, 8]);
    }

    proptest! {
        #[test]
        fn roll_group_law(v in prop::collection::vec(-5.0f64..5.0, 12), a in -20isize..20, b in -20isize..20) {
            let l = layout(3, 4);
            let lhs = roll_capsules(&roll_capsules(&v, &l, a).unwrap(), &l, b).unwrap();
            let rhs = roll_capsules(&v, &l, (a + b).rem_euclid(4)).unwrap();
            prop_assert_eq!(&lhs, &rhs);
            for (x, y) in v.chunks(4).zip(lhs.chunks(4)) {
                let mut x = x.to_vec();
                let mut y = y.to_vec();
                x.sort_by(f64::total_cmp);
                y.sort_by(f64::total_cmp);
                prop_assert_eq!(x, y);
            }
        }

        #[test]
        fn neighborhood_sum_is_linear(
            a in prop::collection::vec(0.0f64..3.0, 24),
            b in prop::collection::vec(0.0f64..3.0, 24),
            s in 0.0f64..2.0,
        ) {
            let cfg = TopographyConfig::shifting(layout(2, 4), 1, 3);
            let wa: Vec<Vec<f64>> = a.chunks(8).map(|c| c.to_vec()).collect();
            let wb: Vec<Vec<f64>> = b.chunks(8).map(|c| c.to_vec()).collect();
            let wc: Vec<Vec<f64>> = wa.iter().zip(&wb)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| s * p + q).collect())
                .collect();
            let na = neighborhood_sum(&wa, &cfg).unwrap();
            let nb = neighborhood_sum(&wb, &cfg).unwrap();
            let nc = neighborhood_sum(&wc, &cfg).unwrap();
            for i in 0..8 {
                prop_assert!((nc[i] - (s * na[i] + nb[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn capsule_permutation_equivariance(w in prop::collection::vec(0.0f64..3.0, 36)) {
            let cfg = TopographyConfig::shifting(layout(3, 4), 1, 3);
            let win: Vec<Vec<f64>> = w.chunks(12).map(|c| c.to_vec()).collect();
            // Cyclically permute whole capsules: capsule k -> k+1.
            let perm = |v: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; 12];
                for k in 0..3 {
                    out[((k + 1) % 3) * 4..((k + 1) % 3) * 4 + 4].copy_from_slice(&v[k * 4..k * 4 + 4]);
                }
                out
            };
            let permuted: Vec<Vec<f64>> = win.iter().map(|v| perm(v)).collect();
            let lhs = neighborhood_sum(&permuted, &cfg).unwrap();
            let rhs = perm(&neighborhood_sum(&win, &cfg).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn stationary_commutes_with_roll(w in prop::collection::vec(0.0f64..3.0, 40), r in -6isize..6) {
            let l = layout(2, 4);
            let cfg = TopographyConfig::stationary(l, 2, 3);
            let win: Vec<Vec<f64>> = w.chunks(8).map(|c| c.to_vec()).collect();
            let rolled: Vec<Vec<f64>> = win.iter().map(|v| roll_capsules(v, &l, r).unwrap()).collect();
            let lhs = neighborhood_sum(&rolled, &cfg).unwrap();
            let rhs = roll_capsules(&neighborhood_sum(&win, &cfg).unwrap(), &l, r).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn unit_u_is_identity(z in prop::collection::vec(-5.0f64..5.0, 6)) {
            let mut cfg = TopographyConfig::shifting(layout(2, 3), 0, 1);
            cfg.epsilon = 0.0;
            let t = construct_t(&z, &[vec![1.0; 6]], 0.0, &cfg).unwrap();
            prop_assert_eq!(t, z);
        }
    }
}
