use super::{kl_terms, log_mean_exp, log_normal, log_std_normal};
use crate::error::{ensure, Result};
use crate::model::{ModelParams, TvaeModel};
use crate::nn::Tensor;
use crate::rng::Noise;
use crate::topography::{construct_t_backward, construct_t_with, TForward};

/// Single-sample sequence ELBO and its parts. `grads` holds `∂ELBO/∂θ`
/// (the ascent direction) when requested.
#[derive(Debug, Clone)]
pub struct ElboOutput {
    pub elbo: f64,
    /// Summed negative log-likelihood of the frames.
    pub recon_nll: f64,
    pub kl_z: f64,
    pub kl_u: f64,
    pub grads: Option<ModelParams>,
}

/// How importance weights are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IsWeighting {
    /// One weight per sample for the whole sequence: estimates the joint
    /// `log p(x_1..x_S)`. At one sample this is the ELBO in expectation.
    #[default]
    PerSequence,
    /// One weight per frame, with every distinct `u` of the frame's window
    /// marginalized inside it.
    PerFrame,
}

struct Encoded {
    hz: Tensor,
    hu: Option<Tensor>,
}

/// Samples `z` and `u` for every frame from the encoder outputs.
fn sample_latents(
    enc: &Encoded,
    n: usize,
    m: usize,
    noise: &mut Noise,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = enc.hz.rows();
    let ez = noise.sample(s * n);
    let mut z = vec![0.0; s * n];
    for l in 0..s {
        let row = enc.hz.row(l);
        for i in 0..n {
            z[l * n + i] = row[i] + row[n + i].exp() * ez[l * n + i];
        }
    }
    let (u, eu) = match &enc.hu {
        Some(hu) => {
            let eu = noise.sample(s * m);
            let mut u = vec![0.0; s * m];
            for l in 0..s {
                let row = hu.row(l);
                for j in 0..m {
                    u[l * m + j] = row[j] + row[m + j].exp() * eu[l * m + j];
                }
            }
            (u, eu)
        }
        None => (Vec::new(), Vec::new()),
    };
    (z, ez, u, eu)
}

fn build_t(model: &TvaeModel, z: &[f64], u: &[f64], s: usize) -> Result<(Vec<f64>, Vec<TForward>)> {
    let n = model.latent_dim();
    let m = model.topo().u_len();
    let mut t = Vec::with_capacity(s * n);
    let mut fwds = Vec::with_capacity(s);
    for l in 0..s {
        let window: Vec<&[f64]> = if u.is_empty() {
            Vec::new()
        } else {
            model
                .window_frames(l, s)
                .into_iter()
                .map(|f| &u[f * m..(f + 1) * m])
                .collect()
        };
        let fwd = construct_t_with(model.neighborhood(), &z[l * n..(l + 1) * n], &window, model.mu(), model.topo())?;
        t.extend_from_slice(&fwd.t);
        fwds.push(fwd);
    }
    Ok((t, fwds))
}

fn run(model: &TvaeModel, x: &Tensor, noise: &mut Noise, want_grads: bool) -> Result<ElboOutput> {
    let s = x.rows();
    model.topo().check_sequence_len(s)?;
    let n = model.latent_dim();
    let m = model.topo().u_len();
    let p = &model.params;
    let lik = model.likelihood();

    let (hz, cz) = p.encoder_z.forward(x)?;
    let (hu, cu) = match &p.encoder_u {
        Some(e) => {
            let (h, c) = e.forward(x)?;
            (Some(h), Some(c))
        }
        None => (None, None),
    };
    let enc = Encoded { hz, hu };
    let (z, ez, u, eu) = sample_latents(&enc, n, m, noise);
    let (t, fwds) = build_t(model, &z, &u, s)?;
    let (out, cd) = p.decoder.forward(&Tensor::matrix(s, n, t)?)?;

    let mut recon_nll = 0.0;
    for l in 0..s {
        recon_nll += lik.nll(x.row(l), out.row(l))?;
    }
    let kl_z: f64 = (0..s).map(|l| kl_terms(&enc.hz.row(l)[..n], &enc.hz.row(l)[n..])).sum();
    let kl_u: f64 = match &enc.hu {
        Some(hu) => (0..s).map(|l| kl_terms(&hu.row(l)[..m], &hu.row(l)[m..])).sum(),
        None => 0.0,
    };
    let elbo = -recon_nll - kl_z - kl_u;
    if !want_grads {
        return Ok(ElboOutput {
            elbo,
            recon_nll,
            kl_z,
            kl_u,
            grads: None,
        });
    }

    let mut dout = Vec::with_capacity(out.len());
    for l in 0..s {
        dout.extend(lik.nll_grad(x.row(l), out.row(l)).into_iter().map(|g| -g));
    }
    let (g_dec, d_t) = p.decoder.backward(&cd, &Tensor::matrix(s, out.last_dim(), dout)?)?;

    let mut dhz = vec![0.0; s * 2 * n];
    let mut du = vec![0.0; u.len()];
    let mut dmu = 0.0;
    for l in 0..s {
        let frames = model.window_frames(l, s);
        let window: Vec<&[f64]> = if u.is_empty() {
            Vec::new()
        } else {
            frames.iter().map(|&f| &u[f * m..(f + 1) * m]).collect()
        };
        let tg = construct_t_backward(model.neighborhood(), &fwds[l], &window, d_t.row(l), model.topo());
        let row = enc.hz.row(l);
        for i in 0..n {
            let (mean, ls) = (row[i], row[n + i]);
            let g = tg.z[i];
            dhz[l * 2 * n + i] += g - mean;
            dhz[l * 2 * n + n + i] += g * ls.exp() * ez[l * n + i] + 1.0 - (2.0 * ls).exp();
        }
        for (slot, &f) in frames.iter().enumerate().take(tg.u_window.len()) {
            for (d, g) in du[f * m..(f + 1) * m].iter_mut().zip(&tg.u_window[slot]) {
                *d += g;
            }
        }
        dmu += tg.mu;
    }
    let g_enc_z = p.encoder_z.backward(&cz, &Tensor::matrix(s, 2 * n, dhz)?)?.0;

    let g_enc_u = match (&p.encoder_u, &enc.hu, &cu) {
        (Some(e), Some(hu), Some(cu)) => {
            let mut dhu = vec![0.0; s * 2 * m];
            for l in 0..s {
                let row = hu.row(l);
                for j in 0..m {
                    let (mean, ls) = (row[j], row[m + j]);
                    let g = du[l * m + j];
                    dhu[l * 2 * m + j] += g - mean;
                    dhu[l * 2 * m + m + j] += g * ls.exp() * eu[l * m + j] + 1.0 - (2.0 * ls).exp();
                }
            }
            Some(e.backward(cu, &Tensor::matrix(s, 2 * m, dhu)?)?.0)
        }
        _ => None,
    };

    Ok(ElboOutput {
        elbo,
        recon_nll,
        kl_z,
        kl_u,
        grads: Some(ModelParams {
            encoder_z: g_enc_z,
            encoder_u: g_enc_u,
            decoder: g_dec,
            mu: p.mu.map(|_| dmu),
        }),
    })
}

/// Single-sample ELBO of a cyclic sequence (rows of `x_seq` are frames),
/// summed over frames, with exact gradients for every parameter.
pub fn elbo_sequence(model: &TvaeModel, x_seq: &Tensor, noise: &mut Noise) -> Result<ElboOutput> {
    run(model, x_seq, noise, true)
}

/// Same bound without the backward pass.
pub fn elbo_value(model: &TvaeModel, x_seq: &Tensor, noise: &mut Noise) -> Result<ElboOutput> {
    run(model, x_seq, noise, false)
}

/// Importance-sampled estimate of the sequence log-likelihood with the
/// encoders as proposals.
pub fn importance_log_px(
    model: &TvaeModel,
    x_seq: &Tensor,
    n_samples: usize,
    noise: &mut Noise,
    weighting: IsWeighting,
) -> Result<f64> {
    ensure!(n_samples >= 1, Config, "importance sampling needs at least one sample");
    let s = x_seq.rows();
    model.topo().check_sequence_len(s)?;
    let n = model.latent_dim();
    let m = model.topo().u_len();
    let p = &model.params;
    let lik = model.likelihood();
    let enc = Encoded {
        hz: p.encoder_z.forward(x_seq)?.0,
        hu: match &p.encoder_u {
            Some(e) => Some(e.forward(x_seq)?.0),
            None => None,
        },
    };

    // weights[k][l]: frame-local log-weight parts of sample k.
    let mut frame_w = vec![vec![0.0; s]; n_samples];
    let mut u_w = vec![vec![0.0; s]; n_samples];
    for k in 0..n_samples {
        let (z, _, u, _) = sample_latents(&enc, n, m, noise);
        let (t, _) = build_t(model, &z, &u, s)?;
        let out = model.decode(&Tensor::matrix(s, n, t)?)?;
        for l in 0..s {
            let zl = &z[l * n..(l + 1) * n];
            let row = enc.hz.row(l);
            frame_w[k][l] = -lik.nll(x_seq.row(l), out.row(l))? + log_std_normal(zl) - log_normal(zl, &row[..n], &row[n..]);
            if let Some(hu) = &enc.hu {
                let ul = &u[l * m..(l + 1) * m];
                let r = hu.row(l);
                u_w[k][l] = log_std_normal(ul) - log_normal(ul, &r[..m], &r[m..]);
            }
        }
    }

    Ok(match weighting {
        IsWeighting::PerSequence => {
            let w: Vec<f64> = (0..n_samples)
                .map(|k| frame_w[k].iter().sum::<f64>() + u_w[k].iter().sum::<f64>())
                .collect();
            log_mean_exp(&w)
        }
        IsWeighting::PerFrame => (0..s)
            .map(|l| {
                let mut frames = model.window_frames(l, s);
                frames.sort_unstable();
                frames.dedup();
                let w: Vec<f64> = (0..n_samples)
                    .map(|k| {
                        let uw: f64 = if enc.hu.is_some() {
                            frames.iter().map(|&f| u_w[k][f]).sum()
                        } else {
                            0.0
                        };
                        frame_w[k][l] + uw
                    })
                    .collect();
                log_mean_exp(&w)
            })
            .sum(),
    })
}
