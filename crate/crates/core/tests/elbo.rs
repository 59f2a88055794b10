//! Sequence ELBO and importance-sampled likelihood against closed forms and
//! Monte Carlo oracles.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use topocaps::model::{build_model, ArchPreset, TvaeModel};
use topocaps::nn::{Dense, Mlp, ParamSet, Tensor};
use topocaps::rng::{stream, Noise};
use topocaps::topography::{CapsuleLayout, TopographyConfig};
use topocaps::vi::{elbo_sequence, elbo_value, importance_log_px, kl_std_normal, IsWeighting, Likelihood};

fn binary_seq(s: usize, n: usize, seed: u64) -> Tensor {
    let mut r = stream(seed, &[0x78]);
    Tensor::matrix(s, n, (0..s * n).map(|_| r.random_range(0..2) as f64).collect()).unwrap()
}

fn zeroed(mut m: TvaeModel) -> TvaeModel {
    for p in m.params.params_mut() {
        p.iter_mut().for_each(|v| *v = 0.0);
    }
    m
}

#[test]
fn zero_networks_give_the_all_logits_zero_baseline() {
    let layout = CapsuleLayout::new(2, 3).unwrap();
    let x = binary_seq(4, 5, 1);
    for topo in [TopographyConfig::none(layout), TopographyConfig::shifting(layout, 2, 3)] {
        let m = zeroed(build_model(ArchPreset::Toy { sizes: vec![5, 4, 6] }, topo, Likelihood::Bernoulli, 0).unwrap());
        let out = elbo_value(&m, &x, &mut Noise::seeded(2, &[])).unwrap();
        // Zero encoders are the standard normal, so both KL terms vanish.
        assert_eq!((out.kl_z, out.kl_u), (0.0, 0.0));
        assert!((out.elbo + 4.0 * 5.0 * LN_2).abs() < 1e-12, "{}", out.elbo);
    }
}

#[test]
fn none_variant_is_the_plain_vae_bound() {
    let layout = CapsuleLayout::new(2, 3).unwrap();
    let m = build_model(ArchPreset::Toy { sizes: vec![5, 4, 6] }, TopographyConfig::none(layout), Likelihood::Bernoulli, 3).unwrap();
    let x = binary_seq(3, 5, 4);
    let post = m.encode(&x).unwrap();
    let mut want = 0.0;
    for (l, q) in post.z.iter().enumerate() {
        let recon = m.decode(&Tensor::matrix(1, 6, q.mean.clone()).unwrap()).unwrap();
        want += -Likelihood::Bernoulli.nll(x.row(l), recon.row(0)).unwrap() - kl_std_normal(q);
    }
    let got = elbo_value(&m, &x, &mut Noise::Zero).unwrap().elbo;
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn bubble_and_shifting_coincide_without_a_window() {
    let layout = CapsuleLayout::new(2, 4).unwrap();
    let x = binary_seq(3, 6, 5);
    let build = |topo| build_model(ArchPreset::Toy { sizes: vec![6, 5, 8] }, topo, Likelihood::Bernoulli, 6).unwrap();
    let a = build(TopographyConfig::shifting(layout, 0, 3));
    let b = build(TopographyConfig::stationary(layout, 0, 3));
    let ea = elbo_sequence(&a, &x, &mut Noise::seeded(7, &[])).unwrap();
    let eb = elbo_sequence(&b, &x, &mut Noise::seeded(7, &[])).unwrap();
    assert_eq!(ea.elbo, eb.elbo);
    assert_eq!(ea.grads.unwrap().to_flat(), eb.grads.unwrap().to_flat());
}

#[test]
fn four_pixel_model_gradients() {
    // 4 pixels, S = 3, one capsule of D = 3, L = 1.
    let layout = CapsuleLayout::new(1, 3).unwrap();
    let h = 1e-5;
    for seed in 0..5 {
        let mut topo = TopographyConfig::shifting(layout, 1, 3);
        topo.mu_init = 1.0;
        let m = build_model(ArchPreset::Toy { sizes: vec![4, 5, 3] }, topo, Likelihood::Bernoulli, seed).unwrap();
        let x = binary_seq(3, 4, seed);
        let noise = || Noise::seeded(seed, &[1]);
        let g = elbo_sequence(&m, &x, &mut noise()).unwrap().grads.unwrap().to_flat();
        let mut probe = m.clone();
        let mut idx = 0;
        for b in 0..probe.params.params_mut().len() {
            for i in 0..probe.params.params_mut()[b].len() {
                let orig = probe.params.params_mut()[b][i];
                probe.params.params_mut()[b][i] = orig + h;
                let up = elbo_value(&probe, &x, &mut noise()).unwrap().elbo;
                probe.params.params_mut()[b][i] = orig - h;
                let down = elbo_value(&probe, &x, &mut noise()).unwrap().elbo;
                probe.params.params_mut()[b][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let scale = g[idx].abs().max(fd.abs()).max(1e-3);
                assert!((g[idx] - fd).abs() / scale < 1e-4, "seed {seed} param {idx}: {} vs {fd}", g[idx]);
                idx += 1;
            }
        }
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn small_tvae() -> (TvaeModel, Tensor) {
    let layout = CapsuleLayout::new(1, 3).unwrap();
    let mut topo = TopographyConfig::shifting(layout, 1, 3);
    topo.mu_init = 1.0;
    let m = build_model(ArchPreset::Toy { sizes: vec![4, 5, 3] }, topo, Likelihood::Bernoulli, 8).unwrap();
    (m, binary_seq(3, 4, 9))
}

#[test]
fn one_sample_estimate_matches_the_elbo_in_expectation() {
    let (m, x) = small_tvae();
    let n = 4000;
    let is1: Vec<f64> = (0..n)
        .map(|i| importance_log_px(&m, &x, 1, &mut Noise::seeded(10, &[i]), IsWeighting::PerSequence).unwrap())
        .collect();
    let elbo: Vec<f64> = (0..n).map(|i| elbo_value(&m, &x, &mut Noise::seeded(11, &[i])).unwrap().elbo).collect();
    let ((a, sa), (b, sb)) = (mean_and_se(&is1), mean_and_se(&elbo));
    assert!((a - b).abs() < 4.0 * (sa * sa + sb * sb).sqrt(), "{a} ± {sa} vs {b} ± {sb}");
}

#[test]
fn more_samples_tighten_the_estimate() {
    let (m, x) = small_tvae();
    let est = |k: usize, key: u64| -> Vec<f64> {
        (0..100)
            .map(|i| importance_log_px(&m, &x, k, &mut Noise::seeded(key, &[i]), IsWeighting::PerSequence).unwrap())
            .collect()
    };
    let (one, _) = mean_and_se(&est(1, 12));
    let (ten, _) = mean_and_se(&est(10, 13));
    assert!(ten >= one, "{ten} < {one}");
}

/// `x = W z + b + σ ε` with orthogonal columns of `W`, so the exact
/// posterior is diagonal and the encoder can represent it.
fn linear_gaussian() -> (TvaeModel, [f64; 3], [f64; 3]) {
    let sigma = 0.5f64;
    let w = [[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]];
    let b = [0.1, -0.2, 0.3];
    let s2 = sigma * sigma;
    let layout = CapsuleLayout::new(1, 2).unwrap();
    let mut m = build_model(
        ArchPreset::Toy { sizes: vec![3, 2] },
        TopographyConfig::none(layout),
        Likelihood::Gaussian { sigma },
        0,
    )
    .unwrap();

    let mut dec = Dense::zeros(2, 3);
    for i in 0..3 {
        for j in 0..2 {
            dec.weight[i * 2 + j] = w[i][j];
        }
    }
    dec.bias = b.to_vec();
    m.params.decoder = Mlp::from_layers(vec![dec]).unwrap();

    let mut enc = Dense::zeros(3, 4);
    for j in 0..2 {
        let col_sq: f64 = (0..3).map(|i| w[i][j] * w[i][j]).sum();
        let post_var = 1.0 / (1.0 + col_sq / s2);
        for i in 0..3 {
            enc.weight[j * 3 + i] = post_var * w[i][j] / s2;
        }
        enc.bias[j] = -(0..3).map(|i| enc.weight[j * 3 + i] * b[i]).sum::<f64>();
        enc.bias[2 + j] = 0.5 * post_var.ln();
    }
    m.params.encoder_z = Mlp::from_layers(vec![enc]).unwrap();

    // Marginal covariance W Wᵀ + σ² I is diagonal here.
    let marginal = [1.0 + s2, 4.0 + s2, s2];
    (m, b, marginal)
}

#[test]
fn exact_posterior_recovers_the_linear_gaussian_likelihood() {
    let (m, b, var) = linear_gaussian();
    let x = Tensor::matrix(2, 3, vec![0.7, -1.1, 0.2, -0.4, 2.5, 0.9]).unwrap();
    let exact: f64 = (0..2)
        .map(|l| {
            (0..3)
                .map(|i| {
                    let e = x.row(l)[i] - b[i];
                    -0.5 * (e * e / var[i] + (2.0 * PI * var[i]).ln())
                })
                .sum::<f64>()
        })
        .sum();
    for k in [1, 10] {
        let est = importance_log_px(&m, &x, k, &mut Noise::seeded(14, &[k as u64]), IsWeighting::PerSequence).unwrap();
        assert!((est - exact).abs() < 1e-9, "{k} samples: {est} vs {exact}");
    }
    // The bound is tight in expectation (the KL is analytic, so single
    // draws still scatter around it).
    let draws: Vec<f64> = (0..4000).map(|i| elbo_value(&m, &x, &mut Noise::seeded(15, &[i])).unwrap().elbo).collect();
    let (elbo, se) = mean_and_se(&draws);
    assert!((elbo - exact).abs() < 4.0 * se, "{elbo} ± {se} vs {exact}");
}
