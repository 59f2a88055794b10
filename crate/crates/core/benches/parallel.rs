//! Sequential vs rayon execution of the hot data-parallel paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use topocaps::data::Dataset;
use topocaps::exec::Exec;
use topocaps::metrics::sequence_latents;
use topocaps::model::{build_model, ArchPreset, TvaeModel};
use topocaps::rng::Noise;
use topocaps::topography::{sample_tpot, CapsuleLayout, TopographyConfig};
use topocaps::vi::{elbo_sequence, Likelihood};

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn toy_model() -> TvaeModel {
    let layout = CapsuleLayout::new(8, 8).unwrap();
    build_model(
        ArchPreset::Toy { sizes: vec![256, 128, 64] },
        TopographyConfig::shifting(layout, 4, 3),
        Likelihood::Bernoulli,
        0,
    )
    .unwrap()
}

fn elbo_batch(c: &mut Criterion) {
    let model = toy_model();
    let data = Dataset::toy(32, 16, 8, 0).unwrap();
    let seqs = data.eval_sequences(8, 0).unwrap();
    let mut g = c.benchmark_group("elbo_batch_grad");
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map_range(0..seqs.len(), |i| {
                    elbo_sequence(&model, &seqs[i].frames, &mut Noise::seeded(1, &[i as u64])).unwrap().elbo
                })
            })
        });
    }
    g.finish();
}

fn tpot_sampling(c: &mut Criterion) {
    let layout = CapsuleLayout::new(8, 8).unwrap();
    let cfg = TopographyConfig::shifting(layout, 4, 3);
    let mut g = c.benchmark_group("sample_tpot_100k");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_tpot(&cfg, 100_000, 0, false, exec).unwrap())
        });
    }
    g.finish();
}

fn eval_latents(c: &mut Criterion) {
    let model = toy_model();
    let data = Dataset::toy(64, 16, 8, 0).unwrap();
    let seqs = data.eval_sequences(64, 0).unwrap();
    let mut g = c.benchmark_group("sequence_latents_64");
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sequence_latents(&model, &seqs, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, elbo_batch, tpot_sampling, eval_latents);
criterion_main!(benches);
