use std::hint::black_box;

use concat_core::data::{build_global_graph, synthetic, truncate_triplets, window_and_label, Cascade};
use concat_core::embed::{global_embed_factorize, FactorizeConfig, WaveletConfig};
use concat_core::model::{cascade_embedding, prepare_inputs, CascadeInput, Model, ModelConfig};
use concat_core::ode::SolverSpec;
use concat_core::par::{self, Jobs};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn fixture() -> (Vec<Cascade>, Vec<CascadeInput>, Model) {
    let raw = synthetic::generate(&synthetic::SyntheticConfig { cascades: 32, ..Default::default() });
    let cascades: Vec<Cascade> =
        raw.iter().map(|r| truncate_triplets(window_and_label(r, 1.0, 4.0).unwrap(), 60)).collect();
    let global = global_embed_factorize(&build_global_graph(&cascades), &FactorizeConfig { dim: 8, ..Default::default() }).unwrap();
    let wavelet = WaveletConfig::with_points(4, 10.0);
    let inputs = prepare_inputs(&cascades, &global, &wavelet, 1.0, Jobs::ALL).unwrap();
    let cfg = ModelConfig {
        hidden: 16,
        attention_dim: 16,
        head_hidden: 16,
        cascade_dim: wavelet.dim(),
        global_dim: 8,
        ..Default::default()
    };
    (cascades, inputs, Model::new(cfg, 0).unwrap())
}

fn bench(c: &mut Criterion) {
    let (cascades, inputs, model) = fixture();
    let spec = SolverSpec::default();
    let wavelet = WaveletConfig::default();
    let modes = [("sequential", Jobs::SEQUENTIAL), ("parallel", Jobs::ALL)];

    let mut g = c.benchmark_group("batch_gradient");
    g.sample_size(10);
    for (name, jobs) in modes {
        g.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| par::try_map(&inputs, jobs, |x| model.loss_and_gradient(x, &spec)).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("graphwave");
    g.sample_size(10);
    for (name, jobs) in modes {
        g.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| par::try_map(black_box(&cascades), jobs, |x| cascade_embedding(x, &wavelet)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
