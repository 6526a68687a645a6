use cevae_core::baselines::{fit_lr1, GlmConfig};
use cevae_core::cevae::{CevaeConfig, CevaeModel, LatentKind, PredictOptions};
use cevae_core::datagen::{gen_synthetic_twins, gen_toy, SyntheticTwinsConfig, ToyConfig};
use cevae_core::metrics::auc;
use cevae_core::nn::Tape;
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(latent: LatentKind, latent_dim: usize) -> (CevaeModel, cevae_core::data::Dataset) {
    let ds = gen_synthetic_twins(&SyntheticTwinsConfig::new(1000, 0.2, 1)).unwrap().dataset;
    let cfg = CevaeConfig {
        latent,
        latent_dim,
        hidden_layers: 2,
        width: 20,
        init_scale: 1.0,
        ..CevaeConfig::default()
    };
    let mut m = CevaeModel::new(cfg, &ds).unwrap();
    m.mark_trained();
    (m, ds)
}

fn objective(c: &mut Criterion) {
    let mut g = c.benchmark_group("objective_batch100");
    for (name, latent, dz) in [("continuous_dz5", LatentKind::Continuous, 5), ("binary_dz3", LatentKind::Binary, 3)] {
        let (m, ds) = model(latent, dz);
        let batch = m.prepare(&ds).unwrap().rows(&(0..100).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        g.bench_function(name, |b| {
            b.iter(|| {
                let tape = Tape::new();
                let l = m.full_objective(&tape, &batch, &mut rng).unwrap();
                black_box(l.backward().unwrap());
            })
        });
    }
    g.finish();
}

fn prediction(c: &mut Criterion) {
    let (m, ds) = model(LatentKind::Continuous, 5);
    let x = ds.subset(&(0..200).collect::<Vec<_>>()).x;
    let opts = PredictOptions {
        samples: 100,
        seed: 0,
        workers: 1,
    };
    c.bench_function("predict_potential_200x100", |b| b.iter(|| black_box(m.predict_potential(&x, &opts).unwrap())));
}

fn baselines(c: &mut Criterion) {
    let ds = gen_toy(&ToyConfig::new(5000, 0)).unwrap().dataset;
    c.bench_function("lr1_toy_5000", |b| b.iter(|| black_box(fit_lr1(&ds, &GlmConfig::default()).unwrap())));
}

fn metrics(c: &mut Criterion) {
    let scores: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let labels: Vec<u8> = (0..10_000).map(|i| u8::from((i * 104_729) % 3 == 0)).collect();
    c.bench_function("auc_10000", |b| b.iter(|| black_box(auc(&scores, &labels).unwrap())));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = objective, prediction, baselines, metrics
}
criterion_main!(benches);
