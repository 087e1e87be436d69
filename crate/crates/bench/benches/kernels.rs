//! Per-row cost of the pieces a client or attacker runs once per update:
//! the classifier gradient, the FedDef transform, and gradient inversion.

use criterion::{criterion_group, criterion_main, Criterion};
use flnids::attack::{invert, InversionConfig, LeakedUpdate};
use flnids::data::kdd99_like;
use flnids::defense::{feddef_transform, FedDefConfig};
use flnids::nn::MlpClassifier;
use flnids::rng::stream;
use std::hint::black_box;

fn kernels(c: &mut Criterion) {
    let data = kdd99_like(500, 1).unwrap();
    let model = MlpClassifier::new(data.dim(), data.n_classes(), &mut stream(1, &[1])).unwrap();
    let row = data.subset(&[3]);

    c.bench_function("gradient_batch1", |b| {
        b.iter(|| model.gradient(black_box(&row.x), black_box(&row.y)).unwrap())
    });

    let batch = data.subset(&(0..64).collect::<Vec<_>>());
    c.bench_function("gradient_batch64", |b| {
        b.iter(|| model.gradient(black_box(&batch.x), black_box(&batch.y)).unwrap())
    });

    let cfg = FedDefConfig::default();
    c.bench_function("feddef_transform_40_steps", |b| {
        let mut rng = stream(2, &[]);
        b.iter(|| feddef_transform(&model, black_box(&row.x), black_box(&row.y), &cfg, &mut rng).unwrap())
    });

    let update = LeakedUpdate {
        gradient: model.gradient(&row.x, &row.y).unwrap(),
        batch_hint: 1,
    };
    let inv = InversionConfig {
        steps: 50,
        restarts: 1,
        ..InversionConfig::default()
    };
    let mut group = c.benchmark_group("inversion");
    group.sample_size(10);
    group.bench_function("l2_50_steps", |b| {
        let mut rng = stream(3, &[]);
        b.iter(|| invert(&update, &model, &inv, &data.schema, &mut rng).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
