use std::hint::black_box;

use automr_bench::{random_tensor, regression_data};
use automr_core::model::{preset, ModelInstance};
use automr_core::tensor::{conv1d_backward, conv1d_forward, ConvRecord, ConvSpec};
use automr_core::tune::{default_space, suggest, Forest, ForestConfig, Observation, SuggestOptions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const BATCH: usize = 32;
const WIDTH: usize = 128;

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv1d");
    let specs = [
        ("standard-k9", ConvSpec::standard(64, 64, 9)),
        ("depthwise-k9", ConvSpec::depthwise(64, 9, 1)),
        ("pointwise", ConvSpec::pointwise(64, 64)),
    ];
    for (name, spec) in specs {
        let spec = ConvSpec { padding: spec.kernel / 2, ..spec };
        let x = random_tensor(&[BATCH, spec.in_channels, WIDTH], 1);
        let w = random_tensor(&spec.weight_shape(), 2);
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| conv1d_forward(black_box(&x), &spec, &w, None).unwrap())
        });
        let y = conv1d_forward(&x, &spec, &w, None).unwrap();
        let upstream = random_tensor(y.shape(), 3);
        let record = ConvRecord { spec, input: Some(x.clone()), weight: Some(w.clone()), has_bias: false };
        group.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| conv1d_backward(black_box(&record), &upstream).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    group.sample_size(20);
    for name in ["base", "large"] {
        let m = ModelInstance::<f32>::build(preset(name, 9, 6).unwrap(), 0).unwrap();
        let x = random_tensor(&[BATCH, 9, WIDTH], 4);
        group.bench_function(BenchmarkId::new("infer", name), |b| {
            b.iter(|| m.infer(black_box(x.clone())).unwrap())
        });
    }
    group.finish();
}

fn tuner(c: &mut Criterion) {
    let mut group = c.benchmark_group("tuner");
    for n in [24, 100] {
        let (x, y) = regression_data(n, 8, 5);
        group.bench_function(BenchmarkId::new("forest-fit", n), |b| {
            b.iter(|| Forest::fit(black_box(&x), &y, ForestConfig::default(), 0))
        });
    }
    let space = default_space();
    let (x, y) = regression_data(24, space.len(), 6);
    let history: Vec<Observation> = x
        .iter()
        .zip(&y)
        .map(|(row, &objective)| Observation { config: space.from_unit(row), objective })
        .collect();
    let opts = SuggestOptions::default();
    group.bench_function("suggest-24", |b| {
        b.iter(|| suggest(black_box(&history), &space, 7, &opts))
    });
    group.finish();
}

criterion_group!(benches, conv, model, tuner);
criterion_main!(benches);
