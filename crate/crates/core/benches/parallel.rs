//! Sequential vs data-parallel executor on the three batch workloads:
//! one training epoch, corpus generation and link evaluation.
//!
//! `cargo bench -p csg-core --bench parallel`. With `--no-default-features`
//! only the sequential variants run.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use csg_core::generator::{generate_scenes, GeneratorConfig};
use csg_core::knowledge::Provider;
use csg_core::model::{build_samples, evaluate_accuracy, train, CsgTl, GraphSample, TrainConfig};
use csg_core::Exec;

fn executors() -> Vec<(&'static str, Exec)> {
    vec![
        ("sequential", Exec::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Exec::Parallel),
    ]
}

fn samples(n_scenes: usize) -> Vec<GraphSample> {
    let scenes: Vec<(String, _)> = generate_scenes(&GeneratorConfig::default(), n_scenes, Exec::default())
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (s, _))| (format!("scene_{i}"), s))
        .collect();
    build_samples(&scenes, &Provider::offline(), 1.0, &|_| true, Exec::default()).unwrap()
}

fn bench(c: &mut Criterion) {
    let data = samples(20);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let model = CsgTl::init(cfg.model_config(), cfg.seed).unwrap();
    let gen = GeneratorConfig::default();

    let mut g = c.benchmark_group("train_epoch");
    g.sample_size(10);
    for (name, exec) in executors() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train(&data, &cfg, None, 0, exec, |_| {}).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("generate_50_scenes");
    g.sample_size(10);
    for (name, exec) in executors() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| generate_scenes(&gen, 50, exec).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate_accuracy");
    g.sample_size(10);
    for (name, exec) in executors() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_accuracy(&data, &model, 0.5, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
