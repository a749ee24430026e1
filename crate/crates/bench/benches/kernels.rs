use std::hint::black_box;

use checkerlight_bench::{errors, scene};
use checkerlight_core::baselines::{estimate_baseline, BaselineConfig, BaselineMethod};
use checkerlight_core::color::Illuminant;
use checkerlight_core::engine::{estimate_single, EstimateConfig};
use checkerlight_core::eval::compute_stats;
use checkerlight_core::protocol::mock::{MockBackend, OracleConfig};
use checkerlight_core::pyramid::{gaussian_blur3, high_freq_extract, Plane, PyramidConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn pyramid(c: &mut Criterion) {
    let mut g = c.benchmark_group("pyramid");
    for side in [64usize, 256] {
        let p = Plane::random(4, side, side, 1).unwrap();
        g.throughput(Throughput::Elements((4 * side * side) as u64));
        g.bench_with_input(BenchmarkId::new("blur3", side), &p, |b, p| b.iter(|| gaussian_blur3(black_box(p))));
        for levels in [1, 2, 3] {
            let cfg = PyramidConfig::with_levels(levels);
            g.bench_with_input(BenchmarkId::new(format!("extract_l{levels}"), side), &p, |b, p| {
                b.iter(|| high_freq_extract(black_box(p), &cfg).unwrap())
            });
        }
    }
    g.finish();
}

fn baselines(c: &mut Criterion) {
    let img = scene(256);
    let mut g = c.benchmark_group("baselines_256");
    for m in BaselineMethod::ALL {
        let cfg = BaselineConfig::for_method(m);
        g.bench_function(m.name(), |b| b.iter(|| estimate_baseline(black_box(&img), &cfg).unwrap()));
    }
    g.finish();
}

fn stats(c: &mut Criterion) {
    let mut g = c.benchmark_group("compute_stats");
    for n in [100usize, 10_000] {
        let e = errors(n);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &e, |b, e| b.iter(|| compute_stats(black_box(e)).unwrap()));
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("mock_pipeline");
    g.sample_size(10);
    let mock = MockBackend::new(OracleConfig::fixed(Illuminant::new(0.6, 0.5, 0.3).unwrap()));
    let cfg = EstimateConfig::default();
    for side in [256usize, 512] {
        let img = scene(side);
        g.bench_with_input(BenchmarkId::new("estimate", side), &img, |b, img| {
            b.iter(|| estimate_single(black_box(img), &cfg, None, &mock).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, pyramid, baselines, stats, pipeline);
criterion_main!(benches);
