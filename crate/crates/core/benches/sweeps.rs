//! Benchmarks of the data-parallel verification sweeps against their
//! sequential fallbacks. With the default `parallel` feature the parallel
//! entries fan out over rayon; built with
//! `--no-default-features` both paths are sequential and should tie.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use nonholorec::examples::{make_particle_2d, make_rolling_disk};
use nonholorec::verify::{
    equivariance_sweep, equivariance_sweep_serial, verify_example, verify_example_serial,
    VerifyOptions,
};

fn bench_equivariance_sweep(c: &mut Criterion) {
    let ex = make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap();
    let mut group = c.benchmark_group("equivariance_sweep");
    for samples in [512usize, 4096] {
        group.bench_with_input(
            BenchmarkId::new("parallel", samples),
            &samples,
            |b, &n| b.iter(|| equivariance_sweep(black_box(&ex), n).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("serial", samples),
            &samples,
            |b, &n| b.iter(|| equivariance_sweep_serial(black_box(&ex), n).unwrap()),
        );
    }
    group.finish();
}

fn bench_verify_report(c: &mut Criterion) {
    let ex = make_particle_2d(1.0, 0.5).unwrap();
    let opts = VerifyOptions {
        samples: 200,
        steps: Some(50),
        ..Default::default()
    };
    let mut group = c.benchmark_group("verify_report");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| verify_example(black_box(&ex), black_box(&opts)).unwrap())
    });
    group.bench_function("serial", |b| {
        b.iter(|| verify_example_serial(black_box(&ex), black_box(&opts)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_equivariance_sweep, bench_verify_report);
criterion_main!(benches);
