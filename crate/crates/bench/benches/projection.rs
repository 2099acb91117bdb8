use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use knapsack_bench::{mixed_interval, uncorrelated};
use knapsack_core::nullspace::build_householder;
use knapsack_core::{project_equality, project_interval, ProjectionOptions};

fn equality(c: &mut Criterion) {
    let mut g = c.benchmark_group("project_equality");
    g.sample_size(20);
    for n in [1_000usize, 10_000, 100_000, 1_000_000] {
        let inst = uncorrelated(n, 4, 7);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &inst, |b, inst| {
            let mut k = 0;
            b.iter(|| {
                let (y, s) = &inst[k % inst.len()];
                k += 1;
                black_box(project_equality(y, s, ProjectionOptions::default()).unwrap())
            })
        });
    }
    g.finish();
}

fn interval(c: &mut Criterion) {
    let mut g = c.benchmark_group("project_interval");
    g.sample_size(20);
    for n in [10_000usize, 100_000] {
        let inst = mixed_interval(n, 4, 8);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &inst, |b, inst| {
            let mut k = 0;
            b.iter(|| {
                let (y, s) = &inst[k % inst.len()];
                k += 1;
                black_box(project_interval(y, s, ProjectionOptions::default()).unwrap())
            })
        });
    }
    g.finish();
}

fn nullspace(c: &mut Criterion) {
    let mut g = c.benchmark_group("householder_apply_z");
    for n in [1_000usize, 100_000] {
        let (y, s) = uncorrelated(n, 1, 9).remove(0);
        let hz = build_householder(s.coeffs()).unwrap();
        let v = y[..n - 1].to_vec();
        let mut out = vec![0.0; n];
        g.throughput(Throughput::Elements(n as u64));
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| {
                hz.apply_z_into(black_box(&v), &mut out);
                black_box(out[0])
            })
        });
    }
    g.finish();
}

criterion_group!(benches, equality, interval, nullspace);
criterion_main!(benches);
