use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use patchflow_core::limit::{solve_limit, LimitOptions};
use patchflow_core::migration::{expm, transition_matrix, Generator};
use patchflow_core::pde::solve_boundary;
use patchflow_core::presets;
use patchflow_core::sim::{run_replication, SimOptions};

fn bench_expm(c: &mut Criterion) {
    let cfg = presets::reference();
    let gen = Generator::new(cfg.nu_i.clone()).unwrap();
    c.bench_function("expm 3x3", |b| b.iter(|| expm(black_box(&(cfg.nu_i.clone() * 0.7)))));
    c.bench_function("transition_matrix 3x3", |b| b.iter(|| transition_matrix(&gen, black_box(0.7))));
    let big = DMatrix::from_fn(20, 20, |i, j| if i == j { -1.9 } else { 0.1 });
    c.bench_function("expm 20x20", |b| b.iter(|| expm(black_box(&big))));
}

fn bench_sim(c: &mut Criterion) {
    let cfg = presets::reference();
    let opts = SimOptions::default();
    let mut g = c.benchmark_group("run_replication");
    g.sample_size(10);
    for n in [1_000u64, 10_000] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            let mut k = 0;
            b.iter(|| {
                k += 1;
                run_replication(&cfg, n, 1, k, &opts).unwrap()
            })
        });
    }
    g.finish();
}

fn bench_solvers(c: &mut Criterion) {
    let cfg = presets::reference();
    let mut g = c.benchmark_group("deterministic");
    g.sample_size(10);
    for h in [0.02, 0.01] {
        g.bench_with_input(BenchmarkId::new("solve_limit", h), &h, |b, &h| {
            b.iter(|| solve_limit(&cfg, &LimitOptions::new(h)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("solve_boundary", h), &h, |b, &h| {
            b.iter(|| solve_boundary(&cfg, h).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_expm, bench_sim, bench_solvers);
criterion_main!(benches);
