use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use locsync::continuation::{continue_both, continue_branch, ContinuationConfig};
use locsync::dynamics::{integrate, unfold};
use locsync_bench::{snaking_seed, snaking_system};

fn residual_and_jacobian(c: &mut Criterion) {
    let sys = snaking_system();
    let mut group = c.benchmark_group("lattice");
    for n in [10, 40] {
        let state = snaking_seed(&sys, n);
        group.bench_with_input(BenchmarkId::new("residual", n), &state, |b, s| b.iter(|| sys.residual(black_box(s))));
        group.bench_with_input(BenchmarkId::new("jacobian", n), &state, |b, s| b.iter(|| sys.jacobian(black_box(s))));
    }
    group.finish();
}

fn continuation(c: &mut Criterion) {
    let sys = snaking_system();
    let seed = snaking_seed(&sys, 10);
    let short = ContinuationConfig { max_steps: 50, ..ContinuationConfig::default() };
    c.bench_function("continue_50_steps", |b| b.iter(|| continue_branch(&sys, black_box(&seed), 1, &short)));
    let mut group = c.benchmark_group("snaking");
    group.sample_size(10);
    group.bench_function("full_branch_n10", |b| {
        b.iter(|| continue_both(&sys, black_box(&seed), &ContinuationConfig::default()))
    });
    group.finish();
}

fn time_integration(c: &mut Criterion) {
    let sys = snaking_system();
    let z0 = unfold(&snaking_seed(&sys, 10), sys.bc);
    c.bench_function("rk4_unit_time", |b| {
        b.iter(|| integrate(&sys.spec, sys.coupling, black_box(&z0), sys.eps, 0.5, 1.0, 1e-3))
    });
}

criterion_group!(benches, residual_and_jacobian, continuation, time_integration);
criterion_main!(benches);
