use std::hint::black_box;

use chimhd_bench::{discretization, swirl};
use chimhd_core::forms::{convection_matrix, div_coupling_velocity, mass_matrix, stiffness_matrix, Coefficient};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    group.sample_size(20);
    for n in [16, 32, 64] {
        let disc = discretization(n);
        let w = swirl(&disc);
        let one = Coefficient::Constant(1.0);
        group.bench_with_input(BenchmarkId::new("p1_stiffness", n), &disc, |b, d| {
            b.iter(|| stiffness_matrix(black_box(&d.phase), one).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("rt0_mass", n), &disc, |b, d| {
            b.iter(|| mass_matrix(black_box(&d.current), one).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mini_convection", n), &disc, |b, d| {
            b.iter(|| convection_matrix(black_box(&d.velocity), &w).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mini_p1_divergence", n), &disc, |b, d| {
            b.iter(|| div_coupling_velocity(black_box(&d.velocity), &d.pressure).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, assembly);
criterion_main!(benches);
