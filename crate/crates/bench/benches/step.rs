use std::hint::black_box;

use chimhd_bench::square_bubble;
use chimhd_core::Scheme;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn time_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("time_step");
    group.sample_size(10);
    for n in [16, 32, 64] {
        let (case, disc, state) = square_bubble(n);
        let data = case.problem_data();
        let mut scheme = Scheme::new(disc, case.params.clone()).unwrap();
        group.bench_function(BenchmarkId::new("square_bubble", n), |b| {
            b.iter(|| scheme.advance(black_box(&state), data.as_ref()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, time_step);
criterion_main!(benches);
