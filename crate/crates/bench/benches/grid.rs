use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mpsh_bench::quadratic_on_ball;
use mpsh_core::grid::fm_field;
use mpsh_core::solver::{solve_dirichlet, ClosureRhs, SolverConfig};

fn operator_field(c: &mut Criterion) {
    let (u, g) = quadratic_on_ball(2, 13);
    c.bench_function("fm_field_13^4_m2", |b| {
        b.iter(|| black_box(fm_field(&u, &g, 2).unwrap()))
    });
}

fn dirichlet(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_dirichlet_quadratic");
    group.sample_size(10);
    for (n, p) in [(1, 33), (2, 9)] {
        let (f, g) = quadratic_on_ball(n, p);
        let rhs = ClosureRhs(move |z: &[f64], t: f64| {
            let value = n as f64 * (t - z.iter().map(|x| x * x).sum::<f64>()).exp();
            (value, value)
        });
        let cfg = SolverConfig::default();
        group.bench_function(format!("C{n}_{p}"), |b| {
            b.iter(|| black_box(solve_dirichlet(&f, &rhs, &g, n, &cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, operator_field, dirichlet);
criterion_main!(benches);
