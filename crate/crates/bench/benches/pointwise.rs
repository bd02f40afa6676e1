use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpsh_bench::random_pairs;
use mpsh_core::cones::{is_m_semipositive, strong_positivity_oracle};
use mpsh_core::fm::{fm_gradient_matrix, fm_value};
use mpsh_core::hermitian::relative_eigenvalues;

fn spectra(c: &mut Criterion) {
    let mut group = c.benchmark_group("relative_eigenvalues");
    for n in [2, 4, 8] {
        let pairs = random_pairs(1, 64, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pairs, |b, pairs| {
            b.iter(|| {
                for (t, g) in pairs {
                    black_box(relative_eigenvalues(t, g).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn cones(c: &mut Criterion) {
    let pairs = random_pairs(2, 64, 4);
    let mut group = c.benchmark_group("cone_m2_n4");
    group.bench_function("sorted_spectrum", |b| {
        b.iter(|| {
            for (t, g) in &pairs {
                black_box(is_m_semipositive(t, g, 2).unwrap());
            }
        })
    });
    group.bench_function("wedge_oracle", |b| {
        b.iter(|| {
            for (t, g) in &pairs {
                black_box(strong_positivity_oracle(t, g, 2).unwrap());
            }
        })
    });
    group.finish();
}

fn fm(c: &mut Criterion) {
    let pairs: Vec<_> = random_pairs(3, 64, 4)
        .into_iter()
        .map(|(t, g)| {
            (
                t.add(g.base()).unwrap().scale(4.0).add(g.base()).unwrap(),
                g,
            )
        })
        .filter(|(t, g)| {
            fm_value(t, g, 2)
                .map(|v| v.min_msum() > 0.0)
                .unwrap_or(false)
        })
        .collect();
    let mut group = c.benchmark_group("fm_n4_m2");
    group.bench_function("value", |b| {
        b.iter(|| {
            for (t, g) in &pairs {
                black_box(fm_value(t, g, 2).unwrap());
            }
        })
    });
    group.bench_function("gradient", |b| {
        b.iter(|| {
            for (t, g) in &pairs {
                let spectrum = relative_eigenvalues(t, g).unwrap();
                black_box(fm_gradient_matrix(&spectrum, 2).unwrap());
            }
        })
    });
    group.finish();
}

criterion_group!(benches, spectra, cones, fm);
criterion_main!(benches);
