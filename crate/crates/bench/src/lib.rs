//! Fixtures shared by the criterion benches.

use mpsh_core::grid::{GridDomain, GridFunction, MetricField};
use mpsh_core::hermitian::{HermitianMatrix, MetricMatrix};
use mpsh_core::suites::{random_hermitian, random_metric, rng_from_seed};

/// Seeded random `(T, ω)` pairs of dimension `n`.
pub fn random_pairs(seed: u64, count: usize, n: usize) -> Vec<(HermitianMatrix, MetricMatrix)> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| {
            (
                random_hermitian(&mut rng, n, 1.0),
                random_metric(&mut rng, n),
            )
        })
        .collect()
}

/// `|z|²` sampled on a ball grid, with the Euclidean metric.
pub fn quadratic_on_ball(n: usize, points_per_axis: usize) -> (GridFunction, MetricField) {
    let domain = GridDomain::ball(n, points_per_axis, 1.0).expect("valid grid");
    let u = GridFunction::from_fn(&domain, |z| z.iter().map(|x| x * x).sum());
    (u, MetricField::identity(n))
}
