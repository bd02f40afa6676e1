use std::time::Instant;

use mpsh_core::grid::{GridDomain, GridFunction, MetricField};
use mpsh_core::solver::{
    continuity_path, max_principle_check, solve_dirichlet, solve_dirichlet_from, ClosureRhs,
    InitStrategy, SolverConfig,
};

fn norm_sq(z: &[f64]) -> f64 {
    z.iter().map(|x| x * x).sum()
}

fn quadratic_rhs(m: usize) -> ClosureRhs<impl Fn(&[f64], f64) -> (f64, f64) + Sync> {
    ClosureRhs(move |z: &[f64], t: f64| {
        let g = m as f64 * (t - norm_sq(z)).exp();
        (g, g)
    })
}

#[test]
fn manufactured_quadratic_c1() {
    let domain = GridDomain::ball(1, 33, 1.0).unwrap();
    let f = GridFunction::from_fn(&domain, norm_sq);
    let g = MetricField::identity(1);
    let start = Instant::now();
    let report = solve_dirichlet(&f, &quadratic_rhs(1), &g, 1, &SolverConfig::default()).unwrap();
    eprintln!("c1 {:?} {:?}", start.elapsed(), report.summary());
    assert!(report.solution.max_abs_diff(&f).unwrap() <= 1e-10);
    assert!(report.final_residual <= 1e-9);
    assert!(report.min_cone_margin > 0.0);
    assert!(max_principle_check(&report, &f) <= 1e-8);
}

#[test]
fn manufactured_quadratic_c2() {
    let domain = GridDomain::ball(2, 13, 1.0).unwrap();
    let f = GridFunction::from_fn(&domain, norm_sq);
    let g = MetricField::identity(2);
    for m in 1..=2 {
        let start = Instant::now();
        let report =
            solve_dirichlet(&f, &quadratic_rhs(m), &g, m, &SolverConfig::default()).unwrap();
        eprintln!("c2 m={m} {:?} {:?}", start.elapsed(), report.summary());
        assert!(report.solution.max_abs_diff(&f).unwrap() <= 1e-10);
    }
}

#[test]
fn direct_and_path_agree() {
    let domain = GridDomain::ball(1, 33, 1.0).unwrap();
    let f = GridFunction::from_fn(&domain, |z| norm_sq(z) + 0.05 * z[0].exp());
    let g = MetricField::identity(1);
    let rhs = ClosureRhs(|z: &[f64], t: f64| {
        let u = norm_sq(z) + 0.05 * z[0].exp();
        let g = (1.0 + 0.0125 * z[0].exp()) * (t - u).exp();
        (g, g)
    });
    let cfg = SolverConfig::default();
    let path = continuity_path(&f, &rhs, &g, 1, &cfg, 8).unwrap();
    let direct = solve_dirichlet(
        &f,
        &rhs,
        &g,
        1,
        &SolverConfig {
            init: InitStrategy::Direct,
            ..cfg.clone()
        },
    )
    .unwrap();
    let seed = GridFunction::from_fn(&domain, |z| {
        norm_sq(z) + 0.05 * z[0].exp() + 3.0 * (norm_sq(z) - 1.0) + 0.01 * (3.0 * z[1]).sin()
    });
    let perturbed = solve_dirichlet_from(&f, &rhs, &g, 1, &cfg, &seed).unwrap();
    eprintln!(
        "{:?} {:?} {:?}",
        path.summary(),
        direct.summary(),
        perturbed.summary()
    );
    assert!(path.solution.max_abs_diff(&direct.solution).unwrap() <= 1e-8);
    assert!(path.solution.max_abs_diff(&perturbed.solution).unwrap() <= 1e-8);
}

#[test]
fn second_order_convergence() {
    let exact = |z: &[f64]| norm_sq(z) + 0.05 * z[0].exp();
    let rhs = ClosureRhs(move |z: &[f64], t: f64| {
        let g = (1.0 + 0.0125 * z[0].exp()) * (t - exact(z)).exp();
        (g, g)
    });
    let g = MetricField::identity(1);
    let mut errors = Vec::new();
    for p in [17, 33, 65] {
        let domain = GridDomain::ball(1, p, 1.0).unwrap();
        let f = GridFunction::from_fn(&domain, exact);
        let start = Instant::now();
        let report = solve_dirichlet(&f, &rhs, &g, 1, &SolverConfig::default()).unwrap();
        let err = report.solution.max_abs_diff(&f).unwrap();
        eprintln!("p={p} err={err:e} {:?}", start.elapsed());
        errors.push(err);
    }
    assert!(errors[0] / errors[1] >= 3.5, "{errors:?}");
    assert!(errors[1] / errors[2] >= 3.5, "{errors:?}");
}

#[test]
fn penalty_solution_below_shifted_reference() {
    use mpsh_core::grid::fm_field;
    use mpsh_core::solver::PenaltyRhs;
    let domain = GridDomain::ball(1, 33, 1.0).unwrap();
    let f = GridFunction::from_fn(&domain, |z| norm_sq(z) + 0.3 * z[0] - 3.0);
    let g = MetricField::identity(1);
    for beta in [10.0, 100.0, 1000.0, 1e5] {
        let rhs = PenaltyRhs::new(beta, &f);
        let start = Instant::now();
        let report = solve_dirichlet(&f, &rhs, &g, 1, &SolverConfig::default()).unwrap();
        let c = fm_field(&f, &g, 1)
            .unwrap()
            .sup_value()
            .max(std::f64::consts::E);
        let worst = report
            .solution
            .zip_with(&f, |u, fj| u - fj - c.ln() / beta)
            .unwrap()
            .sup();
        eprintln!(
            "beta={beta} {:?} worst={worst:e} {:?}",
            start.elapsed(),
            report.summary()
        );
        assert!(worst <= 1e-8);
    }
}

#[test]
fn torus_constant_case() {
    use mpsh_core::hermitian::HermitianMatrix;
    use mpsh_core::solver::{solve_torus, TorusPenaltyRhs};
    let domain = GridDomain::torus(2, 7).unwrap();
    let g = MetricField::identity(2);
    let eps = 0.5;
    let chi = HermitianMatrix::identity(2).scale(eps);
    let (beta, k, fj) = (10.0, -1.5, 1.3);
    let count = domain.num_nodes();
    let fm_chi = 2.0 * eps;
    let rhs = TorusPenaltyRhs {
        beta,
        reference: vec![k; count],
        corridor: vec![fj; count],
        fm_chi: vec![fm_chi; count],
    };
    for init in [InitStrategy::ContinuityPath, InitStrategy::Direct] {
        let cfg = SolverConfig {
            init,
            ..SolverConfig::default()
        };
        let report = solve_torus(&domain, &chi, &rhs, &g, 2, &cfg).unwrap();
        let expected = k + ((1.0 - 1.0 / (2.0 * beta)) * fm_chi / fj).ln() / beta;
        let err = report
            .solution
            .values()
            .iter()
            .map(|v| (v - expected).abs())
            .fold(0.0, f64::max);
        eprintln!("{init:?} err={err:e} {:?}", report.summary());
        assert!(err < 1e-10);
    }
}

#[test]
fn torus_penalty_pins_to_reference() {
    use mpsh_core::hermitian::HermitianMatrix;
    use mpsh_core::solver::{solve_torus, TorusPenaltyRhs};
    let domain = GridDomain::torus(1, 33).unwrap();
    let g = MetricField::identity(1);
    let chi = HermitianMatrix::identity(1);
    let count = domain.num_nodes();
    let f = GridFunction::from_fn(&domain, |z| {
        -2.0 + 0.02 * (2.0 * std::f64::consts::PI * z[0]).cos()
    });
    let mut last = f64::NEG_INFINITY;
    for beta in [10.0, 40.0, 160.0, 1e4] {
        let rhs = TorusPenaltyRhs {
            beta,
            reference: f.values().to_vec(),
            corridor: vec![1.5; count],
            fm_chi: vec![1.0; count],
        };
        let start = Instant::now();
        let report = solve_torus(&domain, &chi, &rhs, &g, 1, &SolverConfig::default()).unwrap();
        let gap = report.solution.zip_with(&f, |u, r| u - r).unwrap().sup();
        eprintln!(
            "beta={beta} gap={gap:e} {:?} {:?}",
            start.elapsed(),
            report.summary()
        );
        assert!(gap < 0.0 && gap > last);
        last = gap;
    }
}

#[test]
fn torus_rejects_degenerate_background_and_accepts_seed() {
    use mpsh_core::hermitian::HermitianMatrix;
    use mpsh_core::solver::{solve_torus, solve_torus_from, TorusPenaltyRhs};
    use mpsh_core::Error;
    let domain = GridDomain::torus(1, 17).unwrap();
    let g = MetricField::identity(1);
    let count = domain.num_nodes();
    let rhs = TorusPenaltyRhs {
        beta: 20.0,
        reference: vec![-1.0; count],
        corridor: vec![1.5; count],
        fm_chi: vec![1.0; count],
    };
    let cfg = SolverConfig::default();
    let flat = HermitianMatrix::zeros(1);
    assert!(matches!(
        solve_torus(&domain, &flat, &rhs, &g, 1, &cfg),
        Err(Error::ChiNotPositive { .. })
    ));
    let chi = HermitianMatrix::identity(1);
    let seed = GridFunction::from_fn(&domain, |z| {
        -1.2 + 0.01 * (2.0 * std::f64::consts::PI * z[1]).sin()
    });
    let seeded = solve_torus_from(&chi, &rhs, &g, 1, &cfg, &seed).unwrap();
    let reference = solve_torus(&domain, &chi, &rhs, &g, 1, &cfg).unwrap();
    assert!(seeded.solution.max_abs_diff(&reference.solution).unwrap() < 1e-9);
}
