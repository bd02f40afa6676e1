use mpsh_core::cones::{is_m_semipositive, strong_positivity_oracle, CONE_TOLERANCE};
use mpsh_core::curvature::{apply_curvature_operator, BidegreeForm};
use mpsh_core::fm::{fm_gradient_diagonal, fm_value, fm_value_from_spectrum};
use mpsh_core::grid::{GridDomain, GridFunction};
use mpsh_core::hermitian::{relative_eigenvalues, MetricMatrix};
use mpsh_core::regularize::upper_smooth_sequence;
use mpsh_core::subsets::{binomial, subset_rank, subsets};
use mpsh_core::suites::{form_with_spectrum, random_hermitian, random_metric, rng_from_seed};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn spectrum(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    (1..=max_n).prop_flat_map(|n| prop::collection::vec(-3.0f64..3.0, n))
}

fn positive_spectrum(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    (1..=max_n).prop_flat_map(|n| prop::collection::vec(0.05f64..4.0, n))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn max_entry(a: &DMatrix<Complex64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relative_basis_diagonalises_both(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = rng_from_seed(seed);
        let t = random_hermitian(&mut rng, n, 2.0);
        let omega = random_metric(&mut rng, n);
        let spec = relative_eigenvalues(&t, &omega).unwrap();
        let b = &spec.basis;
        let gram = b.adjoint() * omega.base().entries() * b;
        let diag = b.adjoint() * t.entries() * b;
        let identity = DMatrix::<Complex64>::identity(n, n);
        let lambdas = DMatrix::from_fn(n, n, |i, j| {
            if i == j { Complex64::new(spec.lambdas[i], 0.0) } else { Complex64::new(0.0, 0.0) }
        });
        prop_assert!(max_entry(&(gram - identity)) < 1e-9);
        prop_assert!(max_entry(&(diag - lambdas)) < 1e-8);
        prop_assert!(spec.lambdas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn metric_scaling_rescales_spectrum(seed in any::<u64>(), n in 1usize..=4, s in 0.1f64..10.0) {
        let mut rng = rng_from_seed(seed);
        let t = random_hermitian(&mut rng, n, 1.0);
        let omega = random_metric(&mut rng, n);
        let scaled = MetricMatrix::new(omega.base().scale(s)).unwrap();
        let a = relative_eigenvalues(&t, &omega).unwrap().lambdas;
        let b = relative_eigenvalues(&t, &scaled).unwrap().lambdas;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x / s - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn prescribed_spectrum_round_trips(seed in any::<u64>(), lambdas in spectrum(5)) {
        let mut rng = rng_from_seed(seed);
        let (t, g) = form_with_spectrum(&mut rng, &lambdas);
        let got = relative_eigenvalues(&t, &g).unwrap().lambdas;
        for (x, y) in sorted(lambdas).iter().zip(&got) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn cone_routes_agree(seed in any::<u64>(), lambdas in spectrum(5), m_pick in 0usize..5) {
        let n = lambdas.len();
        let m = 1 + m_pick % n;
        let mut rng = rng_from_seed(seed);
        let (t, g) = form_with_spectrum(&mut rng, &lambdas);
        let fast = is_m_semipositive(&t, &g, m).unwrap();
        let oracle = strong_positivity_oracle(&t, &g, m).unwrap();
        prop_assert!((fast.margin - oracle.margin).abs() < 1e-8);
        if fast.margin.abs() > 1e-7 {
            prop_assert_eq!(fast.member, oracle.member);
        }
    }

    #[test]
    fn cones_grow_with_order(lambdas in spectrum(6)) {
        let n = lambdas.len();
        let g = MetricMatrix::identity(n);
        let t = mpsh_core::hermitian::HermitianMatrix::from_diagonal(&lambdas);
        let mut was_member = false;
        for m in 1..=n {
            let verdict = is_m_semipositive(&t, &g, m).unwrap();
            prop_assert!(!was_member || verdict.member);
            was_member = verdict.member;
        }
    }

    #[test]
    fn fm_is_homogeneous_and_symmetric(lambdas in positive_spectrum(6), s in 0.05f64..20.0, m_pick in 0usize..6) {
        let n = lambdas.len();
        let m = 1 + m_pick % n;
        let base = fm_value_from_spectrum(&lambdas, m).unwrap().value;
        let scaled: Vec<f64> = lambdas.iter().map(|x| s * x).collect();
        let reversed: Vec<f64> = lambdas.iter().rev().copied().collect();
        prop_assert!((fm_value_from_spectrum(&scaled, m).unwrap().value - s * base).abs() < 1e-10 * (1.0 + s * base));
        prop_assert!((fm_value_from_spectrum(&reversed, m).unwrap().value - base).abs() < 1e-12 * (1.0 + base));
    }

    #[test]
    fn fm_below_arithmetic_mean(lambdas in positive_spectrum(6), m_pick in 0usize..6) {
        let n = lambdas.len();
        let m = 1 + m_pick % n;
        let mean = m as f64 * lambdas.iter().sum::<f64>() / n as f64;
        prop_assert!(fm_value_from_spectrum(&lambdas, m).unwrap().value <= mean * (1.0 + 1e-12));
    }

    #[test]
    fn fm_gradient_satisfies_euler(lambdas in positive_spectrum(6), m_pick in 0usize..6) {
        let n = lambdas.len();
        let m = 1 + m_pick % n;
        let value = fm_value_from_spectrum(&lambdas, m).unwrap().value;
        let grad = fm_gradient_diagonal(&lambdas, m).unwrap();
        let euler: f64 = grad.iter().zip(&lambdas).map(|(d, l)| d * l).sum();
        prop_assert!((euler - value).abs() < 1e-10 * (1.0 + value));
        prop_assert!(grad.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn fm_is_metric_invariant(seed in any::<u64>(), lambdas in positive_spectrum(4)) {
        let n = lambdas.len();
        let mut rng = rng_from_seed(seed);
        let (t, g) = form_with_spectrum(&mut rng, &lambdas);
        for m in 1..=n {
            let direct = fm_value_from_spectrum(&lambdas, m).unwrap().value;
            let via = fm_value(&t, &g, m).unwrap().value;
            prop_assert!((direct - via).abs() < 1e-8 * (1.0 + direct));
        }
    }

    #[test]
    fn curvature_operator_is_self_adjoint(
        lambdas in spectrum(4),
        p_pick in 0usize..5,
        q_pick in 0usize..5,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let n = lambdas.len();
        let (p, q) = (p_pick % (n + 1), q_pick % (n + 1));
        let mut rng = rng_from_seed(seed);
        let mut random_form = || {
            let mut form = BidegreeForm::zeros(n, p, q).unwrap();
            for c in form.coeffs.iter_mut() {
                *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            form
        };
        let (u, v) = (random_form(), random_form());
        let au = apply_curvature_operator(&u, &lambdas).unwrap();
        let av = apply_curvature_operator(&v, &lambdas).unwrap();
        let left = au.inner(&v).unwrap();
        let right = u.inner(&av).unwrap();
        prop_assert!((left - right).norm() < 1e-10);
    }

    #[test]
    fn subsets_are_ranked_lexicographically(n in 0usize..9, k_pick in 0usize..9) {
        let k = k_pick % (n + 1);
        let all = subsets(n, k);
        prop_assert_eq!(all.len(), binomial(n, k));
        for (rank, set) in all.iter().enumerate() {
            prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(subset_rank(n, set), rank);
        }
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_binary_round_trip(seed in any::<u64>(), n in 1usize..=2, half in 0usize..3, torus in any::<bool>()) {
        use rand::Rng;
        let p = 5 + 2 * half;
        let domain = if torus { GridDomain::torus(n, p) } else { GridDomain::ball(n, p, 1.0) }.unwrap();
        let mut rng = rng_from_seed(seed);
        let values: Vec<f64> = (0..domain.num_nodes()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let u = GridFunction::new(domain, values).unwrap();
        let back = GridFunction::from_binary(&u.to_binary()).unwrap();
        prop_assert_eq!(back.values(), u.values());
        prop_assert_eq!(back.domain().spec(), u.domain().spec());
    }

    #[test]
    fn smoothing_sequence_decreases_to_target(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -6.0f64..-2.0) {
        let domain = GridDomain::ball(1, 9, 1.0).unwrap();
        let target = GridFunction::from_fn(&domain, |z| c + (a * z[0]).max(b * z[1]));
        let seq = upper_smooth_sequence(&target, 5).unwrap();
        for f in &seq {
            prop_assert!(f.values().iter().zip(target.values()).all(|(x, t)| x >= t));
        }
        for pair in seq.windows(2) {
            prop_assert!(pair[1].values().iter().zip(pair[0].values()).all(|(x, y)| x <= y));
        }
    }
}

#[test]
fn boundary_tolerance_is_absolute() {
    let g = MetricMatrix::identity(2);
    let t = mpsh_core::hermitian::HermitianMatrix::from_diagonal(&[-0.5 * CONE_TOLERANCE, 1.0]);
    assert!(is_m_semipositive(&t, &g, 1).unwrap().member);
    let t = mpsh_core::hermitian::HermitianMatrix::from_diagonal(&[-2.0 * CONE_TOLERANCE, 1.0]);
    assert!(!is_m_semipositive(&t, &g, 1).unwrap().member);
}
