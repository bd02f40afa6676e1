//! Seeded random generators and the pointwise property suites shared by the
//! command-line `verify-suite` and the test suite.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cones::{is_m_semipositive, strong_positivity_oracle};
use crate::curvature::{
    apply_curvature_operator, l2_constant, verify_bound_regime, BidegreeForm, BoundCase,
};
use crate::error::Result;
use crate::fm::{
    concavity_probe, derivation_matrix, fm_gradient_diagonal, fm_product_bound, fm_value,
    fm_value_from_spectrum, fm_via_determinant,
};
use crate::hermitian::{relative_lambdas, HermitianMatrix, MetricMatrix};
use crate::subsets::msums;

pub type SuiteRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SuiteRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_hermitian(rng: &mut SuiteRng, n: usize, scale: f64) -> HermitianMatrix {
    let mut a = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        a[(j, j)] = Complex64::new(scale * rng.random_range(-1.0..1.0), 0.0);
        for k in j + 1..n {
            let z = Complex64::new(
                scale * rng.random_range(-1.0..1.0),
                scale * rng.random_range(-1.0..1.0),
            );
            a[(j, k)] = z;
            a[(k, j)] = z.conj();
        }
    }
    HermitianMatrix::new(a).expect("Hermitian by construction")
}

/// `A A* + I/2` with `A` uniform in the unit box.
pub fn random_metric(rng: &mut SuiteRng, n: usize) -> MetricMatrix {
    let a = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let mut g = &a * a.adjoint();
    for j in 0..n {
        g[(j, j)] += Complex64::new(0.5, 0.0);
    }
    let g = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
    MetricMatrix::new(HermitianMatrix::new(g).expect("Hermitian")).expect("positive definite")
}

/// Spectrum whose smallest m-sum lies in `[margin, margin + 1]`.
pub fn random_interior_spectrum(rng: &mut SuiteRng, n: usize, m: usize, margin: f64) -> Vec<f64> {
    let mut lambdas: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..3.0)).collect();
    let min = msums(&lambdas, m).into_iter().fold(f64::INFINITY, f64::min);
    let shift = (margin + rng.random_range(0.0..1.0) - min) / m as f64;
    for l in &mut lambdas {
        *l += shift;
    }
    lambdas
}

/// `D^* diag(λ) D` relative to a random metric: a form with prescribed relative spectrum.
pub fn form_with_spectrum(rng: &mut SuiteRng, lambdas: &[f64]) -> (HermitianMatrix, MetricMatrix) {
    let n = lambdas.len();
    let g = random_metric(rng, n);
    let frame = g.cholesky_lower().clone();
    let u = random_unitary(rng, n);
    let basis = &frame * &u;
    let diag = DMatrix::<Complex64>::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        lambdas.iter().map(|&l| Complex64::new(l, 0.0)),
    ));
    let t = &basis * diag * basis.adjoint();
    let t = (&t + t.adjoint()) * Complex64::new(0.5, 0.0);
    (HermitianMatrix::new(t).expect("Hermitian"), g)
}

fn random_unitary(rng: &mut SuiteRng, n: usize) -> DMatrix<Complex64> {
    let a = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    a.qr().q()
}

/// A random `(T, ω, m)` whose m-margin is pushed near zero; a tenth of the
/// cases sit on the boundary up to rounding.
#[derive(Debug, Clone)]
pub struct ConeCase {
    pub t: HermitianMatrix,
    pub omega: MetricMatrix,
    pub m: usize,
}

pub fn cone_corpus(rng: &mut SuiteRng, count: usize, max_n: usize) -> Vec<ConeCase> {
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=max_n);
            let m = rng.random_range(1..=n);
            let omega = random_metric(rng, n);
            let h = random_hermitian(rng, n, 1.0);
            let lambdas = relative_lambdas(&h, &omega).expect("dimensions agree");
            let margin: f64 = lambdas[..m].iter().sum();
            let delta = if rng.random_range(0..10) == 0 {
                0.0
            } else {
                rng.random_range(-0.05..0.05)
            };
            let t = h
                .sub(&omega.base().scale(margin / m as f64 + delta))
                .expect("dimensions agree");
            ConeCase { t, omega, m }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest error or violation observed (suite-specific meaning).
    pub worst: f64,
    pub elapsed_ms: f64,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn timed(name: &str, body: impl FnOnce() -> Result<(usize, usize, f64)>) -> Result<SuiteOutcome> {
    let start = Instant::now();
    let (cases, failures, worst) = body()?;
    Ok(SuiteOutcome {
        name: name.to_string(),
        cases,
        failures,
        worst,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// `diag(1,1,-1)` against `diag(1,1,3)` (member, margin 2/3) and `diag(1,1,1/2)`.
pub fn counterexample() -> Result<SuiteOutcome> {
    timed("counterexample", || {
        let t = HermitianMatrix::from_diagonal(&[1.0, 1.0, -1.0]);
        let wide = is_m_semipositive(&t, &MetricMatrix::from_diagonal(&[1.0, 1.0, 3.0])?, 2)?;
        let narrow = is_m_semipositive(&t, &MetricMatrix::from_diagonal(&[1.0, 1.0, 0.5])?, 2)?;
        let err = (wide.margin - 2.0 / 3.0).abs();
        let failures = usize::from(!wide.member || err > 1e-12) + usize::from(narrow.member);
        Ok((2, failures, err))
    })
}

/// Spectral membership against the wedge-coefficient oracle.
pub fn oracle_equivalence(corpus: &[ConeCase]) -> Result<SuiteOutcome> {
    timed("oracle_equivalence", || {
        let mut failures = 0;
        let mut worst = 0.0f64;
        for case in corpus {
            let a = is_m_semipositive(&case.t, &case.omega, case.m)?;
            let b = strong_positivity_oracle(&case.t, &case.omega, case.m)?;
            worst = worst.max((a.margin - b.margin).abs());
            failures += usize::from(a.member != b.member);
        }
        Ok((corpus.len(), failures, worst))
    })
}

/// Membership at `m` implies membership at `m + 1`.
pub fn cone_monotonicity(corpus: &[ConeCase]) -> Result<SuiteOutcome> {
    timed("cone_monotonicity", || {
        let mut checks = 0;
        let mut failures = 0;
        for case in corpus {
            let n = case.omega.dim();
            let verdicts = (1..=n)
                .map(|m| is_m_semipositive(&case.t, &case.omega, m).map(|v| v.member))
                .collect::<Result<Vec<_>>>()?;
            for w in verdicts.windows(2) {
                checks += 1;
                failures += usize::from(w[0] && !w[1]);
            }
        }
        Ok((checks, failures, 0.0))
    })
}

/// Spectrum satisfying the hypothesis of `case` at `degree`, with the extreme
/// shifted sum equal to `-slack` (negative cases) or `+slack` (positive cases).
pub fn hypothesis_spectrum(
    rng: &mut SuiteRng,
    case: BoundCase,
    n: usize,
    degree: usize,
    c: f64,
    slack: f64,
) -> Vec<f64> {
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    match case {
        BoundCase::P0 | BoundCase::ZeroQ => {
            let order = n - degree;
            let top = msums(&mu, order)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            mu.iter()
                .map(|x| x - (top + slack) / order as f64 - c)
                .collect()
        }
        BoundCase::NQ | BoundCase::PN => {
            let bottom = msums(&mu, degree).into_iter().fold(f64::INFINITY, f64::min);
            mu.iter()
                .map(|x| x - (bottom - slack) / degree as f64 + c)
                .collect()
        }
    }
}

/// Diagonal factors of the curvature operator, and the lower bounds on
/// `per_case` hypothesis-satisfying spectra for each bound case.
pub fn curvature_bounds(rng: &mut SuiteRng, per_case: usize) -> Result<SuiteOutcome> {
    timed("curvature_bounds", || {
        let mut cases = 0;
        let mut failures = 0;
        let mut worst = 0.0f64;
        for _ in 0..per_case {
            let n = rng.random_range(1..=4);
            let (p, q) = (rng.random_range(0..=n), rng.random_range(0..=n));
            let lambdas: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut u = BidegreeForm::zeros(n, p, q)?;
            for c in &mut u.coeffs {
                *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            let au = apply_curvature_operator(&u, &lambdas)?;
            let total: f64 = lambdas.iter().sum();
            for ((j, k), (a, b)) in u.index_pairs().iter().zip(au.coeffs.iter().zip(&u.coeffs)) {
                let factor = j.iter().map(|&i| lambdas[i]).sum::<f64>()
                    + k.iter().map(|&i| lambdas[i]).sum::<f64>()
                    - total;
                let err = (a - b * factor).norm();
                worst = worst.max(err);
                failures += usize::from(err != 0.0);
            }
            cases += 1;
        }
        for case in [
            BoundCase::P0,
            BoundCase::ZeroQ,
            BoundCase::NQ,
            BoundCase::PN,
        ] {
            for k in 0..per_case {
                let n = rng.random_range(2..=5);
                let c = rng.random_range(0.1..2.0);
                let slack = if k % 5 == 0 {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                };
                let (degree, level) = match case {
                    BoundCase::P0 | BoundCase::ZeroQ => {
                        let degree = rng.random_range(1..n);
                        (degree, rng.random_range(0..=degree))
                    }
                    BoundCase::NQ | BoundCase::PN => {
                        let degree = rng.random_range(1..=n);
                        (degree, rng.random_range(degree..=n))
                    }
                };
                let lambdas = hypothesis_spectrum(rng, case, n, degree, c, slack);
                cases += 1;
                failures += usize::from(!verify_bound_regime(case, &lambdas, c, degree, level)?);
            }
        }
        Ok((cases, failures, worst))
    })
}

/// Closed-form gradient against central differences of `F_m` (step `1e-5`).
pub fn gradient_fd(rng: &mut SuiteRng, count: usize) -> Result<SuiteOutcome> {
    timed("gradient_fd", || {
        let step = 1e-5;
        let mut failures = 0;
        let mut worst = 0.0f64;
        for _ in 0..count {
            let n = rng.random_range(1..=5);
            let m = rng.random_range(1..=n);
            let lambdas = random_interior_spectrum(rng, n, m, 0.5);
            let grad = fm_gradient_diagonal(&lambdas, m)?;
            for p in 0..n {
                let mut up = lambdas.clone();
                let mut down = lambdas.clone();
                up[p] += step;
                down[p] -= step;
                let fd = (fm_value_from_spectrum(&up, m)?.value
                    - fm_value_from_spectrum(&down, m)?.value)
                    / (2.0 * step);
                let rel = (fd - grad[p]).abs() / grad[p].abs();
                worst = worst.max(rel);
                failures += usize::from(rel > 1e-6);
            }
        }
        Ok((count, failures, worst))
    })
}

/// Determinant formula against the spectral value, and the spectrum of `D_A`
/// against the m-fold eigenvalue sums.
pub fn determinant_formula(rng: &mut SuiteRng, count: usize) -> Result<SuiteOutcome> {
    timed("determinant_formula", || {
        let mut failures = 0;
        let mut worst = 0.0f64;
        for _ in 0..count {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=n);
            let lambdas = random_interior_spectrum(rng, n, m, 0.2);
            let (t, g) = form_with_spectrum(rng, &lambdas);
            let direct = fm_value(&t, &g, m)?.value;
            let via = fm_via_determinant(&t, &g, m)?;
            let rel = (direct - via).abs() / direct;
            worst = worst.max(rel);
            failures += usize::from(rel > 1e-9);
            let a = random_hermitian(rng, n, 1.0);
            let mut spectrum: Vec<f64> = derivation_matrix(&a, m)?
                .entries
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .collect();
            let mut expected = msums(&a.eigenvalues(), m);
            spectrum.sort_by(f64::total_cmp);
            expected.sort_by(f64::total_cmp);
            let err = spectrum
                .iter()
                .zip(&expected)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
            failures += usize::from(err > 1e-9);
        }
        Ok((count, failures, worst))
    })
}

/// `Π_p F^{p p̄} ≥ (m/n)^n` for every `(n, m)` with `n ≤ max_n`, with equality
/// checked for `(2, 1)` and `m = n`. `worst` is the smallest slack seen.
pub fn product_bound(rng: &mut SuiteRng, per_pair: usize, max_n: usize) -> Result<SuiteOutcome> {
    timed("product_bound", || {
        let mut cases = 0;
        let mut failures = 0;
        let mut worst = f64::INFINITY;
        for n in 1..=max_n {
            for m in 1..=n {
                let bound = fm_product_bound(n, m);
                let equality = (n, m) == (2, 1) || m == n;
                for _ in 0..per_pair {
                    let lambdas = random_interior_spectrum(rng, n, m, 1e-3);
                    let product: f64 = fm_gradient_diagonal(&lambdas, m)?.iter().product();
                    let slack = product - bound;
                    worst = worst.min(slack);
                    cases += 1;
                    failures +=
                        usize::from(slack < -1e-12 || (equality && slack.abs() > 1e-9 * bound));
                }
            }
        }
        Ok((cases, failures, worst))
    })
}

/// Concavity of `F_m` along segments between interior forms.
pub fn concavity(rng: &mut SuiteRng, count: usize) -> Result<SuiteOutcome> {
    timed("concavity", || {
        let mut failures = 0;
        for _ in 0..count {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=n);
            let g = random_metric(rng, n);
            let pick = |rng: &mut SuiteRng| -> Result<HermitianMatrix> {
                let h = random_hermitian(rng, n, 1.0);
                let lambdas = relative_lambdas(&h, &g)?;
                let margin: f64 = lambdas[..m].iter().sum();
                let shift = (rng.random_range(0.05..1.0) - margin) / m as f64;
                h.add(&g.base().scale(shift))
            };
            let a = pick(rng)?;
            let b = pick(rng)?;
            failures += usize::from(!concavity_probe(&a, &b, &g, m, 11)?);
        }
        Ok((count, failures, 0.0))
    })
}

/// `l2_constant` over a fixed table of 20 entries.
pub fn l2_table() -> Result<SuiteOutcome> {
    timed("l2_constants", || {
        let mut failures = 0;
        let mut cases = 0;
        for (i, c) in [0.5, 1.0, 2.0, 3.0, 0.25].into_iter().enumerate() {
            let n = 2 + i;
            let entries = [
                (BoundCase::ZeroQ, 1, 1.0 / (c * (n - 1) as f64)),
                (BoundCase::ZeroQ, n - 1, 1.0 / c),
                (BoundCase::NQ, n, 1.0 / (c * n as f64)),
                (BoundCase::PN, 1, 1.0 / c),
            ];
            for (case, l, expected) in entries {
                cases += 1;
                failures += usize::from(l2_constant(case, c, n, l)? != expected);
            }
        }
        Ok((cases, failures, 0.0))
    })
}

/// Every pointwise suite at its acceptance size, from one seed.
pub fn run_pointwise_suites(seed: u64) -> Result<Vec<SuiteOutcome>> {
    let mut rng = rng_from_seed(seed);
    let corpus = cone_corpus(&mut rng, 1000, 4);
    Ok(vec![
        counterexample()?,
        oracle_equivalence(&corpus)?,
        cone_monotonicity(&corpus)?,
        curvature_bounds(&mut rng, 500)?,
        gradient_fd(&mut rng, 200)?,
        determinant_formula(&mut rng, 500)?,
        product_bound(&mut rng, 100_000, 4)?,
        concavity(&mut rng, 500)?,
        l2_table()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prescribed_spectrum_is_recovered() {
        let mut rng = rng_from_seed(7);
        let lambdas = [-0.5, 0.25, 2.0];
        let (t, g) = form_with_spectrum(&mut rng, &lambdas);
        let got = relative_lambdas(&t, &g).unwrap();
        for (a, b) in got.iter().zip(&lambdas) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = cone_corpus(&mut rng_from_seed(3), 5, 4);
        let b = cone_corpus(&mut rng_from_seed(3), 5, 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.t, y.t);
            assert_eq!(x.m, y.m);
        }
    }

    #[test]
    fn small_suites_pass() {
        let mut rng = rng_from_seed(11);
        let corpus = cone_corpus(&mut rng, 100, 4);
        for outcome in [
            counterexample().unwrap(),
            oracle_equivalence(&corpus).unwrap(),
            cone_monotonicity(&corpus).unwrap(),
            curvature_bounds(&mut rng, 50).unwrap(),
            gradient_fd(&mut rng, 30).unwrap(),
            determinant_formula(&mut rng, 30).unwrap(),
            product_bound(&mut rng, 200, 4).unwrap(),
            concavity(&mut rng, 30).unwrap(),
            l2_table().unwrap(),
        ] {
            assert!(outcome.passed(), "{outcome:?}");
        }
    }
}
