//! Membership in the m-positivity cones.
//!
//! A form `T` is m-semipositive with respect to `ω` when every sum of `m`
//! relative eigenvalues is non-negative. Two routes are provided: the sorted
//! spectrum (sum of the `m` smallest eigenvalues, via Cholesky) and an
//! enumeration of all coefficients of `T ∧ ω^{m-1}/(m-1)!` in a simultaneously
//! diagonalising frame, computed through the real `2n × 2n` embedding and a
//! symmetric inverse square root of `ω`. They must always agree.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};
use crate::fm::fm_value;
use crate::hermitian::{relative_eigenvalues, HermitianMatrix, MetricMatrix};
use crate::subsets::{msums, subsets};

/// Absolute tolerance on eigenvalue sums of order-one inputs.
pub const CONE_TOLERANCE: f64 = 1e-9;

/// Outcome of a cone test. Indices in `witness` are zero-based positions in
/// the ascending relative spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeVerdict {
    pub member: bool,
    pub margin: f64,
    pub witness: Vec<usize>,
}

impl ConeVerdict {
    fn from_margin(margin: f64, witness: Vec<usize>) -> Self {
        Self {
            member: margin >= -CONE_TOLERANCE,
            margin,
            witness,
        }
    }
}

/// Verdict from the sum of the `m` smallest relative eigenvalues.
pub fn is_m_semipositive(
    t: &HermitianMatrix,
    omega: &MetricMatrix,
    m: usize,
) -> Result<ConeVerdict> {
    check_order(m, omega.dim())?;
    let spectrum = relative_eigenvalues(t, omega)?;
    Ok(verdict_from_sorted(&spectrum.lambdas, m))
}

pub(crate) fn verdict_from_sorted(lambdas: &[f64], m: usize) -> ConeVerdict {
    let margin: f64 = lambdas[..m].iter().sum();
    ConeVerdict::from_margin(margin, (0..m).collect())
}

/// Real symmetric `[[Re, -Im], [Im, Re]]` image of a Hermitian matrix.
fn real_embedding(a: &HermitianMatrix) -> DMatrix<f64> {
    let n = a.dim();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = a.get(i % n, j % n);
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Relative eigenvalues from `ω^{-1/2} T ω^{-1/2}` in the real embedding, where
/// every eigenvalue appears twice.
fn embedded_lambdas(t: &HermitianMatrix, omega: &MetricMatrix) -> Result<Vec<f64>> {
    let n = omega.dim();
    if t.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: t.dim(),
        });
    }
    let w = real_embedding(omega.base()).symmetric_eigen();
    let inv_sqrt = DMatrix::from_diagonal(&w.eigenvalues.map(|e| 1.0 / e.sqrt()));
    let root = &w.eigenvectors * inv_sqrt * w.eigenvectors.transpose();
    let reduced = &root * real_embedding(t) * &root;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let mut doubled: Vec<f64> = reduced.symmetric_eigenvalues().iter().copied().collect();
    doubled.sort_by(f64::total_cmp);
    Ok(doubled.into_iter().step_by(2).collect())
}

/// All `C(n, m)` coefficients `Σ_{j∈J} λ_j` of `T ∧ ω_{m-1}` on the decomposable
/// basis `i dz_{j_1}∧dz̄_{j_1} ∧ … ∧ i dz_{j_m}∧dz̄_{j_m}`, lexicographic in `J`.
pub fn wedge_coefficients(t: &HermitianMatrix, omega: &MetricMatrix, m: usize) -> Result<Vec<f64>> {
    check_order(m, omega.dim())?;
    Ok(msums(&embedded_lambdas(t, omega)?, m))
}

/// Brute-force strong positivity check of `T ∧ ω^{m-1}`: the form is strongly
/// semipositive iff every decomposable coefficient is non-negative.
pub fn strong_positivity_oracle(
    t: &HermitianMatrix,
    omega: &MetricMatrix,
    m: usize,
) -> Result<ConeVerdict> {
    let n = omega.dim();
    let coefficients = wedge_coefficients(t, omega, m)?;
    let sets = subsets(n, m);
    let (best, margin) =
        coefficients
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
            );
    Ok(ConeVerdict::from_margin(margin, sets[best].clone()))
}

/// Membership of the g-Hermitian matrix `g⁻¹·Ã` in `P_m`: its trace on every
/// m-dimensional subspace is non-negative, equivalently the `m` smallest
/// eigenvalues of `Ã` relative to `g` have non-negative sum.
pub fn cone_pmk_membership(
    a_tilde: &HermitianMatrix,
    g: &MetricMatrix,
    m: usize,
) -> Result<ConeVerdict> {
    if a_tilde.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: a_tilde.dim(),
        });
    }
    is_m_semipositive(a_tilde, g, m)
}

/// `A ∈ P_m^n(B)`: `A` lies in the cone and `F_m[A] ≥ F_m[B]` (up to tolerance).
pub fn cone_pmnb_membership(
    a_tilde: &HermitianMatrix,
    b_tilde: &HermitianMatrix,
    g: &MetricMatrix,
    m: usize,
) -> Result<bool> {
    let b_verdict = cone_pmk_membership(b_tilde, g, m)?;
    if !b_verdict.member {
        return Err(Error::OutsideCone {
            margin: b_verdict.margin,
        });
    }
    let a_verdict = cone_pmk_membership(a_tilde, g, m)?;
    if !a_verdict.member {
        return Ok(false);
    }
    let fa = fm_value(a_tilde, g, m)?.value;
    let fb = fm_value(b_tilde, g, m)?.value;
    Ok(fa >= fb - CONE_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_t() -> HermitianMatrix {
        HermitianMatrix::from_diagonal(&[1.0, 1.0, -1.0])
    }

    #[test]
    fn diagonal_example_inside() {
        let omega = MetricMatrix::from_diagonal(&[1.0, 1.0, 3.0]).unwrap();
        let v = is_m_semipositive(&example_t(), &omega, 2).unwrap();
        assert!(v.member);
        assert_relative_eq!(v.margin, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(v.witness, vec![0, 1]);
    }

    #[test]
    fn diagonal_example_outside() {
        let omega = MetricMatrix::from_diagonal(&[1.0, 1.0, 0.5]).unwrap();
        assert!(!is_m_semipositive(&example_t(), &omega, 2).unwrap().member);
    }

    #[test]
    fn zero_form_is_member() {
        let omega = MetricMatrix::from_diagonal(&[2.0, 1.0, 0.3]).unwrap();
        for m in 1..=3 {
            let v = is_m_semipositive(&HermitianMatrix::zeros(3), &omega, m).unwrap();
            assert!(v.member);
            assert_eq!(v.margin, 0.0);
        }
    }

    #[test]
    fn order_out_of_range() {
        let omega = MetricMatrix::identity(3);
        assert!(matches!(
            is_m_semipositive(&example_t(), &omega, 0),
            Err(Error::OrderOutOfRange { .. })
        ));
        assert!(matches!(
            strong_positivity_oracle(&example_t(), &omega, 4),
            Err(Error::OrderOutOfRange { .. })
        ));
    }

    #[test]
    fn oracle_enumerates_pairs() {
        let omega = MetricMatrix::from_diagonal(&[1.0, 1.0, 3.0]).unwrap();
        let coeffs = wedge_coefficients(&example_t(), &omega, 2).unwrap();
        let expected = [2.0 / 3.0, 2.0 / 3.0, 2.0];
        for (c, e) in coeffs.iter().zip(expected) {
            assert_relative_eq!(*c, e, epsilon = 1e-12);
        }
        let v = strong_positivity_oracle(&example_t(), &omega, 2).unwrap();
        assert!(v.member);
        assert_eq!(v.witness, vec![0, 1]);
    }

    #[test]
    fn identity_coefficients_equal_m() {
        let omega = MetricMatrix::identity(4);
        for m in 1..=4 {
            for c in wedge_coefficients(&HermitianMatrix::identity(4), &omega, m).unwrap() {
                assert_relative_eq!(c, m as f64, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pmk_examples() {
        let g = MetricMatrix::identity(2);
        let v = cone_pmk_membership(&HermitianMatrix::identity(2), &g, 2).unwrap();
        assert!(v.member);
        assert_relative_eq!(v.margin, 2.0, epsilon = 1e-14);
        let v = cone_pmk_membership(&HermitianMatrix::from_diagonal(&[-1.0, 2.0]), &g, 1).unwrap();
        assert!(!v.member);
        assert_relative_eq!(v.margin, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn pmnb_examples() {
        let g = MetricMatrix::identity(3);
        let id = HermitianMatrix::identity(3);
        let two = id.scale(2.0);
        assert!(cone_pmnb_membership(&two, &id, &g, 2).unwrap());
        assert!(!cone_pmnb_membership(&id, &two, &g, 2).unwrap());
        let a = HermitianMatrix::from_diagonal(&[0.5, 0.5, 4.0]);
        assert!(cone_pmnb_membership(&a, &id, &g, 2).unwrap());
        let outside = HermitianMatrix::from_diagonal(&[-1.0, -1.0, 0.5]);
        assert!(matches!(
            cone_pmnb_membership(&a, &outside, &g, 2),
            Err(Error::OutsideCone { .. })
        ));
    }
}
