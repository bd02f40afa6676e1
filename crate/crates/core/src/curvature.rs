//! The pointwise curvature operator `A = [T∧·, Λ_ω]` on `(p,q)`-forms in a
//! frame where `T` and `ω` are simultaneously diagonal, and the lower bounds
//! it satisfies under m-positivity or m-negativity of `T`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cones::CONE_TOLERANCE;
use crate::error::{Error, Result};
use crate::subsets::{binomial, msums, subsets};

/// Coefficients `u_{J K̄}` of a `(p,q)`-form with values in a line bundle,
/// stored J-major over lexicographic multi-indices, with the fibre weight `|e|²_h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidegreeForm {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub coeffs: Vec<Complex64>,
    pub weight: f64,
}

impl BidegreeForm {
    pub fn zeros(n: usize, p: usize, q: usize) -> Result<Self> {
        if p > n || q > n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.max(q),
            });
        }
        Ok(Self {
            n,
            p,
            q,
            coeffs: vec![Complex64::new(0.0, 0.0); binomial(n, p) * binomial(n, q)],
            weight: 1.0,
        })
    }

    /// The unit form `dz_J ∧ dz̄_K` for the `index`-th pair.
    pub fn basis(n: usize, p: usize, q: usize, index: usize) -> Result<Self> {
        let mut form = Self::zeros(n, p, q)?;
        if index >= form.coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: form.coeffs.len(),
                got: index,
            });
        }
        form.coeffs[index] = Complex64::new(1.0, 0.0);
        Ok(form)
    }

    /// The `(J, K)` pairs in storage order.
    pub fn index_pairs(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let ks = subsets(self.n, self.q);
        subsets(self.n, self.p)
            .into_iter()
            .flat_map(|j| ks.iter().map(move |k| (j.clone(), k.clone())))
            .collect()
    }

    /// `⟨u, v⟩ = Σ u_{JK} conj(v_{JK}) |e|²_h`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        if (self.n, self.p, self.q) != (other.n, other.p, other.q) {
            return Err(Error::DimensionMismatch {
                expected: self.coeffs.len(),
                got: other.coeffs.len(),
            });
        }
        let sum: Complex64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b.conj())
            .sum();
        Ok(sum * self.weight)
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.weight
    }
}

/// Multiplies each `u_{J K̄}` by `Σ_{j∈J} λ_j + Σ_{k∈K} λ_k − Σ_l λ_l`.
pub fn apply_curvature_operator(u: &BidegreeForm, lambdas: &[f64]) -> Result<BidegreeForm> {
    if lambdas.len() != u.n {
        return Err(Error::DimensionMismatch {
            expected: u.n,
            got: lambdas.len(),
        });
    }
    let total: f64 = lambdas.iter().sum();
    let js = msums(lambdas, u.p);
    let ks = msums(lambdas, u.q);
    let mut out = u.clone();
    for (a, sj) in js.iter().enumerate() {
        for (b, sk) in ks.iter().enumerate() {
            out.coeffs[a * ks.len() + b] *= sj + sk - total;
        }
    }
    Ok(out)
}

/// The four bidegree families with a pointwise lower bound on `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundCase {
    /// `(l, 0)`-forms under `T ≤_{n-p} −cω`, levels `l ≤ p`, bound `c(n−l)`.
    #[serde(rename = "p0")]
    P0,
    /// `(0, l)`-forms under `T ≤_{n-q} −cω`, levels `l ≤ q`, bound `c(n−l)`.
    #[serde(rename = "0q")]
    ZeroQ,
    /// `(n, l)`-forms under `T ≥_q cω`, levels `l ≥ q`, bound `c·l`.
    #[serde(rename = "nq")]
    NQ,
    /// `(l, n)`-forms under `T ≥_p cω`, levels `l ≥ p`, bound `c·l`.
    #[serde(rename = "pn")]
    PN,
}

impl fmt::Display for BoundCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundCase::P0 => "p0",
            BoundCase::ZeroQ => "0q",
            BoundCase::NQ => "nq",
            BoundCase::PN => "pn",
        })
    }
}

impl FromStr for BoundCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p0" => Ok(BoundCase::P0),
            "0q" => Ok(BoundCase::ZeroQ),
            "nq" => Ok(BoundCase::NQ),
            "pn" => Ok(BoundCase::PN),
            other => Err(Error::Format(format!("unknown bound case '{other}'"))),
        }
    }
}

impl BoundCase {
    fn is_negative(self) -> bool {
        matches!(self, BoundCase::P0 | BoundCase::ZeroQ)
    }

    /// Bidegree of the forms the bound applies to at level `l`.
    pub fn bidegree(self, n: usize, l: usize) -> (usize, usize) {
        match self {
            BoundCase::P0 => (l, 0),
            BoundCase::ZeroQ => (0, l),
            BoundCase::NQ => (n, l),
            BoundCase::PN => (l, n),
        }
    }

    pub fn bound(self, c: f64, n: usize, l: usize) -> f64 {
        if self.is_negative() {
            c * (n - l) as f64
        } else {
            c * l as f64
        }
    }
}

/// Checks `⟨A u, u⟩ ≥ bound·|u|²` on every basis form of the case's bidegree.
///
/// `degree` is the index in the curvature hypothesis (the `p` of case `p0`,
/// the `q` of case `nq`, and so on); `level` is the `l` of the target bidegree.
pub fn verify_bound_regime(
    case: BoundCase,
    lambdas: &[f64],
    c: f64,
    degree: usize,
    level: usize,
) -> Result<bool> {
    let n = lambdas.len();
    if n == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::HypothesisViolated(format!(
            "c = {c} must be positive"
        )));
    }
    if degree > n || level > n {
        return Err(Error::LevelOutOfRange(format!(
            "degree {degree} and level {level} must not exceed n = {n}"
        )));
    }
    let scale = 1.0 + c + lambdas.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let tol = CONE_TOLERANCE * scale;
    if case.is_negative() {
        let order = n - degree;
        if order == 0 {
            return Err(Error::LevelOutOfRange(format!(
                "degree {degree} leaves an empty hypothesis"
            )));
        }
        if level > degree {
            return Err(Error::LevelOutOfRange(format!(
                "level {level} exceeds degree {degree}"
            )));
        }
        let shifted: Vec<f64> = lambdas.iter().map(|l| l + c).collect();
        let worst = msums(&shifted, order)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if worst > tol {
            return Err(Error::HypothesisViolated(format!(
                "a sum of {order} shifted eigenvalues is {worst:e} > 0"
            )));
        }
    } else {
        if degree == 0 {
            return Err(Error::LevelOutOfRange(
                "degree 0 leaves an empty hypothesis".into(),
            ));
        }
        if level < degree {
            return Err(Error::LevelOutOfRange(format!(
                "level {level} is below degree {degree}"
            )));
        }
        let shifted: Vec<f64> = lambdas.iter().map(|l| l - c).collect();
        let worst = msums(&shifted, degree)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if worst < -tol {
            return Err(Error::HypothesisViolated(format!(
                "a sum of {degree} shifted eigenvalues is {worst:e} < 0"
            )));
        }
    }
    let (p, q) = case.bidegree(n, level);
    let bound = case.bound(c, n, level);
    let size = binomial(n, p) * binomial(n, q);
    for index in 0..size {
        let u = BidegreeForm::basis(n, p, q, index)?;
        let au = apply_curvature_operator(&u, lambdas)?;
        if au.inner(&u)?.re < bound * u.norm_sq() - tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Constant `κ` in `‖u‖² ≤ κ ∫|v|²` for the minimal solution of `∂̄u = v`.
pub fn l2_constant(case: BoundCase, c: f64, n: usize, l: usize) -> Result<f64> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::HypothesisViolated(format!(
            "c = {c} must be positive"
        )));
    }
    match case {
        BoundCase::ZeroQ if l >= 1 && l < n => Ok(1.0 / (c * (n - l) as f64)),
        BoundCase::NQ | BoundCase::PN if l >= 1 && l <= n => Ok(1.0 / (c * l as f64)),
        BoundCase::P0 => Err(Error::LevelOutOfRange(
            "no L2 estimate in bidegree (l, 0)".into(),
        )),
        _ => Err(Error::LevelOutOfRange(format!(
            "level {l} out of range for case {case} with n = {n}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn factor(n: usize, p: usize, q: usize, index: usize, lambdas: &[f64]) -> f64 {
        let u = BidegreeForm::basis(n, p, q, index).unwrap();
        apply_curvature_operator(&u, lambdas).unwrap().coeffs[index].re
    }

    #[test]
    fn two_dimensional_factors() {
        let l = [0.3, -1.7];
        // pairs (J,K): ({0},{0}), ({0},{1}), ({1},{0}), ({1},{1})
        assert_relative_eq!(factor(2, 1, 1, 1, &l), 0.0, epsilon = 1e-15);
        assert_relative_eq!(factor(2, 1, 1, 0, &l), 0.3 + 1.7, epsilon = 1e-15);
    }

    #[test]
    fn top_degree_factors() {
        let l = [0.5, 2.0, -0.25];
        let form = BidegreeForm::zeros(3, 3, 1).unwrap();
        for (index, (_, k)) in form.index_pairs().iter().enumerate() {
            assert_relative_eq!(factor(3, 3, 1, index, &l), l[k[0]], epsilon = 1e-14);
        }
        assert_relative_eq!(factor(3, 3, 3, 0, &l), 2.25, epsilon = 1e-14);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let u = BidegreeForm::basis(3, 1, 1, 0).unwrap();
        assert!(apply_curvature_operator(&u, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bound_examples() {
        let c = 0.7;
        let l = [c, c, c, c];
        assert!(verify_bound_regime(BoundCase::NQ, &l, c, 2, 2).unwrap());
        let neg = [-1.0; 4];
        for p in 0..4 {
            assert!(verify_bound_regime(BoundCase::P0, &neg, 1.0, p, p).unwrap());
        }
    }

    #[test]
    fn hypothesis_violations() {
        assert!(matches!(
            verify_bound_regime(BoundCase::NQ, &[-1.0, 2.0, 2.0], 1.0, 1, 1),
            Err(Error::HypothesisViolated(_))
        ));
        assert!(matches!(
            verify_bound_regime(BoundCase::ZeroQ, &[-1.0, 2.0, -2.0], 1.0, 1, 1),
            Err(Error::HypothesisViolated(_))
        ));
        assert!(matches!(
            verify_bound_regime(BoundCase::PN, &[1.0, 1.0], 1.0, 2, 1),
            Err(Error::LevelOutOfRange(_))
        ));
    }

    #[test]
    fn l2_examples() {
        assert_relative_eq!(l2_constant(BoundCase::NQ, 1.0, 5, 5).unwrap(), 0.2);
        assert_relative_eq!(l2_constant(BoundCase::ZeroQ, 2.0, 3, 1).unwrap(), 0.25);
        assert_relative_eq!(l2_constant(BoundCase::NQ, 0.5, 3, 2).unwrap(), 1.0);
        assert!(l2_constant(BoundCase::ZeroQ, 1.0, 3, 3).is_err());
        assert!(l2_constant(BoundCase::NQ, 1.0, 3, 0).is_err());
        assert!(l2_constant(BoundCase::NQ, -1.0, 3, 1).is_err());
    }

    #[test]
    fn case_names_roundtrip() {
        for case in [
            BoundCase::P0,
            BoundCase::ZeroQ,
            BoundCase::NQ,
            BoundCase::PN,
        ] {
            assert_eq!(case.to_string().parse::<BoundCase>().unwrap(), case);
            let json = serde_json::to_string(&case).unwrap();
            assert_eq!(json, format!("\"{case}\""));
        }
    }
}
