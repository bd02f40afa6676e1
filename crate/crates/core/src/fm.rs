//! The operator `F_m`: the `C(n,m)`-th root of the product of all m-fold
//! sums of relative eigenvalues, with its first derivatives, the derivation
//! operator `D_A` on `Λ^m C^n` and the determinant formula
//! `F_m = det(D_{g⁻¹A})^{1/C(n,m)}`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cones::CONE_TOLERANCE;
use crate::error::{check_order, Error, Result};
use crate::hermitian::{relative_eigenvalues, HermitianMatrix, MetricMatrix, RelativeSpectrum};
use crate::subsets::{binomial, msums, subset_rank, subsets};

/// Value of `F_m` with the m-sums `σ_J` it was built from (lexicographic `J`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmValue {
    pub value: f64,
    pub msums: Vec<f64>,
}

impl FmValue {
    pub fn min_msum(&self) -> f64 {
        self.msums.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn fm_value(t: &HermitianMatrix, omega: &MetricMatrix, m: usize) -> Result<FmValue> {
    check_order(m, omega.dim())?;
    let spectrum = relative_eigenvalues(t, omega)?;
    fm_value_from_spectrum(&spectrum.lambdas, m)
}

/// `F_m` of a spectrum. Sums within [`CONE_TOLERANCE`] below zero are treated
/// as boundary points, where the value is 0.
pub fn fm_value_from_spectrum(lambdas: &[f64], m: usize) -> Result<FmValue> {
    check_order(m, lambdas.len())?;
    let sums = msums(lambdas, m);
    let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -CONE_TOLERANCE {
        return Err(Error::OutsideCone { margin: min });
    }
    let value = if min <= 0.0 {
        0.0
    } else {
        let log_mean = sums.iter().map(|s| s.ln()).sum::<f64>() / sums.len() as f64;
        log_mean.exp()
    };
    Ok(FmValue { value, msums: sums })
}

/// `∂F_m/∂a_{p p̄}` at a diagonal matrix:
/// `(1/C(n,m)) F_m Σ_{J∋p} 1/σ_J`. Off-diagonal derivatives vanish there.
pub fn fm_gradient_diagonal(lambdas: &[f64], m: usize) -> Result<Vec<f64>> {
    let fm = fm_value_from_spectrum(lambdas, m)?;
    let min = fm.min_msum();
    if min <= CONE_TOLERANCE {
        return Err(Error::OnConeBoundary { margin: min });
    }
    Ok(diagonal_gradient(lambdas.len(), m, &fm))
}

/// Gradient from precomputed sums; every `σ_J` must be positive.
pub(crate) fn diagonal_gradient(n: usize, m: usize, fm: &FmValue) -> Vec<f64> {
    let scale = fm.value / binomial(n, m) as f64;
    let mut grad = vec![0.0; n];
    for (set, sigma) in subsets(n, m).iter().zip(&fm.msums) {
        for &p in set {
            grad[p] += 1.0 / sigma;
        }
    }
    grad.into_iter().map(|g| scale * g).collect()
}

/// Value and gradient of `F_m` at a general Hermitian `T` relative to `ω`.
///
/// The gradient is returned as the Hermitian matrix `N` with
/// `dF = Re Σ_{jk} N_{jk} dT_{jk}`; it is `Σ_p F^{p p̄} conj(v_p) v_pᵀ` for the
/// diagonalising basis `v_p`. Repeated eigenvalues carry equal weights, so `N`
/// does not depend on the basis chosen inside an eigenspace.
pub fn fm_gradient_matrix(
    spectrum: &RelativeSpectrum,
    m: usize,
) -> Result<(f64, DMatrix<Complex64>)> {
    let diag = fm_gradient_diagonal(&spectrum.lambdas, m)?;
    let value = fm_value_from_spectrum(&spectrum.lambdas, m)?.value;
    Ok((value, transport_gradient(spectrum, &diag)))
}

pub(crate) fn transport_gradient(spectrum: &RelativeSpectrum, diag: &[f64]) -> DMatrix<Complex64> {
    let n = spectrum.dim();
    let mut grad = DMatrix::<Complex64>::zeros(n, n);
    for (p, weight) in diag.iter().enumerate() {
        let v = spectrum.basis.column(p);
        for j in 0..n {
            for k in 0..n {
                grad[(j, k)] += v[j].conj() * v[k] * *weight;
            }
        }
    }
    grad
}

/// Universal lower bound `ν = (m/n)^n` for `Π_p F^{p p̄}` on the open cone.
///
/// AM-GM over the `C(n-1, m-1)` sets containing each `p` gives
/// `Π_p Σ_{J∋p} 1/σ_J ≥ C(n-1,m-1)^n F^{-n}`, and `C(n-1,m-1)/C(n,m) = m/n`.
pub fn fm_product_bound(n: usize, m: usize) -> f64 {
    (m as f64 / n as f64).powi(n as i32)
}

/// Matrix of the derivation `D_A(v_1∧…∧v_m) = Σ_i v_1∧…∧A v_i∧…∧v_m` in the
/// lexicographic basis of `Λ^m C^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivationMatrix {
    pub n: usize,
    pub m: usize,
    pub entries: DMatrix<Complex64>,
}

pub fn derivation_matrix(a: &HermitianMatrix, m: usize) -> Result<DerivationMatrix> {
    derivation_matrix_general(a.entries(), m)
}

/// [`derivation_matrix`] for an arbitrary square matrix, e.g. `g⁻¹·Ã`.
pub fn derivation_matrix_general(a: &DMatrix<Complex64>, m: usize) -> Result<DerivationMatrix> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    check_order(m, n)?;
    let basis = subsets(n, m);
    let size = basis.len();
    let mut entries = DMatrix::<Complex64>::zeros(size, size);
    for (col, set) in basis.iter().enumerate() {
        for &j in set {
            entries[(col, col)] += a[(j, j)];
            for i in (0..n).filter(|i| !set.contains(i)) {
                // moving i into j's slot crosses the members strictly between them
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                let crossings = set.iter().filter(|&&s| s > lo && s < hi).count();
                let sign = if crossings % 2 == 0 { 1.0 } else { -1.0 };
                let mut target: Vec<usize> =
                    set.iter().map(|&s| if s == j { i } else { s }).collect();
                target.sort_unstable();
                let row = subset_rank(n, &target);
                entries[(row, col)] += a[(i, j)] * sign;
            }
        }
    }
    Ok(DerivationMatrix { n, m, entries })
}

/// `F_m[u] = det(D_{g⁻¹ u})^{1/C(n,m)}`.
pub fn fm_via_determinant(u_hessian: &HermitianMatrix, g: &MetricMatrix, m: usize) -> Result<f64> {
    if u_hessian.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: u_hessian.dim(),
        });
    }
    let mixed = g.inverse() * u_hessian.entries();
    let d = derivation_matrix_general(&mixed, m)?;
    let det = d.entries.determinant();
    if det.re <= 0.0 || det.im.abs() > 1e-8 * det.re.abs().max(1.0) {
        return Err(Error::NonPositiveDeterminant { det: det.re });
    }
    Ok(det.re.powf(1.0 / d.entries.nrows() as f64))
}

/// `F_m` where the form is m-semipositive, 0 elsewhere.
pub fn fm_plus(t: &HermitianMatrix, omega: &MetricMatrix, m: usize) -> Result<f64> {
    check_order(m, omega.dim())?;
    let spectrum = relative_eigenvalues(t, omega)?;
    Ok(fm_plus_from_spectrum(&spectrum.lambdas, m))
}

pub(crate) fn fm_plus_from_spectrum(lambdas: &[f64], m: usize) -> f64 {
    fm_value_from_spectrum(lambdas, m)
        .map(|v| v.value)
        .unwrap_or(0.0)
}

/// Checks `F_m[tA + (1-t)B] ≥ t F_m[A] + (1-t) F_m[B] - 1e-10` on `steps`
/// equally spaced `t ∈ [0, 1]`.
pub fn concavity_probe(
    a: &HermitianMatrix,
    b: &HermitianMatrix,
    g: &MetricMatrix,
    m: usize,
    steps: usize,
) -> Result<bool> {
    let fa = interior_value(a, g, m)?;
    let fb = interior_value(b, g, m)?;
    let steps = steps.max(2);
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let mid = fm_value(&a.lerp(b, t)?, g, m)?.value;
        if mid < t * fa + (1.0 - t) * fb - 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn interior_value(a: &HermitianMatrix, g: &MetricMatrix, m: usize) -> Result<f64> {
    let value = fm_value(a, g, m)?;
    if value.min_msum() <= 0.0 {
        return Err(Error::OutsideCone {
            margin: value.min_msum(),
        });
    }
    Ok(value.value)
}
