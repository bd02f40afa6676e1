//! Hermitian coefficient matrices of real (1,1)-forms, metrics, and the
//! generalised eigenproblem `det(T - λ ω) = 0`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|a_jk - conj(a_kj)|` accepted at construction.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// Metrics whose smallest eigenvalue is below this fraction of the largest are rejected.
pub const POSITIVE_DEFINITE_RATIO: f64 = 1e-12;

/// Coefficient matrix `(a_{j k̄})` of the form `i Σ a_{j k̄} dz_j ∧ dz̄_k`.
///
/// The stored matrix is exactly Hermitian: construction symmetrises away
/// round-off below [`HERMITIAN_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    entries: DMatrix<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    n: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl HermitianMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: entries.ncols(),
            });
        }
        if n == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let mut deviation: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for j in 0..n {
            for k in 0..n {
                deviation = deviation.max((entries[(j, k)] - entries[(k, j)].conj()).norm());
                scale = scale.max(entries[(j, k)].norm());
            }
        }
        if deviation > HERMITIAN_TOLERANCE * scale {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self::symmetrised(entries))
    }

    fn symmetrised(entries: DMatrix<Complex64>) -> Self {
        let adjoint = entries.adjoint();
        Self {
            entries: (entries + adjoint).scale(0.5),
        }
    }

    /// Real symmetric matrix viewed as a Hermitian one.
    pub fn from_real(entries: &DMatrix<f64>) -> Result<Self> {
        Self::new(entries.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn from_diagonal(diagonal: &[f64]) -> Self {
        let n = diagonal.len();
        let mut entries = DMatrix::zeros(n, n);
        for (j, &d) in diagonal.iter().enumerate() {
            entries[(j, j)] = Complex64::new(d, 0.0);
        }
        Self { entries }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_diagonal(&vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.entries[(j, k)]
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            entries: self.entries.scale(alpha),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim())?;
        Ok(Self {
            entries: &self.entries + &other.entries,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim())?;
        Ok(Self {
            entries: &self.entries - &other.entries,
        })
    }

    /// `t·self + (1 - t)·other`.
    pub fn lerp(&self, other: &Self, t: f64) -> Result<Self> {
        self.check_dim(other.dim())?;
        Ok(Self {
            entries: self.entries.scale(t) + other.entries.scale(1.0 - t),
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|j| self.entries[(j, j)].re).sum()
    }

    /// Ordinary spectrum (relative to the identity), ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut values: Vec<f64> = SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        values.sort_by(f64::total_cmp);
        values
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: n,
            });
        }
        Ok(())
    }
}

impl Serialize for HermitianMatrix {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|j| (0..n).map(|k| f(&self.entries[(j, k)])).collect())
                .collect()
        };
        MatrixRepr {
            n,
            re: rows(|c| c.re),
            im: rows(|c| c.im),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = MatrixRepr::deserialize(deserializer)?;
        let n = repr.n;
        let shape_ok = |rows: &Vec<Vec<f64>>| rows.len() == n && rows.iter().all(|r| r.len() == n);
        if !shape_ok(&repr.re) {
            return Err(D::Error::custom(format!("'re' must be {n}x{n}")));
        }
        // an omitted imaginary part means a real matrix
        if !repr.im.is_empty() && !shape_ok(&repr.im) {
            return Err(D::Error::custom(format!("'im' must be {n}x{n}")));
        }
        let entries = DMatrix::from_fn(n, n, |j, k| {
            let im = if repr.im.is_empty() {
                0.0
            } else {
                repr.im[j][k]
            };
            Complex64::new(repr.re[j][k], im)
        });
        HermitianMatrix::new(entries).map_err(D::Error::custom)
    }
}

/// A positive definite Hermitian matrix, the coefficients `g_{j k̄}` of a metric `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    base: HermitianMatrix,
    cholesky_lower: DMatrix<Complex64>,
}

impl MetricMatrix {
    pub fn new(base: HermitianMatrix) -> Result<Self> {
        let spectrum = base.eigenvalues();
        let smallest = spectrum[0];
        let largest = *spectrum.last().unwrap_or(&0.0);
        if largest <= 0.0 || smallest <= POSITIVE_DEFINITE_RATIO * largest {
            return Err(Error::NotPositiveDefinite { smallest, largest });
        }
        let cholesky = Cholesky::new(base.entries.clone())
            .ok_or(Error::NotPositiveDefinite { smallest, largest })?;
        Ok(Self {
            cholesky_lower: cholesky.l(),
            base,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(HermitianMatrix::identity(n)).expect("identity is positive definite")
    }

    pub fn from_diagonal(diagonal: &[f64]) -> Result<Self> {
        Self::new(HermitianMatrix::from_diagonal(diagonal))
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &HermitianMatrix {
        &self.base
    }

    /// Lower Cholesky factor `C` with `ω = C·C*`.
    pub fn cholesky_lower(&self) -> &DMatrix<Complex64> {
        &self.cholesky_lower
    }

    pub fn inverse(&self) -> DMatrix<Complex64> {
        let identity = DMatrix::<Complex64>::identity(self.dim(), self.dim());
        let lower_inv = self
            .cholesky_lower
            .solve_lower_triangular(&identity)
            .expect("Cholesky factor is invertible");
        lower_inv.adjoint() * lower_inv
    }
}

impl Serialize for MetricMatrix {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        self.base.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MetricMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let base = HermitianMatrix::deserialize(deserializer)?;
        MetricMatrix::new(base).map_err(D::Error::custom)
    }
}

/// Eigenvalues of a form relative to a metric with a simultaneously
/// diagonalising basis: `basis* ω basis = I`, `basis* T basis = diag(lambdas)`.
#[derive(Debug, Clone)]
pub struct RelativeSpectrum {
    pub lambdas: Vec<f64>,
    pub basis: DMatrix<Complex64>,
}

impl RelativeSpectrum {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Sum of the `m` smallest eigenvalues.
    pub fn min_msum(&self, m: usize) -> f64 {
        self.lambdas[..m].iter().sum()
    }
}

/// Solves `det(T - λ ω) = 0` by Cholesky reduction `ω = C C*` and the ordinary
/// Hermitian spectrum of `C⁻¹ T C⁻*`.
pub fn relative_eigenvalues(t: &HermitianMatrix, omega: &MetricMatrix) -> Result<RelativeSpectrum> {
    let n = omega.dim();
    if t.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: t.dim(),
        });
    }
    let lower = omega.cholesky_lower();
    let left = lower
        .solve_lower_triangular(t.entries())
        .expect("Cholesky factor is invertible");
    let reduced = lower
        .solve_lower_triangular(&left.adjoint())
        .expect("Cholesky factor is invertible")
        .adjoint();
    let reduced = (&reduced + reduced.adjoint()).scale(0.5);
    let eigen = SymmetricEigen::new(reduced);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[a]
            .total_cmp(&eigen.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let lambdas: Vec<f64> = order.iter().map(|&p| eigen.eigenvalues[p]).collect();
    let unitary = DMatrix::from_fn(n, n, |row, col| eigen.eigenvectors[(row, order[col])]);
    let basis = lower
        .adjoint()
        .solve_upper_triangular(&unitary)
        .expect("Cholesky factor is invertible");
    Ok(RelativeSpectrum { lambdas, basis })
}

/// Relative eigenvalues only, for callers that do not need the basis.
pub fn relative_lambdas(t: &HermitianMatrix, omega: &MetricMatrix) -> Result<Vec<f64>> {
    Ok(relative_eigenvalues(t, omega)?.lambdas)
}

/// Assembles `u_{j k̄} = ∂²u/∂z_j∂z̄_k` from the real Hessian in coordinates
/// `(x_1, y_1, …, x_n, y_n)`:
///
/// `u_{j k̄} = ¼ [(u_{x_j x_k} + u_{y_j y_k}) + i (u_{x_j y_k} − u_{y_j x_k})]`.
pub fn complex_hessian_point(second_derivs: &DMatrix<f64>) -> Result<HermitianMatrix> {
    let dim = second_derivs.nrows();
    if second_derivs.ncols() != dim || dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::DimensionMismatch {
            expected: 2 * (dim / 2).max(1),
            got: second_derivs.ncols(),
        });
    }
    let mut deviation: f64 = 0.0;
    for a in 0..dim {
        for b in 0..dim {
            deviation = deviation.max((second_derivs[(a, b)] - second_derivs[(b, a)]).abs());
        }
    }
    if deviation > 1e-10 {
        return Err(Error::NotSymmetric { deviation });
    }
    Ok(complex_hessian_unchecked(second_derivs))
}

pub(crate) fn complex_hessian_unchecked(h: &DMatrix<f64>) -> HermitianMatrix {
    let n = h.nrows() / 2;
    let entries = DMatrix::from_fn(n, n, |j, k| {
        let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
        Complex64::new(
            0.25 * (h[(xj, xk)] + h[(yj, yk)]),
            0.25 * (h[(xj, yk)] - h[(yj, xk)]),
        )
    });
    HermitianMatrix::symmetrised(entries)
}

/// Adjoint of [`complex_hessian_point`]: given the Hermitian derivative matrix
/// `N` of a function of `a = (a_{j k̄})` (so that `dF = Re Σ_{jk} N_{jk} da_{jk}`),
/// returns the symmetric real `W` with `dF = Σ_{ab} W_{ab} dH_{ab}`.
pub(crate) fn real_hessian_weights(grad: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = grad.nrows();
    let mut w = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            let coef = grad[(j, k)];
            let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
            w[(xj, xk)] += 0.25 * coef.re;
            w[(yj, yk)] += 0.25 * coef.re;
            w[(xj, yk)] -= 0.25 * coef.im;
            w[(yj, xk)] += 0.25 * coef.im;
        }
    }
    let wt = w.transpose();
    (w + wt).scale(0.5)
}
