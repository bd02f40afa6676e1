//! Sparse Newton systems: CSR storage, ILU(0) preconditioning and restarted GMRES.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone)]
pub(crate) struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().expect("entry exists") += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }
}

/// Incomplete LU factorisation with the sparsity pattern of the matrix.
pub(crate) struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.col_idx[k] == i {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return Err(Error::LinearSolveFailed {
                    iterations: 0,
                    residual: f64::NAN,
                });
            }
        }
        let mut position = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                position[lu.col_idx[k]] = k;
            }
            for k in start..end {
                let j = lu.col_idx[k];
                if j >= i {
                    break;
                }
                let pivot = lu.values[diag[j]];
                let factor = lu.values[k] / pivot;
                lu.values[k] = factor;
                for kk in diag[j] + 1..lu.row_ptr[j + 1] {
                    let p = position[lu.col_idx[kk]];
                    if p != usize::MAX {
                        lu.values[p] -= factor * lu.values[kk];
                    }
                }
            }
            for k in start..end {
                position[lu.col_idx[k]] = usize::MAX;
            }
            let d = lu.values[diag[i]];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::LinearSolveFailed {
                    iterations: 0,
                    residual: f64::NAN,
                });
            }
        }
        Ok(Self { lu, diag })
    }

    /// Solves `L U x = b` in place.
    pub fn apply(&self, x: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut acc = x[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                acc -= lu.values[k] * x[lu.col_idx[k]];
            }
            x[i] = acc;
        }
        for i in (0..lu.n).rev() {
            let mut acc = x[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                acc -= lu.values[k] * x[lu.col_idx[k]];
            }
            x[i] = acc / lu.values[self.diag[i]];
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Right-preconditioned restarted GMRES; returns `x` with `‖b - Ax‖ ≤ tol·‖b‖`.
pub(crate) fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iterations: usize,
) -> Result<Vec<f64>> {
    let n = a.n;
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let precond = Ilu0::new(a)?;
    let restart = restart.max(1).min(n.max(1));
    let mut total = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        a.matvec(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm(&r);
        if beta <= tol * b_norm {
            return Ok(x);
        }
        if total >= max_iterations {
            return Err(Error::LinearSolveFailed {
                iterations: total,
                residual: beta / b_norm,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut steps = 0;
        for j in 0..restart {
            z.copy_from_slice(&basis[j]);
            precond.apply(&mut z);
            a.matvec(&z, &mut w);
            for (i, v) in basis.iter().enumerate() {
                let h = dot(&w, v);
                hess[i][j] = h;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= h * vk;
                }
            }
            let h_next = norm(&w);
            hess[j + 1][j] = h_next;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                break;
            }
            cs[j] = hess[j][j] / denom;
            sn[j] = hess[j + 1][j] / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            steps = j + 1;
            total += 1;
            if g[j + 1].abs() <= 0.5 * tol * b_norm || h_next == 0.0 || total >= max_iterations {
                break;
            }
            basis.push(w.iter().map(|v| v / h_next).collect());
        }
        // back substitution for the Krylov coefficients
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut acc = g[i];
            for k in i + 1..steps {
                acc -= hess[i][k] * y[k];
            }
            y[i] = acc / hess[i][i];
        }
        let mut update = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, vk) in update.iter_mut().zip(v) {
                *u += yi * vk;
            }
        }
        precond.apply(&mut update);
        for (xi, u) in x.iter_mut().zip(&update) {
            *xi += u;
        }
        if steps == 0 {
            return Err(Error::LinearSolveFailed {
                iterations: total,
                residual: beta / b_norm,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut row = vec![(i, -2.0 - shift)];
                if i > 0 {
                    row.push((i - 1, 1.0));
                }
                if i + 1 < n {
                    row.push((i + 1, 1.2));
                }
                row
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_rows(vec![vec![(1, 1.0), (0, 2.0), (1, 3.0)], vec![(1, 1.0)]]);
        assert_eq!(a.col_idx, vec![0, 1, 1]);
        assert_eq!(a.values, vec![2.0, 4.0, 1.0]);
    }

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        let a = laplacian_1d(30, 0.1);
        let ilu = Ilu0::new(&a).unwrap();
        let x_true: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 30];
        a.matvec(&x_true, &mut b);
        ilu.apply(&mut b);
        for (x, y) in b.iter().zip(&x_true) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 200;
        let rows = (0..n)
            .map(|i| {
                let mut row = vec![(i, -4.0)];
                for (j, v) in [(i + 1, 1.3), (i + 20, 0.7), (i + 7, -0.4)] {
                    if j < n {
                        row.push((j, v));
                    }
                }
                for (j, v) in [(1usize, 0.9), (20, 1.1)] {
                    if i >= j {
                        row.push((i - j, v));
                    }
                }
                row
            })
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x_true, &mut b);
        let x = gmres(&a, &b, 1e-12, 30, 1000).unwrap();
        let err = x
            .iter()
            .zip(&x_true)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "err {err}");
    }
}
