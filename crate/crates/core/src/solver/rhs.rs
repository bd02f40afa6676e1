//! Right-hand sides `G(z, t)` of `F_m[i∂∂̄u] = G(z, u)`.

use crate::grid::GridFunction;

/// Largest exponent passed to `exp` by the penalty right-hand sides.
pub const EXPONENT_CAP: f64 = 40.0;

/// A right-hand side `G(z, t)` with its derivative in `t`.
///
/// `node` is the grid index of `z`, so implementations may carry sampled data.
pub trait RightHandSide: Sync {
    /// Returns `(G(z, t), ∂G/∂t(z, t))`.
    fn eval(&self, node: usize, z: &[f64], t: f64) -> (f64, f64);
}

/// `G` given by a closure of `(z, t)`.
pub struct ClosureRhs<F>(pub F);

impl<F> RightHandSide for ClosureRhs<F>
where
    F: Fn(&[f64], f64) -> (f64, f64) + Sync,
{
    fn eval(&self, _node: usize, z: &[f64], t: f64) -> (f64, f64) {
        (self.0)(z, t)
    }
}

/// `G(z, t) = s(z) e^{t - r(z)}` with sampled scale `s` and reference `r`;
/// the solution of `F_m[i∂∂̄u] = G` is `r` whenever `s = F_m[i∂∂̄r]`.
pub struct ManufacturedRhs {
    pub scale: Vec<f64>,
    pub reference: Vec<f64>,
}

impl RightHandSide for ManufacturedRhs {
    fn eval(&self, node: usize, _z: &[f64], t: f64) -> (f64, f64) {
        let g = self.scale[node] * (t - self.reference[node]).min(EXPONENT_CAP).exp();
        (g, g)
    }
}

fn capped_exp(x: f64) -> f64 {
    x.min(EXPONENT_CAP).exp()
}

/// `G(z, t) = e^{β(t - f(z))} + 1/(2β)`.
pub struct PenaltyRhs {
    pub beta: f64,
    pub reference: Vec<f64>,
}

impl PenaltyRhs {
    pub fn new(beta: f64, reference: &GridFunction) -> Self {
        Self {
            beta,
            reference: reference.values().to_vec(),
        }
    }
}

impl RightHandSide for PenaltyRhs {
    fn eval(&self, node: usize, _z: &[f64], t: f64) -> (f64, f64) {
        let e = capped_exp(self.beta * (t - self.reference[node]));
        (e + 0.5 / self.beta, self.beta * e)
    }
}

/// `G(z, t) = e^{β(t - f(z))} F^j(z) + F_m[χ](z)/(2β)`.
pub struct TorusPenaltyRhs {
    pub beta: f64,
    pub reference: Vec<f64>,
    pub corridor: Vec<f64>,
    pub fm_chi: Vec<f64>,
}

impl RightHandSide for TorusPenaltyRhs {
    fn eval(&self, node: usize, _z: &[f64], t: f64) -> (f64, f64) {
        let e = capped_exp(self.beta * (t - self.reference[node])) * self.corridor[node];
        (e + self.fm_chi[node] / (2.0 * self.beta), self.beta * e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn penalty_values() {
        let rhs = PenaltyRhs {
            beta: 10.0,
            reference: vec![0.5],
        };
        let (g, dg) = rhs.eval(0, &[0.0, 0.0], 0.5);
        assert_relative_eq!(g, 1.05);
        assert_relative_eq!(dg, 10.0);
        let (g, _) = rhs.eval(0, &[0.0, 0.0], 1e6);
        assert_relative_eq!(g, EXPONENT_CAP.exp() + 0.05);
    }

    #[test]
    fn derivatives_match_differences() {
        let rhs = TorusPenaltyRhs {
            beta: 3.0,
            reference: vec![-1.0],
            corridor: vec![1.7],
            fm_chi: vec![2.0],
        };
        let t = -0.8;
        let step = 1e-6;
        let (_, dg) = rhs.eval(0, &[], t);
        let fd = (rhs.eval(0, &[], t + step).0 - rhs.eval(0, &[], t - step).0) / (2.0 * step);
        assert_relative_eq!(dg, fd, max_relative = 1e-7);
        let manufactured = ManufacturedRhs {
            scale: vec![2.0],
            reference: vec![0.25],
        };
        assert_relative_eq!(manufactured.eval(0, &[], 0.25).0, 2.0);
    }
}
