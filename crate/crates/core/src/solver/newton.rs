//! Damped Newton iteration for the discrete equation
//! `F_m[χ + i∂∂̄u] = w·G(z, u) + (1 - w)·B(z, u)` at the unknown nodes, with
//! Dirichlet data on boundary nodes.
//!
//! The residual is taken in logarithmic form, `log F - log(wG + (1-w)B)`, which
//! turns the exponential penalty right-hand sides into affine functions of `u`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fm::{diagonal_gradient, fm_value_from_spectrum, transport_gradient};
use crate::grid::{GridDomain, MetricField, NodeTag, Stencil};
use crate::hermitian::{
    complex_hessian_unchecked, real_hessian_weights, relative_eigenvalues, HermitianMatrix,
};

use super::linear::{gmres, CsrMatrix};
use super::rhs::{RightHandSide, EXPONENT_CAP};

/// The homotopy term `B(z, u)` blended in with weight `1 - w`.
pub(crate) enum PathBase {
    None,
    /// A fixed value per node.
    Fixed(Vec<f64>),
    /// `level(z)·e^{u - anchor}`.
    Exponential {
        level: Vec<f64>,
        anchor: f64,
    },
}

impl PathBase {
    fn eval(&self, node: usize, u: f64) -> (f64, f64) {
        match self {
            PathBase::None => (0.0, 0.0),
            PathBase::Fixed(values) => (values[node], 0.0),
            PathBase::Exponential { level, anchor } => {
                let e = level[node] * (u - anchor).min(EXPONENT_CAP).exp();
                (e, e)
            }
        }
    }
}

pub(crate) struct Problem<'a> {
    pub g: &'a MetricField,
    pub m: usize,
    pub background: Option<&'a HermitianMatrix>,
    pub rhs: &'a dyn RightHandSide,
    pub weight: f64,
    pub base: &'a PathBase,
    /// Dirichlet targets indexed by node; only boundary entries are read.
    pub boundary: Option<&'a [f64]>,
}

/// Node bookkeeping shared by every Newton solve on a grid.
pub(crate) struct Workspace {
    pub spacing: f64,
    pub unknowns: Vec<usize>,
    pub position: Vec<usize>,
    pub stencils: Vec<Stencil>,
    pub coords: Vec<Vec<f64>>,
    pub boundary_nodes: Vec<usize>,
}

impl Workspace {
    pub fn new(domain: &GridDomain) -> Result<Self> {
        let unknowns = domain.interior_nodes();
        if unknowns.is_empty() {
            return Err(Error::InvalidGrid("grid has no interior nodes".into()));
        }
        let mut position = vec![usize::MAX; domain.num_nodes()];
        for (k, &node) in unknowns.iter().enumerate() {
            position[node] = k;
        }
        let stencils = unknowns
            .iter()
            .map(|&node| {
                domain
                    .usable_stencil(node)
                    .ok_or(Error::StencilOutOfDomain { node })
            })
            .collect::<Result<Vec<_>>>()?;
        let coords = unknowns.iter().map(|&node| domain.coords(node)).collect();
        Ok(Self {
            spacing: domain.spacing(),
            unknowns,
            position,
            stencils,
            coords,
            boundary_nodes: domain.nodes_with(NodeTag::Boundary),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub cone_floor: f64,
    pub min_step: f64,
    pub linear_tolerance: f64,
    pub restart: usize,
    pub linear_max_iterations: usize,
}

pub(crate) struct NewtonResult {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub min_margin: f64,
}

enum NodeEval {
    Value {
        residual: f64,
        margin: f64,
        row: Option<Vec<(usize, f64)>>,
    },
    Cone(f64),
    Ill(String),
}

struct Evaluation {
    residual: Vec<f64>,
    min_margin: f64,
    rows: Option<Vec<Vec<(usize, f64)>>>,
}

enum Outcome {
    Ok(Evaluation),
    Cone(f64),
}

impl Problem<'_> {
    fn eval_node(
        &self,
        ws: &Workspace,
        k: usize,
        values: &[f64],
        floor: f64,
        jacobian: bool,
    ) -> NodeEval {
        let stencil = &ws.stencils[k];
        let node = stencil.center;
        let h = ws.spacing;
        let real = stencil.real_hessian(values, h);
        let hess = complex_hessian_unchecked(&real);
        let form = match self.background {
            Some(chi) => chi.add(&hess).expect("dimensions checked"),
            None => hess,
        };
        let spectrum = relative_eigenvalues(&form, self.g.at(node)).expect("dimensions checked");
        let margin = spectrum.min_msum(self.m);
        if margin.is_nan() || margin <= floor {
            return NodeEval::Cone(margin);
        }
        let fm = match fm_value_from_spectrum(&spectrum.lambdas, self.m) {
            Ok(v) => v,
            Err(_) => return NodeEval::Cone(margin),
        };
        let u = values[node];
        let (gv, dg) = self.rhs.eval(node, &ws.coords[k], u);
        if !(gv > 0.0 && gv.is_finite()) {
            return NodeEval::Ill(format!("G = {gv} at u = {u}"));
        }
        // a zero derivative is accepted: it is what exp underflow produces
        if !dg.is_finite() || dg < 0.0 {
            return NodeEval::Ill(format!("dG/dt = {dg} at u = {u}"));
        }
        let (bv, db) = self.base.eval(node, u);
        let w = self.weight;
        let target = w * gv + (1.0 - w) * bv;
        let residual = fm.value.ln() - target.ln();
        let row = jacobian.then(|| {
            let diag = diagonal_gradient(spectrum.dim(), self.m, &fm);
            let weights = real_hessian_weights(&transport_gradient(&spectrum, &diag)) / fm.value;
            let h2 = h * h;
            let mut row = Vec::with_capacity(1 + 2 * stencil.axis.len() + 4 * stencil.cross.len());
            let mut centre = -(w * dg + (1.0 - w) * db) / target;
            for (a, [p, q]) in stencil.axis.iter().enumerate() {
                let c = weights[(a, a)] / h2;
                centre -= 2.0 * c;
                row.push((*p, c));
                row.push((*q, c));
            }
            let dims = stencil.axis.len();
            let mut k = 0;
            for a in 0..dims {
                for b in a + 1..dims {
                    let c = weights[(a, b)] / (2.0 * h2);
                    let [pp, pm, mp, mm] = stencil.cross[k];
                    row.extend([(pp, c), (pm, -c), (mp, -c), (mm, c)]);
                    k += 1;
                }
            }
            row.push((node, centre));
            row
        });
        NodeEval::Value {
            residual,
            margin,
            row,
        }
    }

    fn evaluate(
        &self,
        ws: &Workspace,
        values: &[f64],
        floor: f64,
        jacobian: bool,
    ) -> Result<Outcome> {
        let evals: Vec<NodeEval> = (0..ws.unknowns.len())
            .into_par_iter()
            .map(|k| self.eval_node(ws, k, values, floor, jacobian))
            .collect();
        let mut residual = Vec::with_capacity(evals.len());
        let mut rows = jacobian.then(|| Vec::with_capacity(evals.len()));
        let mut min_margin = f64::INFINITY;
        let mut cone: Option<f64> = None;
        for (k, e) in evals.into_iter().enumerate() {
            match e {
                NodeEval::Value {
                    residual: r,
                    margin,
                    row,
                } => {
                    residual.push(r);
                    min_margin = min_margin.min(margin);
                    if let (Some(rows), Some(row)) = (rows.as_mut(), row) {
                        rows.push(row);
                    }
                }
                NodeEval::Cone(margin) => {
                    cone = Some(cone.map_or(margin, |c: f64| c.min(margin)));
                }
                NodeEval::Ill(reason) => {
                    return Err(Error::IllPosedRhs {
                        node: ws.unknowns[k],
                        reason,
                    })
                }
            }
        }
        if let Some(margin) = cone {
            return Ok(Outcome::Cone(margin));
        }
        Ok(Outcome::Ok(Evaluation {
            residual,
            min_margin,
            rows,
        }))
    }

    fn mismatch(&self, ws: &Workspace, values: &[f64]) -> Vec<f64> {
        match self.boundary {
            Some(b) => ws
                .boundary_nodes
                .iter()
                .map(|&node| b[node] - values[node])
                .collect(),
            None => Vec::new(),
        }
    }

    /// Runs Newton from `values` until the max-norm residual is below tolerance
    /// and the boundary data is matched exactly.
    pub fn newton(
        &self,
        ws: &Workspace,
        mut values: Vec<f64>,
        s: &NewtonSettings,
    ) -> Result<NewtonResult> {
        let mut eval = match self.evaluate(ws, &values, s.cone_floor, true)? {
            Outcome::Ok(e) => e,
            Outcome::Cone(margin) => {
                return Err(Error::ConeEscape {
                    iteration: 0,
                    margin,
                })
            }
        };
        for iteration in 0..=s.max_iterations {
            let mismatch = self.mismatch(ws, &values);
            let res_max = eval.residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
            let mis_max = mismatch.iter().fold(0.0f64, |a, r| a.max(r.abs()));
            if res_max <= s.tolerance && mis_max == 0.0 {
                return Ok(NewtonResult {
                    values,
                    iterations: iteration,
                    residual: res_max,
                    min_margin: eval.min_margin,
                });
            }
            if iteration == s.max_iterations || !res_max.is_finite() {
                return Err(Error::NewtonDiverged {
                    iterations: iteration,
                    residual: res_max,
                });
            }
            let delta = self.newton_step(ws, &eval, &mismatch, s)?;
            let merit0 = merit(&eval.residual, &mismatch);

            let mut alpha = 1.0;
            let mut accepted: Option<Vec<f64>> = None;
            let mut best: Option<(f64, Vec<f64>)> = None;
            let mut last_margin = f64::NAN;
            let mut any_in_cone = false;
            while alpha >= s.min_step {
                let trial = self.step(ws, &values, &delta, &mismatch, alpha);
                match self.evaluate(ws, &trial, s.cone_floor, false)? {
                    Outcome::Cone(margin) => last_margin = margin,
                    Outcome::Ok(e) => {
                        any_in_cone = true;
                        let value = merit(&e.residual, &self.mismatch(ws, &trial));
                        if value <= (1.0 - 1e-4 * alpha) * merit0 {
                            accepted = Some(trial);
                            break;
                        }
                        if value.is_finite() && best.as_ref().is_none_or(|(b, _)| value < *b) {
                            best = Some((value, trial));
                        }
                    }
                }
                alpha *= 0.5;
            }
            let next = match accepted {
                Some(v) => v,
                None if !any_in_cone => {
                    return Err(Error::ConeEscape {
                        iteration: iteration + 1,
                        margin: last_margin,
                    })
                }
                None => match best {
                    Some((value, v)) if value < merit0 => v,
                    _ => {
                        return Err(Error::NewtonDiverged {
                            iterations: iteration + 1,
                            residual: res_max,
                        })
                    }
                },
            };
            values = next;
            eval = match self.evaluate(ws, &values, s.cone_floor, true)? {
                Outcome::Ok(e) => e,
                Outcome::Cone(margin) => {
                    return Err(Error::ConeEscape {
                        iteration: iteration + 1,
                        margin,
                    })
                }
            };
        }
        unreachable!("loop returns on its last iteration")
    }

    fn newton_step(
        &self,
        ws: &Workspace,
        eval: &Evaluation,
        mismatch: &[f64],
        s: &NewtonSettings,
    ) -> Result<Vec<f64>> {
        let rows = eval.rows.as_ref().expect("jacobian requested");
        let mut boundary_shift = vec![0.0; ws.position.len()];
        if self.boundary.is_some() {
            for (&node, &d) in ws.boundary_nodes.iter().zip(mismatch) {
                boundary_shift[node] = d;
            }
        }
        let mut rhs = Vec::with_capacity(rows.len());
        let mut matrix_rows = Vec::with_capacity(rows.len());
        for (k, row) in rows.iter().enumerate() {
            let mut b = -eval.residual[k];
            let mut entries = Vec::with_capacity(row.len());
            for &(node, c) in row {
                let col = ws.position[node];
                if col == usize::MAX {
                    b -= c * boundary_shift[node];
                } else {
                    entries.push((col, c));
                }
            }
            rhs.push(b);
            matrix_rows.push(entries);
        }
        let matrix = CsrMatrix::from_rows(matrix_rows);
        gmres(
            &matrix,
            &rhs,
            s.linear_tolerance,
            s.restart,
            s.linear_max_iterations,
        )
    }

    fn step(
        &self,
        ws: &Workspace,
        values: &[f64],
        delta: &[f64],
        mismatch: &[f64],
        alpha: f64,
    ) -> Vec<f64> {
        let mut trial = values.to_vec();
        for (&node, d) in ws.unknowns.iter().zip(delta) {
            trial[node] += alpha * d;
        }
        if let Some(b) = self.boundary {
            for (&node, d) in ws.boundary_nodes.iter().zip(mismatch) {
                trial[node] = if alpha == 1.0 {
                    b[node]
                } else {
                    trial[node] + alpha * d
                };
            }
        }
        trial
    }

    /// Max-norm residual and cone margin at `values`, or the cone violation.
    pub fn residual(
        &self,
        ws: &Workspace,
        values: &[f64],
        floor: f64,
    ) -> Result<std::result::Result<(f64, f64), f64>> {
        Ok(match self.evaluate(ws, values, floor, false)? {
            Outcome::Ok(e) => Ok((
                e.residual.iter().fold(0.0f64, |a, r| a.max(r.abs())),
                e.min_margin,
            )),
            Outcome::Cone(margin) => Err(margin),
        })
    }
}

fn merit(residual: &[f64], mismatch: &[f64]) -> f64 {
    residual
        .iter()
        .chain(mismatch)
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt()
}
