//! Finite-difference solution of `F_m[i∂∂̄u] = G(z, u)` on ball grids with
//! Dirichlet data, and of `F_m[χ + i∂∂̄u] = G(z, u)` on flat tori, by damped
//! Newton iteration kept strictly inside the cone, optionally along a
//! continuity path.

mod linear;
mod newton;
pub mod rhs;

use serde::{Deserialize, Serialize};

use crate::cones::CONE_TOLERANCE;
use crate::error::{check_order, Error, Result};
use crate::fm::fm_value_from_spectrum;
use crate::grid::{GridDomain, GridFunction, GridKind, MetricField, NodeTag};
use crate::hermitian::{relative_eigenvalues, HermitianMatrix};

use newton::{NewtonSettings, PathBase, Problem, Workspace};
pub use rhs::{
    ClosureRhs, ManufacturedRhs, PenaltyRhs, RightHandSide, TorusPenaltyRhs, EXPONENT_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Walk the continuity path from the explicit subsolution (ball) or the
    /// constant solution of the blended equation (torus).
    ContinuityPath,
    /// Newton directly on the target equation from the default seed.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Max-norm residual at which Newton stops.
    pub tolerance: f64,
    /// Newton iterations allowed per path step.
    pub max_iterations: usize,
    /// Uniform steps of the continuity path.
    pub t_steps: usize,
    /// Minimal m-sum every iterate must keep at interior nodes.
    pub cone_floor: f64,
    /// Smallest damping factor tried before giving up.
    pub damping_min_step: f64,
    pub init: InitStrategy,
    /// Relative residual required of each linear solve.
    pub linear_tolerance: f64,
    pub gmres_restart: usize,
    pub linear_max_iterations: usize,
    /// Times a failing path step may be bisected.
    pub max_path_refinements: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 100,
            t_steps: 8,
            cone_floor: 1e-10,
            damping_min_step: 1.0 / (1u32 << 20) as f64,
            init: InitStrategy::ContinuityPath,
            linear_tolerance: 1e-10,
            gmres_restart: 50,
            linear_max_iterations: 5000,
            max_path_refinements: 8,
        }
    }
}

impl SolverConfig {
    fn newton_settings(&self) -> NewtonSettings {
        NewtonSettings {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            cone_floor: self.cone_floor,
            min_step: self.damping_min_step,
            linear_tolerance: self.linear_tolerance,
            restart: self.gmres_restart,
            linear_max_iterations: self.linear_max_iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.max_iterations > 0
            && self.t_steps > 0
            && self.cone_floor >= 0.0
            && self.damping_min_step > 0.0
            && self.damping_min_step <= 1.0
            && self.linear_tolerance > 0.0
            && self.gmres_restart > 0
            && self.linear_max_iterations > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "invalid solver configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: GridFunction,
    pub iterations: usize,
    /// Max-norm of `F_m - G` over the unknown nodes.
    pub final_residual: f64,
    /// Smallest m-sum of the discrete Hessian over the unknown nodes.
    pub min_cone_margin: f64,
    /// Interior supremum of `u` minus boundary supremum of the data (ball only).
    pub max_principle_gap: Option<f64>,
    /// Path steps taken, bisections included.
    pub path_steps: usize,
}

/// Scalar part of a [`SolveReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub final_residual: f64,
    pub min_cone_margin: f64,
    pub max_principle_gap: Option<f64>,
    pub path_steps: usize,
    pub nodes: usize,
    pub unknowns: usize,
}

impl SolveReport {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            iterations: self.iterations,
            final_residual: self.final_residual,
            min_cone_margin: self.min_cone_margin,
            max_principle_gap: self.max_principle_gap,
            path_steps: self.path_steps,
            nodes: self.solution.domain().num_nodes(),
            unknowns: self.solution.domain().interior_nodes().len(),
        }
    }
}

/// `sup_interior u − sup_boundary f`; non-positive values certify the
/// discrete maximum principle.
pub fn max_principle_check(report: &SolveReport, f: &GridFunction) -> f64 {
    report.solution.sup_interior() - f.sup_boundary()
}

fn check_ball_inputs(
    f: &GridFunction,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
) -> Result<f64> {
    cfg.validate()?;
    let domain = f.domain();
    let radius = match domain.kind() {
        GridKind::Ball { radius } => radius,
        GridKind::Torus => {
            return Err(Error::InvalidGrid(
                "Dirichlet problems need a ball grid".into(),
            ))
        }
    };
    check_order(m, domain.n())?;
    g.check(domain)?;
    for (node, (&v, &tag)) in f.values().iter().zip(domain.tags()).enumerate() {
        if tag != NodeTag::Exterior && !v.is_finite() {
            return Err(Error::IllPosedRhs {
                node,
                reason: format!("data value {v} is not finite"),
            });
        }
    }
    Ok(radius)
}

/// `f + C(|z|² − r²)` with `C` doubled from 1 until the discrete Hessian is
/// strictly inside the cone at every interior node, then doubled once more.
pub fn continuity_seed(
    f: &GridFunction,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
) -> Result<(GridFunction, f64)> {
    let radius = check_ball_inputs(f, g, m, cfg)?;
    let domain = f.domain();
    let ws = Workspace::new(domain)?;
    let bowl = GridFunction::from_fn(domain, |z| {
        z.iter().map(|x| x * x).sum::<f64>() - radius * radius
    });
    let probe = ClosureRhs(|_: &[f64], _: f64| (1.0, 1.0));
    let mut c = 1.0;
    for _ in 0..80 {
        let seed = f.zip_with(&bowl, |a, b| a + c * b)?;
        let problem = ball_problem(g, m, &probe, 1.0, &PathBase::None, None);
        if problem
            .residual(&ws, seed.values(), cfg.cone_floor)?
            .is_ok()
        {
            let c = 2.0 * c;
            return Ok((f.zip_with(&bowl, |a, b| a + c * b)?, c));
        }
        c *= 2.0;
    }
    Err(Error::ConeEscape {
        iteration: 0,
        margin: f64::NEG_INFINITY,
    })
}

fn ball_problem<'a>(
    g: &'a MetricField,
    m: usize,
    rhs: &'a dyn RightHandSide,
    weight: f64,
    base: &'a PathBase,
    boundary: Option<&'a [f64]>,
) -> Problem<'a> {
    Problem {
        g,
        m,
        background: None,
        rhs,
        weight,
        base,
        boundary,
    }
}

/// Dirichlet problem `F_m[i∂∂̄u] = G(z, u)` in the ball, `u = f` on boundary nodes.
pub fn solve_dirichlet(
    f: &GridFunction,
    rhs: &dyn RightHandSide,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    match cfg.init {
        InitStrategy::ContinuityPath => continuity_path(f, rhs, g, m, cfg, cfg.t_steps),
        InitStrategy::Direct => {
            let (seed, _) = continuity_seed(f, g, m, cfg)?;
            solve_dirichlet_from(f, rhs, g, m, cfg, &seed)
        }
    }
}

/// Direct Newton on the Dirichlet problem from a caller-supplied seed, which
/// must be strictly inside the cone at every interior node.
pub fn solve_dirichlet_from(
    f: &GridFunction,
    rhs: &dyn RightHandSide,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
    seed: &GridFunction,
) -> Result<SolveReport> {
    check_ball_inputs(f, g, m, cfg)?;
    f.check_same_grid(seed)?;
    let ws = Workspace::new(f.domain())?;
    let base = PathBase::None;
    let problem = ball_problem(g, m, rhs, 1.0, &base, Some(f.values()));
    let result = problem.newton(&ws, seed.values().to_vec(), &cfg.newton_settings())?;
    finish_ball(
        f,
        result.values,
        result.iterations,
        result.residual,
        result.min_margin,
        1,
    )
}

fn finish_ball(
    f: &GridFunction,
    values: Vec<f64>,
    iterations: usize,
    residual: f64,
    margin: f64,
    path_steps: usize,
) -> Result<SolveReport> {
    let solution = GridFunction::new(f.domain().clone(), values)?;
    let mut report = SolveReport {
        solution,
        iterations,
        final_residual: residual,
        min_cone_margin: margin,
        max_principle_gap: None,
        path_steps,
    };
    report.max_principle_gap = Some(max_principle_check(&report, f));
    Ok(report)
}

struct PathRun<'a> {
    ws: &'a Workspace,
    g: &'a MetricField,
    m: usize,
    background: Option<&'a HermitianMatrix>,
    rhs: &'a dyn RightHandSide,
    base: PathBase,
    /// Boundary data as a function of `t`, for ball problems.
    boundary_at: Option<Box<dyn Fn(f64) -> Vec<f64> + 'a>>,
    settings: NewtonSettings,
    max_refinements: usize,
    iterations: usize,
    steps: usize,
}

impl PathRun<'_> {
    fn solve_at(&mut self, t: f64, values: Vec<f64>) -> Result<newton::NewtonResult> {
        let boundary = self.boundary_at.as_ref().map(|b| b(t));
        let problem = Problem {
            g: self.g,
            m: self.m,
            background: self.background,
            rhs: self.rhs,
            weight: t,
            base: &self.base,
            boundary: boundary.as_deref(),
        };
        problem.newton(self.ws, values, &self.settings)
    }

    /// Advances from the solution at `t0` to `t1`, bisecting on failure.
    fn advance(
        &mut self,
        t0: f64,
        t1: f64,
        values: Vec<f64>,
        depth: usize,
    ) -> Result<newton::NewtonResult> {
        match self.solve_at(t1, values.clone()) {
            Ok(result) => {
                self.iterations += result.iterations;
                self.steps += 1;
                Ok(result)
            }
            Err(err @ (Error::IllPosedRhs { .. } | Error::PathStepFailed { .. })) => Err(err),
            Err(err) if depth >= self.max_refinements => Err(Error::PathStepFailed {
                t: t1,
                source: Box::new(err),
            }),
            Err(_) => {
                let mid = 0.5 * (t0 + t1);
                let half = self.advance(t0, mid, values, depth + 1)?;
                self.advance(mid, t1, half.values, depth + 1)
            }
        }
    }

    fn run(&mut self, seed: Vec<f64>, t_steps: usize) -> Result<newton::NewtonResult> {
        let mut values = seed;
        let mut last = None;
        for k in 1..=t_steps {
            let t0 = (k - 1) as f64 / t_steps as f64;
            let t1 = k as f64 / t_steps as f64;
            let result = self.advance(t0, t1, values, 0)?;
            values = result.values.clone();
            last = Some(result);
        }
        Ok(last.expect("at least one path step"))
    }
}

/// Solves `F_m[i∂∂̄u_t] = t·G(z, u_t) + (1 − t)·F_m[i∂∂̄u_0]` for `t = k/T`,
/// warm-starting each step, where `u_0 = f + C(|z|² − r²)`. Boundary data
/// moves from `u_0` to `f` along the path. Steps that fail are bisected.
pub fn continuity_path(
    f: &GridFunction,
    rhs: &dyn RightHandSide,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
    t_steps: usize,
) -> Result<SolveReport> {
    let radius = check_ball_inputs(f, g, m, cfg)?;
    let (seed, c) = continuity_seed(f, g, m, cfg)?;
    let domain = f.domain();
    let ws = Workspace::new(domain)?;
    let base_values = discrete_fm_values(&ws, &seed, None, g, m)?;
    let t_steps = t_steps.max(1);
    let fv = f.values().to_vec();
    let bowl: Vec<f64> = (0..domain.num_nodes())
        .map(|i| domain.norm_sq(i) - radius * radius)
        .collect();
    let mut run = PathRun {
        ws: &ws,
        g,
        m,
        background: None,
        rhs,
        base: PathBase::Fixed(base_values),
        boundary_at: Some(Box::new(move |t: f64| {
            fv.iter()
                .zip(&bowl)
                .map(|(a, b)| a + (1.0 - t) * c * b)
                .collect()
        })),
        settings: cfg.newton_settings(),
        max_refinements: cfg.max_path_refinements,
        iterations: 0,
        steps: 0,
    };
    let result = run.run(seed.into_values(), t_steps)?;
    let (iterations, steps) = (run.iterations, run.steps);
    finish_ball(
        f,
        result.values,
        iterations,
        result.residual,
        result.min_margin,
        steps,
    )
}

/// `F_m` of `χ + i∂∂̄u` at the unknown nodes, indexed by node.
fn discrete_fm_values(
    ws: &Workspace,
    u: &GridFunction,
    background: Option<&HermitianMatrix>,
    g: &MetricField,
    m: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; u.domain().num_nodes()];
    for stencil in &ws.stencils {
        let node = stencil.center;
        let hess = crate::hermitian::complex_hessian_unchecked(
            &stencil.real_hessian(u.values(), ws.spacing),
        );
        let form = match background {
            Some(chi) => chi.add(&hess)?,
            None => hess,
        };
        let lambdas = relative_eigenvalues(&form, g.at(node))?.lambdas;
        out[node] = fm_value_from_spectrum(&lambdas, m)?.value;
    }
    Ok(out)
}

/// Root in `t` of `G(z, t) = target`, by bracketing and bisection.
fn level_root(rhs: &dyn RightHandSide, node: usize, z: &[f64], target: f64) -> Result<f64> {
    let ill = |reason: String| Error::IllPosedRhs { node, reason };
    let g = |t: f64| rhs.eval(node, z, t).0;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    while g(hi) < target {
        hi = 2.0 * hi + 1.0;
        if hi > 1e6 {
            return Err(ill(format!("G stays below {target}")));
        }
    }
    while g(lo) > target {
        lo = 2.0 * lo - 1.0;
        if lo < -1e6 {
            return Err(ill(format!("G stays above {target}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_torus_inputs(
    domain: &GridDomain,
    chi: &HermitianMatrix,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !domain.is_torus() {
        return Err(Error::InvalidGrid(
            "periodic problems need a torus grid".into(),
        ));
    }
    check_order(m, domain.n())?;
    g.check(domain)?;
    if chi.dim() != domain.n() {
        return Err(Error::DimensionMismatch {
            expected: domain.n(),
            got: chi.dim(),
        });
    }
    let mut fm_chi = Vec::with_capacity(domain.num_nodes());
    for node in 0..domain.num_nodes() {
        let lambdas = relative_eigenvalues(chi, g.at(node))?.lambdas;
        let margin: f64 = lambdas[..m].iter().sum();
        if margin <= CONE_TOLERANCE {
            return Err(Error::ChiNotPositive { margin });
        }
        fm_chi.push(fm_value_from_spectrum(&lambdas, m)?.value);
    }
    Ok(fm_chi)
}

/// The constant `c` that is the largest nodal root of `G(z, c) = F_m[χ](z)`.
/// The constant function `c` is a supersolution of the periodic problem.
pub fn torus_seed_level(
    domain: &GridDomain,
    chi: &HermitianMatrix,
    rhs: &dyn RightHandSide,
    g: &MetricField,
    m: usize,
) -> Result<f64> {
    let fm_chi = check_torus_inputs(domain, chi, g, m, &SolverConfig::default())?;
    torus_level(domain, rhs, &fm_chi, f64::max)
}

fn torus_level(
    domain: &GridDomain,
    rhs: &dyn RightHandSide,
    fm_chi: &[f64],
    pick: fn(f64, f64) -> f64,
) -> Result<f64> {
    let mut level: Option<f64> = None;
    for (node, &target) in fm_chi.iter().enumerate() {
        let root = level_root(rhs, node, &domain.coords(node), target)?;
        level = Some(level.map_or(root, |l| pick(l, root)));
    }
    Ok(level.expect("grid is not empty"))
}

/// Periodic problem `F_m[χ + i∂∂̄u] = G(z, u)` on a torus grid.
pub fn solve_torus(
    domain: &GridDomain,
    chi: &HermitianMatrix,
    rhs: &dyn RightHandSide,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let fm_chi = check_torus_inputs(domain, chi, g, m, cfg)?;
    let anchor = torus_level(domain, rhs, &fm_chi, f64::max)?;
    let seed = vec![anchor; domain.num_nodes()];
    match cfg.init {
        InitStrategy::Direct => torus_newton(domain, chi, rhs, g, m, cfg, seed),
        InitStrategy::ContinuityPath => {
            let ws = Workspace::new(domain)?;
            let mut run = PathRun {
                ws: &ws,
                g,
                m,
                background: Some(chi),
                rhs,
                base: PathBase::Exponential {
                    level: fm_chi,
                    anchor,
                },
                boundary_at: None,
                settings: cfg.newton_settings(),
                max_refinements: cfg.max_path_refinements,
                iterations: 0,
                steps: 0,
            };
            let result = run.run(seed, cfg.t_steps.max(1))?;
            Ok(SolveReport {
                solution: GridFunction::new(domain.clone(), result.values)?,
                iterations: run.iterations,
                final_residual: result.residual,
                min_cone_margin: result.min_margin,
                max_principle_gap: None,
                path_steps: run.steps,
            })
        }
    }
}

/// Direct Newton on the periodic problem from a caller-supplied seed.
pub fn solve_torus_from(
    chi: &HermitianMatrix,
    rhs: &dyn RightHandSide,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
    seed: &GridFunction,
) -> Result<SolveReport> {
    let domain = seed.domain();
    check_torus_inputs(domain, chi, g, m, cfg)?;
    torus_newton(domain, chi, rhs, g, m, cfg, seed.values().to_vec())
}

fn torus_newton(
    domain: &GridDomain,
    chi: &HermitianMatrix,
    rhs: &dyn RightHandSide,
    g: &MetricField,
    m: usize,
    cfg: &SolverConfig,
    seed: Vec<f64>,
) -> Result<SolveReport> {
    let ws = Workspace::new(domain)?;
    let base = PathBase::None;
    let problem = Problem {
        g,
        m,
        background: Some(chi),
        rhs,
        weight: 1.0,
        base: &base,
        boundary: None,
    };
    let result = problem.newton(&ws, seed, &cfg.newton_settings())?;
    Ok(SolveReport {
        solution: GridFunction::new(domain.clone(), result.values)?,
        iterations: result.iterations,
        final_residual: result.residual,
        min_cone_margin: result.min_margin,
        max_principle_gap: None,
        path_steps: 1,
    })
}
