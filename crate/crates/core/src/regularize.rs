//! Decreasing approximation of m-subharmonic targets by strictly m-subharmonic
//! grid functions: the local pipeline (Dirichlet penalty problems on a ball)
//! and the global one (penalised equations on a flat torus).
//!
//! Both pipelines solve only the indices picked by greedy selection; the
//! selection uses the a priori envelopes, which do not need the solution.

use std::f64::consts::E;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones::CONE_TOLERANCE;
use crate::error::{check_order, Error, Result};
use crate::fm::fm_value;
use crate::grid::{
    cone_field, cone_field_with_background, fm_field, fm_field_with_background, min_cone_margin,
};
use crate::grid::{FieldSample, GridDomain, GridFunction, GridKind, MetricField, NodeTag};
use crate::hermitian::HermitianMatrix;
use crate::solver::{solve_dirichlet, solve_torus, PenaltyRhs, SolverConfig, TorusPenaltyRhs};

/// Slack on the weak inequalities of the pipelines.
pub const GAP_TOLERANCE: f64 = 1e-8;
/// Largest β the default schedules produce.
pub const BETA_CAP: f64 = 1e6;
/// Sup-convolution radius, in cells, of the first approximant.
pub const MAX_SMOOTHING_RADIUS: usize = 3;
/// Cone margin below which a sampled target is rejected.
const ADMISSIBLE_MARGIN: f64 = -1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizationConfig {
    pub solver: SolverConfig,
    /// Number of iterates the pipeline must emit.
    pub iterates: usize,
    /// Largest acceptable final sup-deviation.
    pub convergence_target: f64,
    /// `-inf` (and anything lower) in a target is replaced by this value.
    pub clip_floor: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            iterates: 3,
            convergence_target: 1.0,
            clip_floor: -1e6,
        }
    }
}

/// Upper approximants, penalty parameters and the constants the envelopes need.
#[derive(Debug, Clone)]
pub struct ApproximationSchedule {
    pub f_sequence: Vec<GridFunction>,
    pub beta_schedule: Vec<f64>,
    /// `c_j` (local) or `C_j` (global).
    pub c_constants: Vec<f64>,
    /// Subsolution constant `C` (local only; 0 on the torus).
    pub subsolution_constant: f64,
    /// Ball radius (0 on the torus).
    pub radius: f64,
}

/// Nodes carrying data: everything except the exterior of a ball.
fn active(domain: &GridDomain) -> Vec<usize> {
    (0..domain.num_nodes())
        .filter(|&i| domain.tag(i) != NodeTag::Exterior)
        .collect()
}

fn max_over(nodes: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    nodes
        .iter()
        .map(|&i| f(i))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn clip(target: &GridFunction, floor: f64) -> GridFunction {
    target.map(|v| if v.is_nan() { v } else { v.max(floor) })
}

/// Integer offsets of Euclidean length at most `radius` cells.
fn ball_offsets(dims: usize, radius: usize) -> Vec<Vec<(usize, isize)>> {
    let r = radius as isize;
    let mut out = Vec::new();
    let mut current = vec![-r; dims];
    loop {
        if current.iter().map(|c| c * c).sum::<isize>() <= r * r {
            out.push(
                current
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| d != 0)
                    .map(|(a, &d)| (a, d))
                    .collect(),
            );
        }
        let mut axis = 0;
        loop {
            if axis == dims {
                return out;
            }
            if current[axis] < r {
                current[axis] += 1;
                break;
            }
            current[axis] = -r;
            axis += 1;
        }
    }
}

/// Nonincreasing upper approximants `f_j ≥ target`, `j = 1..=count`.
///
/// `f_j = max(S_j target, -clip_j) + η_j`, where `S_j` is the sup over a grid
/// ball of `max(3 - (j-1), 0)` cells, `η_j = 4^{-j}·2` and `clip_j = 8·2^j`.
/// Each ingredient is nodewise nonincreasing in `j`, and `f_j` reaches
/// `max(target, -clip_j) + η_j` once the radius has shrunk to zero.
pub fn upper_smooth_sequence(target: &GridFunction, count: usize) -> Result<Vec<GridFunction>> {
    let domain = target.domain();
    let nodes = active(domain);
    if nodes.iter().all(|&i| target.value(i) == f64::NEG_INFINITY) {
        return Err(Error::TargetIdenticallyNegInfinite);
    }
    if let Some(&i) = nodes
        .iter()
        .find(|&&i| target.value(i).is_nan() || target.value(i) == f64::INFINITY)
    {
        return Err(Error::TargetNotAdmissible(format!(
            "value {} at node {i}",
            target.value(i)
        )));
    }
    let dims = 2 * domain.n();
    let mut out = Vec::with_capacity(count);
    for j in 1..=count {
        let radius = (MAX_SMOOTHING_RADIUS + 1).saturating_sub(j);
        let eta = 2.0 * 0.25f64.powi(j as i32);
        let floor = -8.0 * 2f64.powi(j as i32);
        let offsets = ball_offsets(dims, radius);
        let values = (0..domain.num_nodes())
            .into_par_iter()
            .map(|node| {
                if domain.tag(node) == NodeTag::Exterior {
                    return target.value(node);
                }
                let sup = offsets
                    .iter()
                    .filter_map(|o| domain.shift(node, o))
                    .filter(|&nb| domain.tag(nb) != NodeTag::Exterior)
                    .map(|nb| target.value(nb))
                    .fold(f64::NEG_INFINITY, f64::max);
                sup.max(floor) + eta
            })
            .collect();
        out.push(GridFunction::new(domain.clone(), values)?);
    }
    Ok(out)
}

/// Subsolution constant: `C` doubled from 1 until `C·F_m[i∂∂̄|z|²] ≥ 1` at every
/// interior node.
pub fn subsolution_constant(domain: &GridDomain, g: &MetricField, m: usize) -> Result<f64> {
    let radius = domain
        .radius()
        .ok_or_else(|| Error::InvalidGrid("local pipeline needs a ball grid".into()))?;
    let bowl = GridFunction::from_fn(domain, |z| {
        z.iter().map(|x| x * x).sum::<f64>() - radius * radius
    });
    let field = fm_field(&bowl, g, m)?;
    let smallest = field
        .samples
        .iter()
        .filter_map(|s| match s {
            FieldSample::Value(v) => Some(*v),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min);
    let mut c = 1.0;
    while c * smallest < 1.0 {
        c *= 2.0;
        if !c.is_finite() {
            return Err(Error::ConeEscape {
                iteration: 0,
                margin: smallest,
            });
        }
    }
    Ok(c)
}

/// Corridor function with `F⁺ + 1/2 ≤ F^j ≤ F⁺ + 1`: one Jacobi pass over
/// `F⁺ + 3/4`, clamped back into the corridor.
pub fn corridor_function(
    f: &GridFunction,
    chi: &HermitianMatrix,
    g: &MetricField,
    m: usize,
) -> Result<GridFunction> {
    let field = fm_field_with_background(f, Some(chi), g, m)?;
    let plus: Vec<f64> = field
        .samples
        .iter()
        .map(|s| match s {
            FieldSample::Value(v) => *v,
            _ => 0.0,
        })
        .collect();
    let shifted = GridFunction::new(f.domain().clone(), plus.iter().map(|p| p + 0.75).collect())?;
    let smoothed = shifted.jacobi_smooth();
    let values = smoothed
        .values()
        .iter()
        .zip(&plus)
        .map(|(s, p)| s.clamp(p + 0.5, p + 1.0))
        .collect();
    GridFunction::new(f.domain().clone(), values)
}

fn fm_chi_field(
    domain: &GridDomain,
    chi: &HermitianMatrix,
    g: &MetricField,
    m: usize,
) -> Result<Vec<f64>> {
    (0..domain.num_nodes())
        .map(|node| match fm_value(chi, g.at(node), m) {
            Ok(v) if v.min_msum() > CONE_TOLERANCE => Ok(v.value),
            Ok(v) => Err(Error::ChiNotPositive {
                margin: v.min_msum(),
            }),
            Err(Error::OutsideCone { margin }) => Err(Error::ChiNotPositive { margin }),
            Err(e) => Err(e),
        })
        .collect()
}

/// Truncates a geometric schedule where it would exceed the cap, keeping one
/// capped entry when the first uncapped step already exceeds it.
fn capped_schedule(raw: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for b in raw {
        let b = b.min(BETA_CAP);
        if out.last().is_some_and(|&last| b <= last) {
            break;
        }
        out.push(b);
    }
    out
}

impl ApproximationSchedule {
    /// Local schedule with `β(j) = (e + 1)·max(1, log max c)·2^{j-1}` capped at [`BETA_CAP`].
    pub fn local(target: &GridFunction, g: &MetricField, m: usize, count: usize) -> Result<Self> {
        let base = Self::local_constants(target, g, m, count)?;
        let c_max = base.c_constants.iter().copied().fold(E, f64::max);
        let start = (E + 1.0) * c_max.ln().max(1.0);
        let betas = capped_schedule((0..count).map(|j| start * 2f64.powi(j as i32)));
        Ok(base.with_betas(betas))
    }

    /// Local schedule with caller-chosen `β(j)`; the length follows `betas`.
    pub fn local_with_betas(
        target: &GridFunction,
        g: &MetricField,
        m: usize,
        betas: Vec<f64>,
    ) -> Result<Self> {
        Ok(Self::local_constants(target, g, m, betas.len())?.with_betas(betas))
    }

    fn local_constants(
        target: &GridFunction,
        g: &MetricField,
        m: usize,
        count: usize,
    ) -> Result<Self> {
        let domain = target.domain();
        check_order(m, domain.n())?;
        let radius = domain
            .radius()
            .ok_or_else(|| Error::InvalidGrid("local pipeline needs a ball grid".into()))?;
        let f_sequence = upper_smooth_sequence(target, count)?;
        let c_constants = f_sequence
            .iter()
            .map(|f| Ok(fm_field(f, g, m)?.sup_value().max(E)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            f_sequence,
            beta_schedule: Vec::new(),
            c_constants,
            subsolution_constant: subsolution_constant(domain, g, m)?,
            radius,
        })
    }

    /// Global schedule with `β(j) = max(e + 1, exp(-inf f_j + C_j + 1))·2^j`,
    /// capped at [`BETA_CAP`], and `C_j = sup log(2F^j / F_m[χ])`.
    pub fn global(
        phi: &GridFunction,
        chi: &HermitianMatrix,
        g: &MetricField,
        m: usize,
        count: usize,
    ) -> Result<Self> {
        let domain = phi.domain();
        if !domain.is_torus() {
            return Err(Error::InvalidGrid(
                "global pipeline needs a torus grid".into(),
            ));
        }
        check_order(m, domain.n())?;
        let fm_chi = fm_chi_field(domain, chi, g, m)?;
        let f_sequence = upper_smooth_sequence(phi, count)?;
        let c_constants = f_sequence
            .iter()
            .map(|f| {
                let corridor = corridor_function(f, chi, g, m)?;
                Ok(corridor
                    .values()
                    .iter()
                    .zip(&fm_chi)
                    .map(|(c, x)| (2.0 * c / x).ln())
                    .fold(f64::NEG_INFINITY, f64::max))
            })
            .collect::<Result<Vec<_>>>()?;
        let betas = capped_schedule(f_sequence.iter().zip(&c_constants).enumerate().map(
            |(j, (f, c))| (E + 1.0).max((-f.inf() + c + 1.0).exp()) * 2f64.powi(j as i32 + 1),
        ));
        Ok(Self {
            f_sequence,
            beta_schedule: Vec::new(),
            c_constants,
            subsolution_constant: 0.0,
            radius: 0.0,
        }
        .with_betas(betas))
    }

    fn with_betas(mut self, betas: Vec<f64>) -> Self {
        let len = betas.len().min(self.f_sequence.len());
        self.f_sequence.truncate(len);
        self.c_constants.truncate(len);
        self.beta_schedule = betas;
        self.beta_schedule.truncate(len);
        self
    }

    pub fn len(&self) -> usize {
        self.beta_schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta_schedule.is_empty()
    }

    /// Checks the schedule against a (clipped) target.
    pub fn validate(&self, target: &GridFunction) -> Result<()> {
        let k = self.beta_schedule.len();
        if k == 0 || self.f_sequence.len() != k || self.c_constants.len() != k {
            return Err(Error::InvalidSchedule(format!(
                "lengths differ or are zero: {} approximants, {} betas, {} constants",
                self.f_sequence.len(),
                k,
                self.c_constants.len()
            )));
        }
        if let Some((j, b)) = self
            .beta_schedule
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > E && b.is_finite()))
        {
            return Err(Error::InvalidSchedule(format!(
                "beta[{j}] = {b} is not a finite number above e"
            )));
        }
        if let Some(j) = (1..k).find(|&j| self.beta_schedule[j] <= self.beta_schedule[j - 1]) {
            return Err(Error::ScheduleExhausted(format!(
                "beta is not strictly increasing at index {j} ({} after {}), so the correction terms cannot shrink",
                self.beta_schedule[j],
                self.beta_schedule[j - 1]
            )));
        }
        let nodes = active(target.domain());
        for (j, f) in self.f_sequence.iter().enumerate() {
            target.check_same_grid(f)?;
            let sup = max_over(&nodes, |i| f.value(i));
            if sup > -1.0 + 1e-12 {
                return Err(Error::InvalidSchedule(format!(
                    "sup f[{j}] = {sup} exceeds -1"
                )));
            }
            if let Some(&i) = nodes.iter().find(|&&i| f.value(i) < target.value(i)) {
                return Err(Error::InvalidSchedule(format!(
                    "f[{j}] lies below the target at node {i}"
                )));
            }
            if j > 0 {
                let prev = &self.f_sequence[j - 1];
                if let Some(&i) = nodes.iter().find(|&&i| f.value(i) > prev.value(i) + 1e-12) {
                    return Err(Error::InvalidSchedule(format!(
                        "f[{j}] exceeds f[{}] at node {i}",
                        j - 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// `log β / β`-type correction added to the penalty solution.
    fn correction(&self, j: usize, global: bool) -> f64 {
        let b = self.beta_schedule[j];
        if global {
            2.0 * b.ln() / b
        } else {
            2.0 * self.subsolution_constant * self.radius * self.radius / b + (2.0 * b).ln() / b
        }
    }

    /// Upper envelope of the `j`-th iterate, known before solving.
    fn envelope(&self, j: usize, global: bool) -> GridFunction {
        let b = self.beta_schedule[j];
        let shift = if global {
            self.correction(j, true)
        } else {
            self.correction(j, false) + self.c_constants[j].ln() / b
        };
        self.f_sequence[j].map(|v| v + shift)
    }
}

/// Bounds checked on one penalty solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveCheck {
    pub index: usize,
    pub beta: f64,
    pub iterations: usize,
    pub final_residual: f64,
    pub min_cone_margin: f64,
    /// Local: `max(u_j - f_j - log c_j/β)`. Global: `max(φ̃_j - f_j)`.
    pub upper_gap: f64,
    /// Local: `max(u - u_j - Cr²/β - log(2β)/β)`.
    /// Global: `max((1 - 1/β)φ - φ̃_j - 2 log β/β)`, required to be negative.
    pub lower_gap: f64,
    /// Global only: `max(φ - (1 - 1/β)φ)`.
    pub scale_gap: Option<f64>,
    /// Local only: interior sup of the solution minus boundary sup of `f_j`.
    pub max_principle_gap: Option<f64>,
    pub violations: Vec<String>,
}

impl SolveCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RegularizationResult {
    pub u_sequence: Vec<GridFunction>,
    /// Schedule index behind each iterate.
    pub indices: Vec<usize>,
    pub betas: Vec<f64>,
    /// `max_{k, node} u_{k+1} - u_k`.
    pub monotone_gap: f64,
    /// `max_{k, node} target - u_k`.
    pub lower_gap: f64,
    /// `sup |u_k - target|` over nodes where the target was not clipped.
    pub sup_deviation: Vec<f64>,
    /// Smallest m-sum of each iterate's Hessian (with `χ` on the torus).
    pub cone_margins: Vec<f64>,
    pub checks: Vec<SolveCheck>,
}

/// Scalar part of a [`RegularizationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSummary {
    pub indices: Vec<usize>,
    pub betas: Vec<f64>,
    pub monotone_gap: f64,
    pub lower_gap: f64,
    pub sup_deviation: Vec<f64>,
    pub cone_margins: Vec<f64>,
    pub checks: Vec<SolveCheck>,
}

impl RegularizationResult {
    pub fn summary(&self) -> RegularizationSummary {
        RegularizationSummary {
            indices: self.indices.clone(),
            betas: self.betas.clone(),
            monotone_gap: self.monotone_gap,
            lower_gap: self.lower_gap,
            sup_deviation: self.sup_deviation.clone(),
            cone_margins: self.cone_margins.clone(),
            checks: self.checks.clone(),
        }
    }

    /// Invariants every emitted sequence must satisfy.
    pub fn holds(&self) -> bool {
        self.monotone_gap <= GAP_TOLERANCE
            && self.lower_gap <= GAP_TOLERANCE
            && self.cone_margins.iter().all(|&c| c > 0.0)
            && self.checks.iter().all(SolveCheck::passed)
    }
}

/// Outcome of [`verify_monotone_convergence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub monotone_gap: f64,
    pub lower_gap: f64,
    pub sup_deviation: Vec<f64>,
    /// First `(iterate, node)` where `u_{k+1} > u_k + 1e-8`.
    pub monotone_violation: Option<(usize, usize)>,
    /// First `(iterate, node)` where `u_k < target - 1e-8`.
    pub lower_violation: Option<(usize, usize)>,
    pub deviations_nonincreasing: bool,
    pub passed: bool,
}

/// Gaps and sup-deviations of a sequence against its target. Nodes where the
/// target is `-inf` or below `clip_floor` count for the gaps only.
pub fn verify_monotone_convergence(
    u_sequence: &[GridFunction],
    target: &GridFunction,
    convergence_target: f64,
) -> Result<ConvergenceReport> {
    verify_with_floor(
        u_sequence,
        target,
        convergence_target,
        RegularizationConfig::default().clip_floor,
    )
}

fn verify_with_floor(
    u_sequence: &[GridFunction],
    target: &GridFunction,
    convergence_target: f64,
    clip_floor: f64,
) -> Result<ConvergenceReport> {
    let nodes = active(target.domain());
    let finite: Vec<usize> = nodes
        .iter()
        .copied()
        .filter(|&i| target.value(i) > clip_floor)
        .collect();
    let mut monotone_gap = f64::NEG_INFINITY;
    let mut lower_gap = f64::NEG_INFINITY;
    let mut monotone_violation = None;
    let mut lower_violation = None;
    let mut sup_deviation = Vec::with_capacity(u_sequence.len());
    for (k, u) in u_sequence.iter().enumerate() {
        target.check_same_grid(u)?;
        for &i in &nodes {
            let t = target.value(i).max(clip_floor);
            let gap = t - u.value(i);
            lower_gap = lower_gap.max(gap);
            if gap > GAP_TOLERANCE && lower_violation.is_none() {
                lower_violation = Some((k, i));
            }
            if k > 0 {
                let step = u.value(i) - u_sequence[k - 1].value(i);
                monotone_gap = monotone_gap.max(step);
                if step > GAP_TOLERANCE && monotone_violation.is_none() {
                    monotone_violation = Some((k, i));
                }
            }
        }
        sup_deviation.push(max_over(&finite, |i| (u.value(i) - target.value(i)).abs()));
    }
    let deviations_nonincreasing = sup_deviation
        .windows(2)
        .all(|w| w[1] <= w[0] + GAP_TOLERANCE);
    let converged = sup_deviation
        .last()
        .is_some_and(|&d| d <= convergence_target);
    let passed = monotone_gap <= GAP_TOLERANCE
        && lower_gap <= GAP_TOLERANCE
        && deviations_nonincreasing
        && converged;
    Ok(ConvergenceReport {
        monotone_gap,
        lower_gap,
        sup_deviation,
        monotone_violation,
        lower_violation,
        deviations_nonincreasing,
        passed,
    })
}

/// First index after `after` whose envelope lies below `current` at every active node.
fn select(
    schedule: &ApproximationSchedule,
    after: usize,
    current: &GridFunction,
    nodes: &[usize],
    global: bool,
) -> Option<usize> {
    (after + 1..schedule.len()).find(|&j| {
        let env = schedule.envelope(j, global);
        nodes.iter().all(|&i| env.value(i) <= current.value(i))
    })
}

struct Iterate {
    value: GridFunction,
    cone_margin: f64,
    check: SolveCheck,
}

fn run_pipeline(
    target: &GridFunction,
    schedule: &ApproximationSchedule,
    cfg: &RegularizationConfig,
    global: bool,
    mut solve: impl FnMut(usize) -> Result<Iterate>,
) -> Result<RegularizationResult> {
    if cfg.iterates == 0 {
        return Err(Error::InvalidSchedule(
            "at least one iterate is required".into(),
        ));
    }
    let nodes = active(target.domain());
    let mut indices = vec![0];
    let first = solve(0)?;
    let mut u_sequence = vec![first.value];
    let mut cone_margins = vec![first.cone_margin];
    let mut checks = vec![first.check];
    while u_sequence.len() < cfg.iterates {
        let last = *indices.last().expect("nonempty");
        let j = select(schedule, last, u_sequence.last().expect("nonempty"), &nodes, global).ok_or_else(|| {
            Error::ScheduleExhausted(format!(
                "no index after {last} has its envelope below iterate {} ({} of {} iterates built); extend the beta schedule",
                u_sequence.len(),
                u_sequence.len(),
                cfg.iterates
            ))
        })?;
        let next = solve(j)?;
        indices.push(j);
        u_sequence.push(next.value);
        cone_margins.push(next.cone_margin);
        checks.push(next.check);
    }
    let report = verify_with_floor(&u_sequence, target, cfg.convergence_target, cfg.clip_floor)?;
    Ok(RegularizationResult {
        betas: indices.iter().map(|&j| schedule.beta_schedule[j]).collect(),
        indices,
        monotone_gap: report.monotone_gap,
        lower_gap: report.lower_gap,
        sup_deviation: report.sup_deviation,
        cone_margins,
        checks,
        u_sequence,
    })
}

/// Local pipeline on a ball: Dirichlet penalty problems with data `f_j`,
/// shifted iterates `û_j = u_j + 2Cr²/β + log(2β)/β`, greedy selection.
pub fn local_regularize(
    u: &GridFunction,
    g: &MetricField,
    m: usize,
    schedule: &ApproximationSchedule,
    cfg: &RegularizationConfig,
) -> Result<RegularizationResult> {
    let domain = u.domain();
    if !matches!(domain.kind(), GridKind::Ball { .. }) {
        return Err(Error::InvalidGrid(
            "local pipeline needs a ball grid".into(),
        ));
    }
    check_order(m, domain.n())?;
    let target = clip(u, cfg.clip_floor);
    let nodes = active(domain);
    let sup = max_over(&nodes, |i| target.value(i));
    if sup > -2.0 + 1e-12 {
        return Err(Error::TargetNotAdmissible(format!(
            "sup u = {sup} exceeds -2"
        )));
    }
    let margin = min_cone_margin(&cone_field(&target, g, m)?);
    if margin < ADMISSIBLE_MARGIN {
        return Err(Error::TargetNotAdmissible(format!(
            "discrete Hessian leaves the cone (margin {margin:e})"
        )));
    }
    schedule.validate(&target)?;
    let (c, r) = (schedule.subsolution_constant, schedule.radius);
    run_pipeline(&target, schedule, cfg, false, |j| {
        let beta = schedule.beta_schedule[j];
        let f = &schedule.f_sequence[j];
        let rhs = PenaltyRhs::new(beta, f);
        let report =
            solve_dirichlet(f, &rhs, g, m, &cfg.solver).map_err(|e| Error::DirichletFailure {
                index: j,
                source: Box::new(e),
            })?;
        let v = &report.solution;
        let log_c = schedule.c_constants[j].ln();
        let upper_gap = max_over(&nodes, |i| v.value(i) - f.value(i) - log_c / beta);
        let lower_gap = max_over(&nodes, |i| {
            target.value(i) - v.value(i) - c * r * r / beta - (2.0 * beta).ln() / beta
        });
        let mut violations = Vec::new();
        if upper_gap > GAP_TOLERANCE {
            violations.push(format!("upper bound violated by {upper_gap:e}"));
        }
        if lower_gap > GAP_TOLERANCE {
            violations.push(format!("lower bound violated by {lower_gap:e}"));
        }
        let shift = schedule.correction(j, false);
        Ok(Iterate {
            value: v.map(|x| x + shift),
            cone_margin: report.min_cone_margin,
            check: SolveCheck {
                index: j,
                beta,
                iterations: report.iterations,
                final_residual: report.final_residual,
                min_cone_margin: report.min_cone_margin,
                upper_gap,
                lower_gap,
                scale_gap: None,
                max_principle_gap: report.max_principle_gap,
                violations,
            },
        })
    })
}

/// Global pipeline on a flat torus: penalised equations
/// `F_m[χ + i∂∂̄φ̃] = e^{β(φ̃ - f_j)}F^j + F_m[χ]/(2β)`, iterates
/// `φ̃_j + 2 log β/β`, greedy selection, sandwich checked at every node.
pub fn global_regularize(
    phi: &GridFunction,
    chi: &HermitianMatrix,
    g: &MetricField,
    m: usize,
    schedule: &ApproximationSchedule,
    cfg: &RegularizationConfig,
) -> Result<RegularizationResult> {
    let domain = phi.domain();
    if !domain.is_torus() {
        return Err(Error::InvalidGrid(
            "global pipeline needs a torus grid".into(),
        ));
    }
    check_order(m, domain.n())?;
    if chi.dim() != domain.n() {
        return Err(Error::DimensionMismatch {
            expected: domain.n(),
            got: chi.dim(),
        });
    }
    let fm_chi = fm_chi_field(domain, chi, g, m)?;
    let target = clip(phi, cfg.clip_floor);
    let nodes = active(domain);
    let sup = max_over(&nodes, |i| target.value(i));
    if sup > -2.0 + 1e-12 {
        return Err(Error::TargetNotAdmissible(format!(
            "sup phi = {sup} exceeds -2"
        )));
    }
    let margin = min_cone_margin(&cone_field_with_background(&target, Some(chi), g, m)?);
    if margin < ADMISSIBLE_MARGIN {
        return Err(Error::TargetNotAdmissible(format!(
            "chi + Hessian leaves the cone (margin {margin:e})"
        )));
    }
    schedule.validate(&target)?;
    run_pipeline(&target, schedule, cfg, true, |j| {
        let beta = schedule.beta_schedule[j];
        let f = &schedule.f_sequence[j];
        let corridor = corridor_function(f, chi, g, m)?;
        let rhs = TorusPenaltyRhs {
            beta,
            reference: f.values().to_vec(),
            corridor: corridor.into_values(),
            fm_chi: fm_chi.clone(),
        };
        let report = solve_torus(domain, chi, &rhs, g, m, &cfg.solver).map_err(|e| {
            Error::DirichletFailure {
                index: j,
                source: Box::new(e),
            }
        })?;
        let v = &report.solution;
        let shift = schedule.correction(j, true);
        let scale = 1.0 - 1.0 / beta;
        let scale_gap = max_over(&nodes, |i| target.value(i) - scale * target.value(i));
        let lower_gap = max_over(&nodes, |i| scale * target.value(i) - v.value(i) - shift);
        let upper_gap = max_over(&nodes, |i| v.value(i) - f.value(i));
        let mut violations = Vec::new();
        if scale_gap > GAP_TOLERANCE {
            violations.push(format!("phi > (1 - 1/beta) phi by {scale_gap:e}"));
        }
        if lower_gap >= 0.0 {
            violations.push(format!("strict middle inequality fails by {lower_gap:e}"));
        }
        if upper_gap > GAP_TOLERANCE {
            violations.push(format!("solution exceeds f_j by {upper_gap:e}"));
        }
        Ok(Iterate {
            value: v.map(|x| x + shift),
            cone_margin: report.min_cone_margin,
            check: SolveCheck {
                index: j,
                beta,
                iterations: report.iterations,
                final_residual: report.final_residual,
                min_cone_margin: report.min_cone_margin,
                upper_gap,
                lower_gap,
                scale_gap: Some(scale_gap),
                max_principle_gap: None,
                violations,
            },
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_lattice_balls() {
        assert_eq!(ball_offsets(2, 0).len(), 1);
        assert_eq!(ball_offsets(2, 1).len(), 5);
        assert_eq!(ball_offsets(2, 2).len(), 13);
        assert_eq!(ball_offsets(4, 1).len(), 9);
    }

    #[test]
    fn capped_schedule_stops_at_cap() {
        assert_eq!(
            capped_schedule([1.0, 2.0, 4.0].into_iter()),
            vec![1.0, 2.0, 4.0]
        );
        assert_eq!(
            capped_schedule([5e5, 1e6, 2e6, 4e6].into_iter()),
            vec![5e5, 1e6]
        );
    }

    #[test]
    fn smooth_target_sequence() {
        let domain = GridDomain::ball(1, 21, 1.0).unwrap();
        let target = GridFunction::from_fn(&domain, |z| z[0] * z[0] + z[1] * z[1] - 4.0);
        let seq = upper_smooth_sequence(&target, 6).unwrap();
        let nodes = active(&domain);
        for (j, f) in seq.iter().enumerate() {
            for &i in &nodes {
                assert!(f.value(i) >= target.value(i));
                if j > 0 {
                    assert!(f.value(i) <= seq[j - 1].value(i));
                }
            }
        }
        let last = &seq[5];
        let gap = max_over(&nodes, |i| last.value(i) - target.value(i));
        assert!((gap - 2.0 * 0.25f64.powi(6)).abs() < 1e-15);
    }

    #[test]
    fn pole_is_clipped_and_decreases() {
        let domain = GridDomain::torus(1, 9).unwrap();
        let mut target = GridFunction::constant(&domain, -2.0);
        target.values_mut()[40] = f64::NEG_INFINITY;
        let seq = upper_smooth_sequence(&target, 8).unwrap();
        let at_pole: Vec<f64> = seq.iter().map(|f| f.value(40)).collect();
        assert!(at_pole.iter().all(|v| v.is_finite()));
        assert!(at_pole.windows(2).all(|w| w[1] <= w[0]));
        assert!((at_pole[7] - (-8.0 * 256.0 + 2.0 * 0.25f64.powi(8))).abs() < 1e-12);
        let all_neg = GridFunction::constant(&domain, f64::NEG_INFINITY);
        assert_eq!(
            upper_smooth_sequence(&all_neg, 2).unwrap_err(),
            Error::TargetIdenticallyNegInfinite
        );
    }

    #[test]
    fn corridor_bounds() {
        let domain = GridDomain::torus(1, 15).unwrap();
        let f = GridFunction::from_fn(&domain, |z| {
            -2.0 + 0.05 * (6.0 * z[0]).sin() * (2.0 * z[1]).cos()
        });
        let chi = HermitianMatrix::identity(1);
        let g = MetricField::identity(1);
        let corridor = corridor_function(&f, &chi, &g, 1).unwrap();
        let field = fm_field_with_background(&f, Some(&chi), &g, 1).unwrap();
        for (c, s) in corridor.values().iter().zip(&field.samples) {
            let p = match s {
                FieldSample::Value(v) => *v,
                _ => 0.0,
            };
            assert!(*c >= p + 0.5 && *c <= p + 1.0);
        }
    }

    #[test]
    fn inversion_is_located() {
        let domain = GridDomain::torus(1, 5).unwrap();
        let target = GridFunction::constant(&domain, -2.0);
        let mut seq: Vec<GridFunction> = (1..=4)
            .map(|j| target.map(|v| v + 1.0 / j as f64))
            .collect();
        let report = verify_monotone_convergence(&seq, &target, 0.3).unwrap();
        assert!(report.passed);
        for (j, d) in report.sup_deviation.iter().enumerate() {
            assert!((d - 1.0 / (j + 1) as f64).abs() < 1e-15);
        }
        seq[1].values_mut()[7] = 0.0;
        let report = verify_monotone_convergence(&seq, &target, 0.3).unwrap();
        assert!(!report.passed);
        assert_eq!(report.monotone_violation, Some((1, 7)));
    }
}
