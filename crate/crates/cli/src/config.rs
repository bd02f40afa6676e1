//! JSON configuration schemas, one per subcommand.
//!
//! Every struct fills omitted fields with defaults and rejects unknown keys,
//! so the manifest copy written next to the artifacts is the fully resolved
//! run description.

use std::f64::consts::PI;

use mpsh_core::grid::{GridDomain, GridFunction, GridKind, GridSpec, MetricField};
use mpsh_core::hermitian::{HermitianMatrix, MetricMatrix};
use mpsh_core::regularize::RegularizationConfig;
use mpsh_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenConfig {
    pub t: HermitianMatrix,
    pub omega: MetricMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeConfig {
    pub t: HermitianMatrix,
    pub omega: MetricMatrix,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmConfig {
    pub t: HermitianMatrix,
    pub omega: MetricMatrix,
    pub m: usize,
    #[serde(default = "yes")]
    pub gradient: bool,
}

fn yes() -> bool {
    true
}

/// Manufactured Dirichlet problem with exact solution
/// `u*(z) = |z|² + amplitude·exp(x_1)` and `G(z, t) = F_m[i∂∂̄u*](z)·exp(t − u*(z))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedProblem {
    #[serde(default)]
    pub amplitude: f64,
}

impl ManufacturedProblem {
    pub fn exact(&self, z: &[f64]) -> f64 {
        z.iter().map(|x| x * x).sum::<f64>() + self.amplitude * z[0].exp()
    }

    /// Complex Hessian of the exact solution.
    pub fn hessian(&self, n: usize, z: &[f64]) -> HermitianMatrix {
        let mut diagonal = vec![1.0; n];
        diagonal[0] += 0.25 * self.amplitude * z[0].exp();
        HermitianMatrix::from_diagonal(&diagonal)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub grid: GridSpec,
    pub m: usize,
    #[serde(default = "default_problem")]
    pub problem: ManufacturedProblem,
    /// Constant background metric; identity when omitted.
    #[serde(default)]
    pub metric: Option<MetricMatrix>,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_problem() -> ManufacturedProblem {
    ManufacturedProblem { amplitude: 0.0 }
}

/// Grid functions that can be named in a config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldExpr {
    Constant {
        value: f64,
    },
    /// `|z|² + shift`.
    Quadratic {
        shift: f64,
    },
    /// `max(x_a, x_b) + shift` over real coordinates `(x_1, y_1, …)`, 0-based.
    Kink {
        axes: [usize; 2],
        shift: f64,
    },
    /// `shift + amplitude·smax(cos 2πx_a, cos 2πx_b)` with
    /// `smax(a, b) = (a + b + sqrt((a − b)² + 1/4))/2`.
    CosineMax {
        axes: [usize; 2],
        amplitude: f64,
        shift: f64,
    },
    /// `value` column of a CSV dump on the configured grid.
    Csv {
        path: String,
    },
}

impl FieldExpr {
    pub fn validate(&self, n: usize) -> Result<(), String> {
        let axes = match self {
            FieldExpr::Kink { axes, .. } | FieldExpr::CosineMax { axes, .. } => axes,
            _ => return Ok(()),
        };
        match axes.iter().find(|&&a| a >= 2 * n) {
            Some(a) => Err(format!(
                "axis {a} out of range for {} real coordinates",
                2 * n
            )),
            None => Ok(()),
        }
    }

    pub fn evaluate(&self, domain: &GridDomain) -> mpsh_core::Result<GridFunction> {
        Ok(match self {
            FieldExpr::Constant { value } => GridFunction::constant(domain, *value),
            FieldExpr::Quadratic { shift } => {
                GridFunction::from_fn(domain, |z| z.iter().map(|x| x * x).sum::<f64>() + shift)
            }
            FieldExpr::Kink { axes, shift } => {
                GridFunction::from_fn(domain, |z| z[axes[0]].max(z[axes[1]]) + shift)
            }
            FieldExpr::CosineMax {
                axes,
                amplitude,
                shift,
            } => GridFunction::from_fn(domain, |z| {
                let (a, b) = ((2.0 * PI * z[axes[0]]).cos(), (2.0 * PI * z[axes[1]]).cos());
                shift + amplitude * 0.5 * (a + b + ((a - b).powi(2) + 0.25).sqrt())
            }),
            FieldExpr::Csv { path } => GridFunction::read_csv(domain, std::path::Path::new(path))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Dirichlet pipeline on a ball.
    Local,
    /// Penalised pipeline on the flat torus.
    Global,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizeConfig {
    pub mode: Mode,
    pub grid: GridSpec,
    pub m: usize,
    pub target: FieldExpr,
    /// Length of the approximating sequence.
    #[serde(default = "default_count")]
    pub count: usize,
    /// Explicit β schedule for the local mode; derived when omitted.
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    /// Background form of the global mode; identity when omitted.
    #[serde(default)]
    pub chi: Option<HermitianMatrix>,
    #[serde(default)]
    pub metric: Option<MetricMatrix>,
    #[serde(default)]
    pub pipeline: RegularizationConfig,
}

fn default_count() -> usize {
    16
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySuiteConfig {
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn apply_grid_override(spec: &mut GridSpec, grid_override: Option<usize>) {
    if let Some(k) = grid_override {
        spec.points_per_axis = k;
    }
}

pub fn metric_field(metric: &Option<MetricMatrix>, n: usize) -> Result<MetricField, String> {
    match metric {
        None => Ok(MetricField::identity(n)),
        Some(g) if g.dim() == n => Ok(MetricField::Constant(g.clone())),
        Some(g) => Err(format!(
            "metric has dimension {}, grid has n = {n}",
            g.dim()
        )),
    }
}

pub fn is_torus(spec: &GridSpec) -> bool {
    matches!(spec.kind, GridKind::Torus)
}
