//! Uniform grids on coordinate balls of `C^n` and flat tori, sampled
//! functions, central-difference complex Hessians and pointwise field
//! evaluation of `F_m` and of the cone test.
//!
//! Nodes are multi-indices over the `2n` real axes `(x_1, y_1, …, x_n, y_n)`,
//! flattened row-major with `x_1` slowest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones::{verdict_from_sorted, ConeVerdict};
use crate::error::{check_order, Error, Result};
use crate::fm::fm_value_from_spectrum;
use crate::hermitian::{
    complex_hessian_unchecked, relative_eigenvalues, HermitianMatrix, MetricMatrix,
};

/// Largest node count a grid may have.
pub const MAX_NODES: usize = 20_000_000;

const BINARY_MAGIC: &[u8; 4] = b"MPGF";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GridKind {
    /// Cube `[-r, r]^{2n}` restricted to the closed ball of radius `r`.
    Ball { radius: f64 },
    /// `R^{2n} / Z^{2n}`.
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeTag {
    Interior,
    Boundary,
    Exterior,
}

impl NodeTag {
    fn as_str(self) -> &'static str {
        match self {
            NodeTag::Interior => "interior",
            NodeTag::Boundary => "boundary",
            NodeTag::Exterior => "exterior",
        }
    }
}

/// Serialisable description of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub kind: GridKind,
    pub points_per_axis: usize,
}

/// A uniform grid with node tags.
///
/// Ball nodes strictly inside the sphere whose whole nine-point stencil lies
/// in the closed ball are interior; the remaining nodes of the closed ball
/// (ties included) are boundary nodes carrying Dirichlet data. On the torus
/// every node is interior.
#[derive(Debug, Clone)]
pub struct GridDomain {
    spec: GridSpec,
    spacing: f64,
    strides: Vec<usize>,
    tags: Arc<Vec<NodeTag>>,
}

impl PartialEq for GridDomain {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl GridDomain {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let GridSpec {
            n,
            kind,
            points_per_axis: p,
        } = spec;
        if n == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if p < 5 || p % 2 == 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be odd and >= 5, got {p}"
            )));
        }
        let count = (p as f64).powi(2 * n as i32);
        if count > MAX_NODES as f64 {
            return Err(Error::InvalidGrid(format!(
                "{count} nodes exceed the limit {MAX_NODES}"
            )));
        }
        let spacing = match kind {
            GridKind::Ball { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidGrid(format!(
                        "radius must be positive, got {radius}"
                    )));
                }
                2.0 * radius / (p - 1) as f64
            }
            GridKind::Torus => 1.0 / p as f64,
        };
        let dims = 2 * n;
        let strides: Vec<usize> = (0..dims).map(|a| p.pow((dims - 1 - a) as u32)).collect();
        let mut domain = Self {
            spec,
            spacing,
            strides,
            tags: Arc::new(Vec::new()),
        };
        domain.tags = Arc::new(domain.compute_tags());
        Ok(domain)
    }

    pub fn ball(n: usize, points_per_axis: usize, radius: f64) -> Result<Self> {
        Self::new(GridSpec {
            n,
            kind: GridKind::Ball { radius },
            points_per_axis,
        })
    }

    pub fn torus(n: usize, points_per_axis: usize) -> Result<Self> {
        Self::new(GridSpec {
            n,
            kind: GridKind::Torus,
            points_per_axis,
        })
    }

    fn compute_tags(&self) -> Vec<NodeTag> {
        let count = self.num_nodes();
        let radius = match self.spec.kind {
            GridKind::Torus => return vec![NodeTag::Interior; count],
            GridKind::Ball { radius } => radius,
        };
        let r2 = radius * radius;
        let outside: Vec<bool> = (0..count)
            .into_par_iter()
            .map(|node| self.norm_sq(node) > r2 * (1.0 + 1e-12))
            .collect();
        (0..count)
            .into_par_iter()
            .map(|node| {
                if outside[node] {
                    return NodeTag::Exterior;
                }
                if self.norm_sq(node) >= r2 * (1.0 - 1e-12) {
                    return NodeTag::Boundary;
                }
                match self.stencil(node) {
                    Some(s) if s.neighbors().all(|nb| !outside[nb]) => NodeTag::Interior,
                    _ => NodeTag::Boundary,
                }
            })
            .collect()
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    /// Complex dimension.
    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn kind(&self) -> GridKind {
        self.spec.kind
    }

    pub fn points_per_axis(&self) -> usize {
        self.spec.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn radius(&self) -> Option<f64> {
        match self.spec.kind {
            GridKind::Ball { radius } => Some(radius),
            GridKind::Torus => None,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.spec.kind, GridKind::Torus)
    }

    pub fn num_nodes(&self) -> usize {
        self.spec.points_per_axis.pow(2 * self.spec.n as u32)
    }

    pub fn tag(&self, node: usize) -> NodeTag {
        self.tags[node]
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    pub fn nodes_with(&self, tag: NodeTag) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.tags[i] == tag)
            .collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        self.nodes_with(NodeTag::Interior)
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.nodes_with(NodeTag::Boundary)
    }

    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.spec.points_per_axis
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        (0..2 * self.spec.n)
            .map(|a| self.axis_index(node, a))
            .collect()
    }

    pub fn node_index(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    fn axis_coord(&self, i: usize) -> f64 {
        match self.spec.kind {
            GridKind::Ball { radius } => -radius + i as f64 * self.spacing,
            GridKind::Torus => i as f64 * self.spacing,
        }
    }

    /// Real coordinates `(x_1, y_1, …, x_n, y_n)` of a node.
    pub fn coords(&self, node: usize) -> Vec<f64> {
        (0..2 * self.spec.n)
            .map(|a| self.axis_coord(self.axis_index(node, a)))
            .collect()
    }

    /// `|z|²` at a node.
    pub fn norm_sq(&self, node: usize) -> f64 {
        (0..2 * self.spec.n)
            .map(|a| self.axis_coord(self.axis_index(node, a)).powi(2))
            .sum()
    }

    /// Node reached by shifting `node` by `deltas` (pairs of axis and step);
    /// `None` when a ball grid's cube is left.
    pub fn shift(&self, node: usize, deltas: &[(usize, isize)]) -> Option<usize> {
        let p = self.spec.points_per_axis as isize;
        let mut out = node as isize;
        for &(axis, delta) in deltas {
            let i = self.axis_index(node, axis) as isize;
            let j = match self.spec.kind {
                GridKind::Torus => (i + delta).rem_euclid(p),
                GridKind::Ball { .. } => {
                    let j = i + delta;
                    if j < 0 || j >= p {
                        return None;
                    }
                    j
                }
            };
            out += (j - i) * self.strides[axis] as isize;
        }
        Some(out as usize)
    }

    /// Neighbour indices of the central-difference stencil, if they all exist.
    pub(crate) fn stencil(&self, node: usize) -> Option<Stencil> {
        let dims = 2 * self.spec.n;
        let mut axis = Vec::with_capacity(dims);
        for a in 0..dims {
            axis.push([self.shift(node, &[(a, 1)])?, self.shift(node, &[(a, -1)])?]);
        }
        let mut cross = Vec::with_capacity(dims * (dims - 1) / 2);
        for a in 0..dims {
            for b in a + 1..dims {
                cross.push([
                    self.shift(node, &[(a, 1), (b, 1)])?,
                    self.shift(node, &[(a, 1), (b, -1)])?,
                    self.shift(node, &[(a, -1), (b, 1)])?,
                    self.shift(node, &[(a, -1), (b, -1)])?,
                ]);
            }
        }
        Some(Stencil {
            center: node,
            axis,
            cross,
        })
    }

    /// Stencil of a node whose neighbours all carry data (interior nodes).
    pub(crate) fn usable_stencil(&self, node: usize) -> Option<Stencil> {
        if self.tags[node] != NodeTag::Interior {
            return None;
        }
        self.stencil(node)
    }
}

/// Neighbours of a node: `axis[a] = [+e_a, -e_a]`, and for each `a < b` in
/// lexicographic order `cross = [++, +-, -+, --]`.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub center: usize,
    pub axis: Vec<[usize; 2]>,
    pub cross: Vec<[usize; 4]>,
}

impl Stencil {
    pub fn neighbors(&self) -> impl Iterator<Item = usize> + '_ {
        self.axis
            .iter()
            .flatten()
            .chain(self.cross.iter().flatten())
            .copied()
    }

    /// Central-difference real Hessian.
    pub fn real_hessian(&self, values: &[f64], h: f64) -> DMatrix<f64> {
        let dims = self.axis.len();
        let h2 = h * h;
        let mut out = DMatrix::zeros(dims, dims);
        let u0 = values[self.center];
        for (a, [p, m]) in self.axis.iter().enumerate() {
            out[(a, a)] = (values[*p] - 2.0 * u0 + values[*m]) / h2;
        }
        let mut k = 0;
        for a in 0..dims {
            for b in a + 1..dims {
                let [pp, pm, mp, mm] = self.cross[k];
                let v = (values[pp] - values[pm] - values[mp] + values[mm]) / (4.0 * h2);
                out[(a, b)] = v;
                out[(b, a)] = v;
                k += 1;
            }
        }
        out
    }
}

/// Real values on every node of a grid. Exterior values are carried but unused.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    domain: GridDomain,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: domain.num_nodes(),
                got: values.len(),
            });
        }
        Ok(Self { domain, values })
    }

    /// Samples `f(coords)` at every node.
    pub fn from_fn<F>(domain: &GridDomain, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values = (0..domain.num_nodes())
            .into_par_iter()
            .map(|node| f(&domain.coords(node)))
            .collect();
        Self {
            domain: domain.clone(),
            values,
        }
    }

    pub fn constant(domain: &GridDomain, value: f64) -> Self {
        Self {
            domain: domain.clone(),
            values: vec![value; domain.num_nodes()],
        }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            domain: self.domain.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Nodewise combination of two functions on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            domain: self.domain.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::InvalidGrid(
                "grid functions live on different grids".into(),
            ));
        }
        Ok(())
    }

    fn fold_tagged(&self, tag: NodeTag, init: f64, f: fn(f64, f64) -> f64) -> f64 {
        self.values
            .iter()
            .zip(self.domain.tags.iter())
            .filter(|(_, t)| **t == tag)
            .fold(init, |acc, (v, _)| f(acc, *v))
    }

    pub fn sup_interior(&self) -> f64 {
        self.fold_tagged(NodeTag::Interior, f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_boundary(&self) -> f64 {
        self.fold_tagged(NodeTag::Boundary, f64::NEG_INFINITY, f64::max)
    }

    /// Supremum over interior and boundary nodes.
    pub fn sup(&self) -> f64 {
        self.sup_interior().max(self.sup_boundary())
    }

    /// Infimum over interior and boundary nodes.
    pub fn inf(&self) -> f64 {
        self.fold_tagged(NodeTag::Interior, f64::INFINITY, f64::min)
            .min(self.fold_tagged(NodeTag::Boundary, f64::INFINITY, f64::min))
    }

    /// `max |self - other|` over interior and boundary nodes.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.domain.tags.iter())
            .filter(|(_, t)| **t != NodeTag::Exterior)
            .map(|((a, b), _)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// One Jacobi pass: every interior node takes the mean of its axis neighbours.
    pub fn jacobi_smooth(&self) -> Self {
        let h = &self.domain;
        let values = (0..h.num_nodes())
            .into_par_iter()
            .map(|node| match h.usable_stencil(node) {
                Some(s) => {
                    let sum: f64 = s.axis.iter().flatten().map(|&nb| self.values[nb]).sum();
                    sum / (2 * s.axis.len()) as f64
                }
                None => self.values[node],
            })
            .collect();
        Self {
            domain: self.domain.clone(),
            values,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        self.write_csv_to(&mut out);
        out
    }

    fn write_csv_to(&self, out: &mut String) {
        use std::fmt::Write as _;
        let n = self.domain.n();
        out.push_str("index");
        for j in 1..=n {
            let _ = write!(out, ",x{j},y{j}");
        }
        out.push_str(",tag,value\n");
        for node in 0..self.domain.num_nodes() {
            let _ = write!(out, "{node}");
            for c in self.domain.coords(node) {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(
                out,
                ",{},{}",
                self.domain.tag(node).as_str(),
                self.values[node]
            );
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        writer.write_all(self.to_csv_string().as_bytes())?;
        writer.flush()?;
        Ok(())
    }

    /// Reads the `value` column of a CSV dump onto a known grid.
    pub fn read_csv(domain: &GridDomain, path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut values = vec![f64::NAN; domain.num_nodes()];
        let mut seen = 0;
        for (line_no, line) in reader.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse_err = || Error::Format(format!("bad CSV row {}", line_no + 1));
            let index: usize = fields
                .first()
                .ok_or_else(parse_err)?
                .trim()
                .parse()
                .map_err(|_| parse_err())?;
            let value: f64 = fields
                .last()
                .ok_or_else(parse_err)?
                .trim()
                .parse()
                .map_err(|_| parse_err())?;
            if index >= values.len() {
                return Err(parse_err());
            }
            values[index] = value;
            seen += 1;
        }
        if seen != domain.num_nodes() {
            return Err(Error::Format(format!(
                "CSV has {seen} rows, grid has {} nodes",
                domain.num_nodes()
            )));
        }
        Self::new(domain.clone(), values)
    }

    /// Binary dump: magic `MPGF`, version, `n`, kind (0 ball, 1 torus),
    /// points per axis (all `u32`), radius (`f64`), count (`u64`), then the
    /// values as little-endian `f64`.
    pub fn to_binary(&self) -> Vec<u8> {
        let spec = self.domain.spec;
        let (kind, radius) = match spec.kind {
            GridKind::Ball { radius } => (0u32, radius),
            GridKind::Torus => (1u32, 0.0),
        };
        let mut out = Vec::with_capacity(36 + 8 * self.values.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&(spec.n as u32).to_le_bytes());
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&(spec.points_per_axis as u32).to_le_bytes());
        out.extend_from_slice(&radius.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut take = |k: usize| -> Result<&[u8]> {
            if cursor.len() < k {
                return Err(Error::Format("truncated binary dump".into()));
            }
            let (head, tail) = cursor.split_at(k);
            cursor = tail;
            Ok(head)
        };
        if take(4)? != BINARY_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("four bytes"));
        let version = u32_at(take(4)?);
        if version != BINARY_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = u32_at(take(4)?) as usize;
        let kind = u32_at(take(4)?);
        let points_per_axis = u32_at(take(4)?) as usize;
        let radius = f64::from_le_bytes(take(8)?.try_into().expect("eight bytes"));
        let count = u64::from_le_bytes(take(8)?.try_into().expect("eight bytes")) as usize;
        let kind = match kind {
            0 => GridKind::Ball { radius },
            1 => GridKind::Torus,
            other => return Err(Error::Format(format!("unknown grid kind {other}"))),
        };
        let domain = GridDomain::new(GridSpec {
            n,
            kind,
            points_per_axis,
        })?;
        if count != domain.num_nodes() {
            return Err(Error::Format("value count does not match the grid".into()));
        }
        let raw = take(8 * count)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        Self::new(domain, values)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path)?;
        file.write_all(&self.to_binary())?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_binary(&bytes)
    }
}

/// Metric coefficients on a grid.
#[derive(Debug, Clone)]
pub enum MetricField {
    Constant(MetricMatrix),
    PerNode(Arc<Vec<MetricMatrix>>),
}

impl MetricField {
    pub fn identity(n: usize) -> Self {
        MetricField::Constant(MetricMatrix::identity(n))
    }

    pub fn from_fn<F>(domain: &GridDomain, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<MetricMatrix> + Sync,
    {
        let metrics: Result<Vec<MetricMatrix>> = (0..domain.num_nodes())
            .into_par_iter()
            .map(|node| f(&domain.coords(node)))
            .collect();
        Ok(MetricField::PerNode(Arc::new(metrics?)))
    }

    pub fn at(&self, node: usize) -> &MetricMatrix {
        match self {
            MetricField::Constant(g) => g,
            MetricField::PerNode(gs) => &gs[node],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MetricField::Constant(g) => g.dim(),
            MetricField::PerNode(gs) => gs.first().map_or(0, |g| g.dim()),
        }
    }

    pub(crate) fn check(&self, domain: &GridDomain) -> Result<()> {
        if self.dim() != domain.n() {
            return Err(Error::DimensionMismatch {
                expected: domain.n(),
                got: self.dim(),
            });
        }
        if let MetricField::PerNode(gs) = self {
            if gs.len() != domain.num_nodes() {
                return Err(Error::DimensionMismatch {
                    expected: domain.num_nodes(),
                    got: gs.len(),
                });
            }
        }
        Ok(())
    }
}

/// Complex Hessian of `u` at a node by second-order central differences.
pub fn fd_complex_hessian(u: &GridFunction, node: usize) -> Result<HermitianMatrix> {
    let domain = u.domain();
    if node >= domain.num_nodes() {
        return Err(Error::StencilOutOfDomain { node });
    }
    let stencil = match domain.kind() {
        GridKind::Torus => domain.stencil(node),
        GridKind::Ball { .. } => domain.stencil(node).filter(|s| {
            domain.tag(node) != NodeTag::Exterior
                && s.neighbors().all(|nb| domain.tag(nb) != NodeTag::Exterior)
        }),
    }
    .ok_or(Error::StencilOutOfDomain { node })?;
    Ok(complex_hessian_unchecked(
        &stencil.real_hessian(u.values(), domain.spacing()),
    ))
}

/// Per-node outcome of a field evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldSample {
    Value(f64),
    OutsideCone { margin: f64 },
    NoStencil,
}

#[derive(Debug, Clone)]
pub struct FmField {
    pub domain: GridDomain,
    pub samples: Vec<FieldSample>,
}

impl FmField {
    /// Values as a grid function, `NaN` at flagged nodes.
    pub fn to_grid_function(&self) -> GridFunction {
        let values = self
            .samples
            .iter()
            .map(|s| match s {
                FieldSample::Value(v) => *v,
                _ => f64::NAN,
            })
            .collect();
        GridFunction {
            domain: self.domain.clone(),
            values,
        }
    }

    pub fn flagged(&self) -> Vec<(usize, f64)> {
        self.samples
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                FieldSample::OutsideCone { margin } => Some((i, *margin)),
                _ => None,
            })
            .collect()
    }

    pub fn sup_value(&self) -> f64 {
        self.samples
            .iter()
            .filter_map(|s| match s {
                FieldSample::Value(v) => Some(*v),
                _ => None,
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn local_form(
    u: &GridFunction,
    node: usize,
    background: Option<&HermitianMatrix>,
) -> Option<HermitianMatrix> {
    let domain = u.domain();
    let stencil = domain.usable_stencil(node)?;
    let hess = complex_hessian_unchecked(&stencil.real_hessian(u.values(), domain.spacing()));
    Some(match background {
        Some(chi) => chi.add(&hess).expect("dimensions checked"),
        None => hess,
    })
}

fn check_field_inputs(
    u: &GridFunction,
    background: Option<&HermitianMatrix>,
    g: &MetricField,
    m: usize,
) -> Result<()> {
    let n = u.domain().n();
    check_order(m, n)?;
    g.check(u.domain())?;
    if let Some(chi) = background {
        if chi.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: chi.dim(),
            });
        }
    }
    Ok(())
}

/// `F_m` of the discrete Hessian at every interior node.
pub fn fm_field(u: &GridFunction, g: &MetricField, m: usize) -> Result<FmField> {
    fm_field_with_background(u, None, g, m)
}

/// `F_m[χ + i∂∂̄u]` at every interior node.
pub fn fm_field_with_background(
    u: &GridFunction,
    background: Option<&HermitianMatrix>,
    g: &MetricField,
    m: usize,
) -> Result<FmField> {
    check_field_inputs(u, background, g, m)?;
    let samples = (0..u.domain().num_nodes())
        .into_par_iter()
        .map(|node| {
            let Some(form) = local_form(u, node, background) else {
                return Ok(FieldSample::NoStencil);
            };
            let lambdas = relative_eigenvalues(&form, g.at(node))?.lambdas;
            Ok(match fm_value_from_spectrum(&lambdas, m) {
                Ok(v) => FieldSample::Value(v.value),
                Err(Error::OutsideCone { margin }) => FieldSample::OutsideCone { margin },
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FmField {
        domain: u.domain().clone(),
        samples,
    })
}

/// Cone verdict of the discrete Hessian at every interior node (`None` elsewhere).
pub fn cone_field(u: &GridFunction, g: &MetricField, m: usize) -> Result<Vec<Option<ConeVerdict>>> {
    cone_field_with_background(u, None, g, m)
}

pub fn cone_field_with_background(
    u: &GridFunction,
    background: Option<&HermitianMatrix>,
    g: &MetricField,
    m: usize,
) -> Result<Vec<Option<ConeVerdict>>> {
    check_field_inputs(u, background, g, m)?;
    (0..u.domain().num_nodes())
        .into_par_iter()
        .map(|node| {
            let Some(form) = local_form(u, node, background) else {
                return Ok(None);
            };
            let lambdas = relative_eigenvalues(&form, g.at(node))?.lambdas;
            Ok(Some(verdict_from_sorted(&lambdas, m)))
        })
        .collect()
}

/// Smallest cone margin over the evaluated nodes.
pub fn min_cone_margin(verdicts: &[Option<ConeVerdict>]) -> f64 {
    verdicts
        .iter()
        .flatten()
        .map(|v| v.margin)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn norm_sq(c: &[f64]) -> f64 {
        c.iter().map(|x| x * x).sum()
    }

    #[test]
    fn spacing_and_counts() {
        let b = GridDomain::ball(1, 33, 1.0).unwrap();
        assert_eq!(b.num_nodes(), 1089);
        assert_relative_eq!(b.spacing(), 1.0 / 16.0);
        let t = GridDomain::torus(2, 13).unwrap();
        assert_eq!(t.num_nodes(), 28561);
        assert_relative_eq!(t.spacing(), 1.0 / 13.0);
        assert!(GridDomain::ball(1, 4, 1.0).is_err());
        assert!(GridDomain::ball(1, 3, 1.0).is_err());
        assert!(GridDomain::ball(1, 9, -1.0).is_err());
    }

    #[test]
    fn index_roundtrip_and_coords() {
        let b = GridDomain::ball(2, 5, 1.0).unwrap();
        for node in [0, 17, 312, 624] {
            assert_eq!(b.node_index(&b.multi_index(node)), node);
        }
        assert_eq!(b.coords(0), vec![-1.0; 4]);
        let centre = b.node_index(&[2, 2, 2, 2]);
        assert_eq!(b.coords(centre), vec![0.0; 4]);
        assert_eq!(b.tag(centre), NodeTag::Interior);
        assert_eq!(b.tag(0), NodeTag::Exterior);
    }

    #[test]
    fn ball_tags() {
        let b = GridDomain::ball(1, 33, 1.0).unwrap();
        for node in 0..b.num_nodes() {
            let r2 = b.norm_sq(node);
            match b.tag(node) {
                NodeTag::Exterior => assert!(r2 > 1.0),
                NodeTag::Boundary => assert!(r2 <= 1.0 + 1e-12),
                NodeTag::Interior => {
                    assert!(r2 < 1.0);
                    let s = b.stencil(node).unwrap();
                    assert!(s.neighbors().all(|nb| b.tag(nb) != NodeTag::Exterior));
                }
            }
        }
        // the four axis points on the unit circle are boundary ties
        assert_eq!(b.tag(b.node_index(&[32, 16])), NodeTag::Boundary);
        assert!(b.interior_nodes().len() > 600);
    }

    #[test]
    fn torus_wraps() {
        let t = GridDomain::torus(1, 5).unwrap();
        let node = t.node_index(&[4, 0]);
        assert_eq!(t.shift(node, &[(0, 1)]), Some(t.node_index(&[0, 0])));
        assert_eq!(t.shift(node, &[(1, -1)]), Some(t.node_index(&[4, 4])));
        assert!(t.interior_nodes().len() == 25);
    }

    #[test]
    fn quadratics_are_exact() {
        let b = GridDomain::ball(2, 9, 1.0).unwrap();
        let u = GridFunction::from_fn(&b, norm_sq);
        let re_z1_sq = GridFunction::from_fn(&b, |c| c[0] * c[0] - c[1] * c[1]);
        let mixed = GridFunction::from_fn(&b, |c| c[0] * c[2] + c[1] * c[3] + 0.3 * c[0] * c[3]);
        for node in b.interior_nodes() {
            let a = fd_complex_hessian(&u, node).unwrap();
            assert!((a.entries() - HermitianMatrix::identity(2).entries()).norm() < 1e-12);
            assert!(
                fd_complex_hessian(&re_z1_sq, node)
                    .unwrap()
                    .entries()
                    .norm()
                    < 1e-12
            );
            let a = fd_complex_hessian(&mixed, node).unwrap();
            assert!((a.get(0, 1).re - 0.5).abs() < 1e-12);
            assert!((a.get(0, 1).im - 0.075).abs() < 1e-12);
        }
    }

    #[test]
    fn stencil_out_of_domain() {
        let b = GridDomain::ball(1, 9, 1.0).unwrap();
        let u = GridFunction::from_fn(&b, norm_sq);
        assert!(matches!(
            fd_complex_hessian(&u, 0),
            Err(Error::StencilOutOfDomain { .. })
        ));
    }

    #[test]
    fn exp_hessian_second_order() {
        let mut errors = Vec::new();
        for p in [21, 41, 81] {
            let b = GridDomain::ball(1, p, 1.0).unwrap();
            let u = GridFunction::from_fn(&b, |c| c[0].exp());
            let err = b
                .interior_nodes()
                .into_iter()
                .map(|node| {
                    let x = b.coords(node)[0];
                    (fd_complex_hessian(&u, node).unwrap().get(0, 0).re - x.exp() / 4.0).abs()
                })
                .fold(0.0, f64::max);
            let h = b.spacing();
            assert!(err <= h * h * 1f64.exp() / 48.0 * 1.01, "err {err} h {h}");
            errors.push(err);
        }
        assert!(errors[0] / errors[1] >= 3.5 && errors[1] / errors[2] >= 3.5);
    }

    #[test]
    fn fm_field_examples() {
        let b = GridDomain::ball(2, 9, 1.0).unwrap();
        let g = MetricField::identity(2);
        for (alpha, m) in [(1.0, 1), (1.0, 2), (2.5, 2)] {
            let u = GridFunction::from_fn(&b, |c| alpha * norm_sq(c));
            let field = fm_field(&u, &g, m).unwrap();
            for node in b.interior_nodes() {
                match field.samples[node] {
                    FieldSample::Value(v) => {
                        assert_relative_eq!(v, alpha * m as f64, max_relative = 1e-12)
                    }
                    ref other => panic!("unexpected {other:?}"),
                }
            }
        }
        let u = GridFunction::from_fn(&b, |c| norm_sq(c) + 0.1 * (c[0] * c[0] - c[1] * c[1]));
        let field = fm_field(&u, &g, 2).unwrap();
        for node in b.interior_nodes() {
            match field.samples[node] {
                FieldSample::Value(v) => assert_relative_eq!(v, 2.0, max_relative = 1e-12),
                ref other => panic!("unexpected {other:?}"),
            }
        }
        let neg = GridFunction::from_fn(&b, |c| -norm_sq(c));
        let field = fm_field(&neg, &g, 1).unwrap();
        assert_eq!(field.flagged().len(), b.interior_nodes().len());
    }

    #[test]
    fn cone_field_examples() {
        let b = GridDomain::ball(2, 9, 1.0).unwrap();
        let g = MetricField::identity(2);
        let u = GridFunction::from_fn(&b, norm_sq);
        let neg = u.map(|v| -v);
        for m in 1..=2 {
            let verdicts = cone_field(&u, &g, m).unwrap();
            assert_relative_eq!(min_cone_margin(&verdicts), m as f64, max_relative = 1e-12);
            assert!(cone_field(&neg, &g, m)
                .unwrap()
                .iter()
                .flatten()
                .all(|v| !v.member));
        }
        let kink = GridFunction::from_fn(&b, |c| c[0].max(c[2])).jacobi_smooth();
        let verdicts = cone_field(&kink, &g, 2).unwrap();
        assert!(min_cone_margin(&verdicts) >= -1e-6);
    }

    #[test]
    fn torus_constant_gives_background() {
        let t = GridDomain::torus(2, 7).unwrap();
        let g = MetricField::identity(2);
        let chi = HermitianMatrix::from_diagonal(&[1.0, 2.0]);
        let field =
            fm_field_with_background(&GridFunction::constant(&t, -3.0), Some(&chi), &g, 1).unwrap();
        for s in &field.samples {
            match s {
                FieldSample::Value(v) => assert_relative_eq!(*v, 2f64.sqrt(), max_relative = 1e-12),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn csv_and_binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let b = GridDomain::ball(1, 7, 0.5).unwrap();
        let u = GridFunction::from_fn(&b, |c| c[0].sin() + 0.1 * c[1]);
        let csv = dir.path().join("u.csv");
        u.write_csv(&csv).unwrap();
        assert_eq!(GridFunction::read_csv(&b, &csv).unwrap(), u);
        let text = u.to_csv_string();
        assert!(text.starts_with("index,x1,y1,tag,value\n"));
        let bin = dir.path().join("u.bin");
        u.write_binary(&bin).unwrap();
        let back = GridFunction::read_binary(&bin).unwrap();
        assert_eq!(back, u);
        assert_eq!(&u.to_binary()[..4], b"MPGF");
        assert!(GridFunction::from_binary(b"XXXX").is_err());
    }
}
