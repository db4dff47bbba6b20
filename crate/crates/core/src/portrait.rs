//! Phase portraits on symplectic leaves.
//!
//! A leaf is charted by two coordinates `(u, v)`; the Hamiltonian is sampled
//! on a regular grid over the chart rectangle and its level sets are traced
//! by marching squares. Equilibria are located by Newton's method and tagged
//! by the sign of the linearised frequency.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::central_force::reduced_tensor;
use crate::poisson::{parse_row, write_f64, SmoothFunction};
use crate::rigid_body::so3_tensor;
use crate::{Error, Result};

/// Grid used when none is given.
pub const DEFAULT_GRID: usize = 512;
/// Default upper grid quantile for automatic levels; it puts the Kepler
/// escape energy inside the level range.
pub const DEFAULT_LEVEL_QUANTILE: f64 = 0.5;
/// Grid on which candidate equilibria are seeded.
const SEED_GRID: usize = 64;
const AUTO_LEVEL_COUNT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LeafKind {
    /// `‖m‖ = radius`, charted by polar angle `u ∈ [0, π]` and azimuth `v`.
    Sphere { radius: f64 },
    /// `C = c > 0`, charted by `u = w₂` and `v = ½ ln(w₁/w₃)`.
    Hyperboloid { c: f64 },
    /// `C = 0` without its apex, charted as the hyperboloid.
    Cone,
    /// `C = c ≥ 0`, charted by `(u, v) = (w₁, w₂)` with `w₁ > 0`.
    PlaneChart { c: f64 },
}

impl LeafKind {
    /// The Casimir value (or sphere radius) pinned by the leaf.
    pub fn level(&self) -> f64 {
        match *self {
            LeafKind::Sphere { radius } => radius,
            LeafKind::Hyperboloid { c } | LeafKind::PlaneChart { c } => c,
            LeafKind::Cone => 0.0,
        }
    }

    pub fn axis_labels(&self) -> (&'static str, &'static str) {
        match self {
            LeafKind::Sphere { .. } => ("polar angle", "azimuth"),
            LeafKind::Hyperboloid { .. } | LeafKind::Cone => ("w2", "log sqrt(w1/w3)"),
            LeafKind::PlaneChart { .. } => ("w1", "w2"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChartDomain {
    pub u: (f64, f64),
    pub v: (f64, f64),
}

impl ChartDomain {
    pub fn new(u: (f64, f64), v: (f64, f64)) -> Result<Self> {
        if !(u.0 < u.1 && v.0 < v.1 && [u.0, u.1, v.0, v.1].iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidParameter(format!("empty chart rectangle {u:?} x {v:?}")));
        }
        Ok(Self { u, v })
    }

    fn contains(&self, p: (f64, f64), slack: f64) -> bool {
        let su = slack * (self.u.1 - self.u.0);
        let sv = slack * (self.v.1 - self.v.0);
        p.0 >= self.u.0 - su && p.0 <= self.u.1 + su && p.1 >= self.v.0 - sv && p.1 <= self.v.1 + sv
    }
}

/// A chart of one symplectic leaf over a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeafChart {
    pub kind: LeafKind,
    pub domain: ChartDomain,
}

/// Checks the leaf parameters and, when `domain` is `None`, uses the
/// default rectangle for the region `[0, E] × [−E/2, E/2] × [0, E]`
/// (see [`default_domain`]).
pub fn make_chart(kind: LeafKind, domain: Option<ChartDomain>, extent: f64) -> Result<LeafChart> {
    match kind {
        LeafKind::Sphere { radius } if !(radius > 0.0 && radius.is_finite()) => {
            return Err(Error::InvalidParameter(format!("sphere radius must be positive, got {radius}")))
        }
        LeafKind::Hyperboloid { c } if c < 0.0 => return Err(Error::NoLeaf(c)),
        LeafKind::Hyperboloid { c } if !(c > 0.0 && c.is_finite()) => {
            return Err(Error::InvalidParameter(format!("hyperboloid leaves need C > 0, got {c}; use the cone")))
        }
        LeafKind::PlaneChart { c } if c < 0.0 || !c.is_finite() => return Err(Error::NoLeaf(c)),
        _ => {}
    }
    let domain = match domain {
        Some(d) => d,
        None => default_domain(kind, extent)?,
    };
    if let LeafKind::PlaneChart { .. } = kind {
        if domain.u.0 <= 0.0 {
            return Err(Error::InvalidParameter("the plane chart needs w1 > 0".into()));
        }
    }
    Ok(LeafChart { kind, domain })
}

/// Chart rectangle covering the part of the leaf inside
/// `[0, E] × [−E/2, E/2] × [0, E]`.
pub fn default_domain(kind: LeafKind, extent: f64) -> Result<ChartDomain> {
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::InvalidParameter(format!("extent must be positive, got {extent}")));
    }
    let half = 0.5 * extent;
    match kind {
        LeafKind::Sphere { .. } => ChartDomain::new((0.0, std::f64::consts::PI), (-std::f64::consts::PI, std::f64::consts::PI)),
        LeafKind::Hyperboloid { c } => {
            let s = (extent / c.sqrt()).ln().max(1.0);
            ChartDomain::new((-half, half), (-s, s))
        }
        LeafKind::Cone => ChartDomain::new((-half, half), (-3.0, 3.0)),
        LeafKind::PlaneChart { .. } => ChartDomain::new((extent / 200.0, extent), (-half, half)),
    }
}

/// Side of the default plotting cube for a named Hamiltonian.
pub fn plot_extent(hamiltonian: &str) -> f64 {
    match hamiltonian {
        "homoclinic" | "homoclinic_linear" => 4.0,
        _ => 12.0,
    }
}

impl LeafChart {
    pub fn embed(&self, u: f64, v: f64) -> Vector3<f64> {
        match self.kind {
            LeafKind::Sphere { radius } => {
                let (st, ct) = u.sin_cos();
                let (sp, cp) = v.sin_cos();
                Vector3::new(st * cp, st * sp, ct) * radius
            }
            LeafKind::Hyperboloid { c } => hyperboloid_point(c, u, v),
            LeafKind::Cone => hyperboloid_point(0.0, u, v),
            LeafKind::PlaneChart { c } => Vector3::new(u, v, (c + v * v) / u),
        }
    }

    /// Columns `∂w/∂u`, `∂w/∂v`.
    pub fn embed_jacobian(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        match self.kind {
            LeafKind::Sphere { radius } => {
                let (st, ct) = u.sin_cos();
                let (sp, cp) = v.sin_cos();
                (
                    Vector3::new(ct * cp, ct * sp, -st) * radius,
                    Vector3::new(-st * sp, st * cp, 0.0) * radius,
                )
            }
            LeafKind::Hyperboloid { c } => hyperboloid_jacobian(c, u, v),
            LeafKind::Cone => hyperboloid_jacobian(0.0, u, v),
            LeafKind::PlaneChart { c } => (
                Vector3::new(1.0, 0.0, -(c + v * v) / (u * u)),
                Vector3::new(0.0, 1.0, 2.0 * v / u),
            ),
        }
    }

    /// Inverse of [`LeafChart::embed`] for points on the leaf.
    pub fn chart_coords(&self, w: &Vector3<f64>) -> Result<(f64, f64)> {
        match self.kind {
            LeafKind::Sphere { .. } => {
                let r = w.norm();
                if r == 0.0 {
                    return Err(Error::InvalidParameter("origin is not on a sphere".into()));
                }
                Ok(((w.z / r).clamp(-1.0, 1.0).acos(), w.y.atan2(w.x)))
            }
            LeafKind::Hyperboloid { .. } | LeafKind::Cone => {
                if !(w.x > 0.0 && w.z > 0.0) {
                    return Err(Error::SingularChart { w1: w.x });
                }
                Ok((w.y, 0.5 * (w.x / w.z).ln()))
            }
            LeafKind::PlaneChart { .. } => {
                if w.x <= 0.0 {
                    return Err(Error::SingularChart { w1: w.x });
                }
                Ok((w.x, w.y))
            }
        }
    }

    /// The leaf equation evaluated at `w`: `‖w‖` on spheres, `C(w)` otherwise.
    pub fn leaf_value(&self, w: &Vector3<f64>) -> f64 {
        match self.kind {
            LeafKind::Sphere { .. } => w.norm(),
            _ => w.x * w.z - w.y * w.y,
        }
    }

    /// The Poisson tensor of the ambient space.
    pub fn tensor(&self, w: &Vector3<f64>) -> DMatrix<f64> {
        let d = DVector::from_column_slice(w.as_slice());
        match self.kind {
            LeafKind::Sphere { .. } => so3_tensor(&d),
            _ => reduced_tensor(&d),
        }
    }

    fn is_singular(&self, u: f64) -> bool {
        matches!(self.kind, LeafKind::Cone) && u.abs() < 1e-12
    }
}

fn hyperboloid_point(c: f64, u: f64, v: f64) -> Vector3<f64> {
    let r = (c + u * u).sqrt();
    Vector3::new(r * v.exp(), u, r * (-v).exp())
}

fn hyperboloid_jacobian(c: f64, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
    let r = (c + u * u).sqrt();
    let dr = if r > 0.0 { u / r } else { 0.0 };
    let (ep, em) = (v.exp(), (-v).exp());
    (Vector3::new(dr * ep, 1.0, dr * em), Vector3::new(r * ep, 0.0, -r * em))
}

fn v3(w: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(w.as_slice())
}

/// Gradient of `H∘embed` with respect to `(u, v)`.
fn chart_gradient(chart: &LeafChart, h: &SmoothFunction, u: f64, v: f64) -> Vector2<f64> {
    let g = h.gradient(&v3(&chart.embed(u, v)));
    let (eu, ev) = chart.embed_jacobian(u, v);
    let g = Vector3::new(g[0], g[1], g[2]);
    Vector2::new(g.dot(&eu), g.dot(&ev))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    /// Extremum of `H` on the leaf; nearby orbits circle it.
    Center,
    Saddle,
    /// The linearisation has a zero frequency.
    Degenerate,
    /// A singular point of the leaf, such as the apex of the cone.
    SingularPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Marker {
    pub u: f64,
    pub v: f64,
    pub point: [f64; 3],
    pub kind: MarkerKind,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
    /// Per-vertex bound `cell diameter × local gradient bound` on the level
    /// error of linear interpolation.
    pub tolerances: Vec<f64>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourLevel {
    pub level: f64,
    pub polylines: Vec<Polyline>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourSet {
    pub chart: LeafChart,
    /// Grid nodes along `u` and `v`.
    pub grid: (usize, usize),
    pub levels: Vec<ContourLevel>,
    pub markers: Vec<Marker>,
    /// `Some(value)` when `H` is constant on the chart.
    pub degenerate: Option<f64>,
}

/// One vertex of a contour together with its leaf point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourVertex {
    pub level: f64,
    pub polyline_id: usize,
    pub u: f64,
    pub v: f64,
    pub w: Vector3<f64>,
    pub tolerance: f64,
}

impl ContourSet {
    pub fn cell_size(&self) -> (f64, f64) {
        let d = &self.chart.domain;
        (
            (d.u.1 - d.u.0) / (self.grid.0 - 1) as f64,
            (d.v.1 - d.v.0) / (self.grid.1 - 1) as f64,
        )
    }

    pub fn cell_diameter(&self) -> f64 {
        let (du, dv) = self.cell_size();
        du.hypot(dv)
    }

    /// All vertices in output order; polyline ids run over the whole set.
    pub fn vertices(&self) -> Vec<ContourVertex> {
        let mut out = Vec::new();
        let mut id = 0;
        for lvl in &self.levels {
            for poly in &lvl.polylines {
                for (&(u, v), &tol) in poly.points.iter().zip(&poly.tolerances) {
                    out.push(ContourVertex {
                        level: lvl.level,
                        polyline_id: id,
                        u,
                        v,
                        w: self.chart.embed(u, v),
                        tolerance: tol,
                    });
                }
                id += 1;
            }
        }
        out
    }

    /// Chart distance from `p` to the nearest polyline segment at the level
    /// with index `level_index`.
    pub fn distance_to_level(&self, level_index: usize, p: (f64, f64)) -> f64 {
        let mut best = f64::INFINITY;
        let Some(lvl) = self.levels.get(level_index) else { return best };
        let p = Vector2::new(p.0, p.1);
        for poly in &lvl.polylines {
            let pts: Vec<Vector2<f64>> = poly.points.iter().map(|&(u, v)| Vector2::new(u, v)).collect();
            if pts.len() == 1 {
                best = best.min((pts[0] - p).norm());
            }
            for seg in pts.windows(2) {
                let d = seg[1] - seg[0];
                let t = if d.norm_squared() > 0.0 {
                    ((p - seg[0]).dot(&d) / d.norm_squared()).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                best = best.min((seg[0] + d * t - p).norm());
            }
        }
        best
    }
}

/// Samples `H∘embed` on the grid; rows run along `v`, entries along `u`.
fn sample(chart: &LeafChart, h: &SmoothFunction, nu: usize, nv: usize) -> Vec<f64> {
    let d = chart.domain;
    let du = (d.u.1 - d.u.0) / (nu - 1) as f64;
    let dv = (d.v.1 - d.v.0) / (nv - 1) as f64;
    let mut values = vec![0.0; nu * nv];
    values.par_chunks_mut(nu).enumerate().for_each(|(j, row)| {
        let v = d.v.0 + j as f64 * dv;
        for (i, out) in row.iter_mut().enumerate() {
            let u = d.u.0 + i as f64 * du;
            *out = if chart.is_singular(u) {
                f64::NAN
            } else {
                h.value(&v3(&chart.embed(u, v)))
            };
        }
    });
    values
}

/// Evenly spaced levels: twelve values from just above the grid minimum of
/// `H` up to its `quantile` over the grid.
pub fn auto_levels(chart: &LeafChart, h: &SmoothFunction, grid: usize, quantile: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::InvalidParameter(format!("quantile must lie in [0, 1], got {quantile}")));
    }
    check_grid(grid, grid)?;
    let mut values: Vec<f64> = sample(chart, h, grid, grid).into_iter().filter(|x| x.is_finite()).collect();
    if values.is_empty() {
        return Err(Error::DegenerateData("H is not finite anywhere on the chart".into()));
    }
    values.sort_by(f64::total_cmp);
    let lo = values[0];
    let hi = values[((values.len() - 1) as f64 * quantile).round() as usize];
    Ok((1..=AUTO_LEVEL_COUNT)
        .map(|i| lo + (hi - lo) * i as f64 / AUTO_LEVEL_COUNT as f64)
        .collect())
}

fn check_grid(nu: usize, nv: usize) -> Result<()> {
    if nu < 2 || nv < 2 {
        return Err(Error::InvalidParameter(format!("grid must be at least 2x2, got {nu}x{nv}")));
    }
    Ok(())
}

/// Identifies a grid edge: horizontal edges join `(i, j)`–`(i+1, j)`,
/// vertical ones `(i, j)`–`(i, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Traces the level sets of `H` over the chart and locates the equilibria.
pub fn extract_contours(
    chart: &LeafChart,
    h: &SmoothFunction,
    levels: &[f64],
    grid: (usize, usize),
) -> Result<ContourSet> {
    let (nu, nv) = grid;
    check_grid(nu, nv)?;
    if h.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: h.dim(),
        });
    }
    let values = sample(chart, h, nu, nv);
    let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let degenerate = (hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs()))).then_some(lo);

    let mut set = ContourSet {
        chart: *chart,
        grid,
        levels: Vec::with_capacity(levels.len()),
        markers: Vec::new(),
        degenerate,
    };
    let diameter = set.cell_diameter();
    let d = chart.domain;
    let (du, dv) = set.cell_size();
    let node = |i: usize, j: usize| (d.u.0 + i as f64 * du, d.v.0 + j as f64 * dv);
    let mut corner_grad: HashMap<(usize, usize), f64> = HashMap::new();

    for &level in levels {
        if degenerate.is_some() {
            // every point (or none) is on the level; nothing to trace
            set.levels.push(ContourLevel {
                level,
                polylines: Vec::new(),
            });
            continue;
        }
        let val = |i: usize, j: usize| values[j * nu + i];
        let point_on = |e: Edge| -> (f64, f64) {
            let ((i0, j0), (i1, j1)) = match e {
                Edge::H(i, j) => ((i, j), (i + 1, j)),
                Edge::V(i, j) => ((i, j), (i, j + 1)),
            };
            let (a, b) = (val(i0, j0), val(i1, j1));
            let t = ((level - a) / (b - a)).clamp(0.0, 1.0);
            let (p0, p1) = (node(i0, j0), node(i1, j1));
            (p0.0 + t * (p1.0 - p0.0), p0.1 + t * (p1.1 - p0.1))
        };
        let mut segments: Vec<(Edge, Edge, (usize, usize))> = Vec::new();
        for j in 0..nv - 1 {
            for i in 0..nu - 1 {
                let c = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
                if c.iter().any(|x| !x.is_finite()) {
                    continue;
                }
                let above = c.map(|x| x >= level);
                let case = above.iter().enumerate().fold(0, |acc, (b, &a)| acc | (usize::from(a) << b));
                if case == 0 || case == 15 {
                    continue;
                }
                // edges: bottom, right, top, left
                let bottom = Edge::H(i, j);
                let right = Edge::V(i + 1, j);
                let top = Edge::H(i, j + 1);
                let left = Edge::V(i, j);
                let pairs: Vec<(Edge, Edge)> = match case {
                    1 | 14 => vec![(left, bottom)],
                    2 | 13 => vec![(bottom, right)],
                    3 | 12 => vec![(left, right)],
                    4 | 11 => vec![(right, top)],
                    6 | 9 => vec![(bottom, top)],
                    7 | 8 => vec![(left, top)],
                    5 | 10 => {
                        // saddle cell: decide with the value at the centre
                        let (uc, vc) = (node(i, j).0 + 0.5 * du, node(i, j).1 + 0.5 * dv);
                        let centre_above = h.value(&v3(&chart.embed(uc, vc))) >= level;
                        let corner0_above = case == 5;
                        if centre_above == corner0_above {
                            vec![(left, top), (bottom, right)]
                        } else {
                            vec![(left, bottom), (right, top)]
                        }
                    }
                    _ => unreachable!("case index is four bits"),
                };
                for (a, b) in pairs {
                    segments.push((a, b, (i, j)));
                }
            }
        }

        let mut tolerance_of = |cell: (usize, usize)| -> f64 {
            let mut g = 0.0_f64;
            for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let key = (cell.0 + di, cell.1 + dj);
                let norm = *corner_grad.entry(key).or_insert_with(|| {
                    let (u, v) = node(key.0, key.1);
                    chart_gradient(chart, h, u, v).norm()
                });
                g = g.max(norm);
            }
            diameter * g
        };

        let polylines = join_segments(&segments)
            .into_iter()
            .map(|(edges, cells, closed)| {
                let points: Vec<(f64, f64)> = edges.iter().map(|&e| point_on(e)).collect();
                let tolerances: Vec<f64> = cells.iter().map(|&c| tolerance_of(c)).collect();
                Polyline {
                    points,
                    tolerances,
                    closed,
                }
            })
            .collect();
        set.levels.push(ContourLevel { level, polylines });
    }

    set.markers = locate_equilibria(chart, h);
    Ok(set)
}

/// Chains segments that share an edge crossing. Open chains start at their
/// first free end in scan order, closed loops at their first segment. Each
/// vertex is paired with a cell for the tolerance (the worse of its two
/// cells is not needed: a vertex lies on the shared edge of both).
#[allow(clippy::type_complexity)]
fn join_segments(segments: &[(Edge, Edge, (usize, usize))]) -> Vec<(Vec<Edge>, Vec<(usize, usize)>, bool)> {
    let mut incident: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b, _)) in segments.iter().enumerate() {
        incident.entry(*a).or_default().push(k);
        incident.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();

    let walk = |start_seg: usize, start_edge: Edge, used: &mut Vec<bool>| {
        let mut edges = vec![start_edge];
        let mut cells = vec![segments[start_seg].2];
        let mut seg = start_seg;
        let mut at = start_edge;
        loop {
            used[seg] = true;
            let (a, b, cell) = segments[seg];
            let next = if a == at { b } else { a };
            edges.push(next);
            cells.push(cell);
            at = next;
            match incident[&at].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        (edges, cells)
    };

    // open chains first, in scan order of their starting segment
    for k in 0..segments.len() {
        if used[k] {
            continue;
        }
        let (a, b, _) = segments[k];
        let free = [a, b].into_iter().find(|e| incident[e].len() == 1);
        if let Some(start) = free {
            let (edges, cells) = walk(k, start, &mut used);
            out.push((edges, cells, false));
        }
    }
    for k in 0..segments.len() {
        if used[k] {
            continue;
        }
        let (edges, cells) = walk(k, segments[k].0, &mut used);
        let closed = edges.first() == edges.last();
        out.push((edges, cells, closed));
    }
    out
}

/// Equilibria of `K(w)∇H(w)` on the leaf: seeds are local minima of the
/// field norm on a coarse grid; each is refined by Newton's method on the
/// chart gradient of `H` and classified by the linearised flow.
pub fn locate_equilibria(chart: &LeafChart, h: &SmoothFunction) -> Vec<Marker> {
    let d = chart.domain;
    let n = SEED_GRID;
    let du = (d.u.1 - d.u.0) / (n - 1) as f64;
    let dv = (d.v.1 - d.v.0) / (n - 1) as f64;
    let field_norm = |u: f64, v: f64| -> f64 {
        if chart.is_singular(u) {
            return f64::NAN;
        }
        let w = chart.embed(u, v);
        (chart.tensor(&w) * h.gradient(&v3(&w))).norm()
    };
    let norms: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| field_norm(d.u.0 + (k % n) as f64 * du, d.v.0 + (k / n) as f64 * dv))
        .collect();

    let mut markers: Vec<Marker> = Vec::new();
    let push = |m: Marker, markers: &mut Vec<Marker>| {
        let p = Vector3::from(m.point);
        let scale = 1.0 + p.norm();
        if !markers.iter().any(|o| (Vector3::from(o.point) - p).norm() <= 1e-7 * scale) {
            markers.push(m);
        }
    };

    if let LeafKind::Sphere { radius } = chart.kind {
        // the poles are not reached by the angular chart's Newton step
        for (u, z) in [(0.0, radius), (std::f64::consts::PI, -radius)] {
            let w = Vector3::new(0.0, 0.0, z);
            if (chart.tensor(&w) * h.gradient(&v3(&w))).norm() <= 1e-12 * (1.0 + h.gradient(&v3(&w)).norm() * radius) {
                push(classify(chart, h, u, 0.0, w), &mut markers);
            }
        }
    }
    if let LeafKind::Cone = chart.kind {
        let origin = Vector3::zeros();
        markers.push(Marker {
            u: 0.0,
            v: 0.0,
            point: [0.0; 3],
            kind: MarkerKind::SingularPoint,
            energy: h.value(&v3(&origin)),
        });
    }

    // seeds: local minima of the field norm, plus cells where both chart
    // gradient components change sign (the norm alone is badly scaled near
    // the singular edge of the chart)
    let grads: Vec<Vector2<f64>> = (0..n * n)
        .into_par_iter()
        .map(|k| chart_gradient(chart, h, d.u.0 + (k % n) as f64 * du, d.v.0 + (k / n) as f64 * dv))
        .collect();
    let mut seeds: Vec<(f64, f64)> = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let c = norms[j * n + i];
            if !c.is_finite() {
                continue;
            }
            let is_min = (-1i64..=1).all(|dj| {
                (-1i64..=1).all(|di| {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if (di == 0 && dj == 0) || ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                        return true;
                    }
                    let o = norms[jj as usize * n + ii as usize];
                    !o.is_finite() || c <= o
                })
            });
            if is_min {
                seeds.push((d.u.0 + i as f64 * du, d.v.0 + j as f64 * dv));
            }
            if i + 1 < n && j + 1 < n {
                let corners = [grads[j * n + i], grads[j * n + i + 1], grads[(j + 1) * n + i], grads[(j + 1) * n + i + 1]];
                let changes = |c: usize| {
                    let lo = corners.iter().map(|g| g[c]).fold(f64::INFINITY, f64::min);
                    let hi = corners.iter().map(|g| g[c]).fold(f64::NEG_INFINITY, f64::max);
                    lo <= 0.0 && hi >= 0.0
                };
                if corners.iter().all(|g| g.iter().all(|x| x.is_finite())) && changes(0) && changes(1) {
                    seeds.push((d.u.0 + (i as f64 + 0.5) * du, d.v.0 + (j as f64 + 0.5) * dv));
                }
            }
        }
    }
    for start in seeds {
        if let Some((u, v)) = newton_on_chart(chart, h, start) {
            if !d.contains((u, v), 1e-9) || chart.is_singular(u) {
                continue;
            }
            let w = chart.embed(u, v);
            push(classify(chart, h, u, v, w), &mut markers);
        }
    }
    markers
}

fn newton_on_chart(chart: &LeafChart, h: &SmoothFunction, start: (f64, f64)) -> Option<(f64, f64)> {
    let mut x = Vector2::new(start.0, start.1);
    for _ in 0..60 {
        let g = chart_gradient(chart, h, x.x, x.y);
        if !g.iter().all(|c| c.is_finite()) {
            return None;
        }
        let mut hess = Matrix2::zeros();
        for c in 0..2 {
            let eps = 1e-6 * (1.0 + x[c].abs());
            let mut xp = x;
            let mut xm = x;
            xp[c] += eps;
            xm[c] -= eps;
            let col = (chart_gradient(chart, h, xp.x, xp.y) - chart_gradient(chart, h, xm.x, xm.y)) / (2.0 * eps);
            hess.set_column(c, &col);
        }
        let step = hess.lu().solve(&g)?;
        x -= step;
        if !x.iter().all(|c| c.is_finite()) {
            return None;
        }
        if step.amax() <= 1e-14 * (1.0 + x.amax()) {
            return Some((x.x, x.y));
        }
    }
    // accept a stalled iteration only if the gradient is at rounding level
    let g = chart_gradient(chart, h, x.x, x.y);
    (g.norm() <= 1e-10).then_some((x.x, x.y))
}

/// For a Poisson system on `R³` the linearisation at an equilibrium has
/// eigenvalues `0, ±λ` with `λ² = −(sum of principal 2×2 minors)`.
fn classify(chart: &LeafChart, h: &SmoothFunction, u: f64, v: f64, w: Vector3<f64>) -> Marker {
    let field = |x: &Vector3<f64>| chart.tensor(x) * h.gradient(&v3(x));
    let mut jac = DMatrix::zeros(3, 3);
    for c in 0..3 {
        let eps = 1e-6 * (1.0 + w[c].abs());
        let mut wp = w;
        let mut wm = w;
        wp[c] += eps;
        wm[c] -= eps;
        jac.set_column(c, &((field(&wp) - field(&wm)) / (2.0 * eps)));
    }
    let minors = jac[(0, 0)] * jac[(1, 1)] - jac[(0, 1)] * jac[(1, 0)] + jac[(0, 0)] * jac[(2, 2)]
        - jac[(0, 2)] * jac[(2, 0)]
        + jac[(1, 1)] * jac[(2, 2)]
        - jac[(1, 2)] * jac[(2, 1)];
    let scale = jac.norm_squared().max(f64::MIN_POSITIVE);
    let kind = if minors.abs() <= 1e-8 * scale {
        MarkerKind::Degenerate
    } else if minors > 0.0 {
        MarkerKind::Center
    } else {
        MarkerKind::Saddle
    };
    Marker {
        u,
        v,
        point: [w.x, w.y, w.z],
        kind,
        energy: h.value(&v3(&w)),
    }
}

/// Drawing options for [`emit_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    pub width: f64,
    pub height: f64,
    pub stroke_width: f64,
    pub title: String,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 640.0,
            stroke_width: 1.0,
            title: String::new(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_svg(cs: &ContourSet, style: &SvgStyle) -> Vec<u8> {
    let margin = 60.0;
    let (w, h) = (style.width, style.height);
    let d = cs.chart.domain;
    let px = |u: f64| margin + (u - d.u.0) / (d.u.1 - d.u.0) * (w - 2.0 * margin);
    let py = |v: f64| h - margin - (v - d.v.0) / (d.v.1 - d.v.0) * (h - 2.0 * margin);
    let (xlabel, ylabel) = cs.chart.kind.axis_labels();

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    if !style.title.is_empty() {
        let _ = writeln!(s, "<title>{}</title>", escape(&style.title));
    }
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    // axes frame with end ticks
    let _ = writeln!(
        s,
        r#"<g id="axes" stroke="black" fill="none" stroke-width="1"><rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/></g>"#,
        px(d.u.0),
        py(d.v.1),
        px(d.u.1) - px(d.u.0),
        py(d.v.0) - py(d.v.1)
    );
    let _ = writeln!(s, r#"<g id="labels" font-family="sans-serif" font-size="12" fill="black">"#);
    for (u, anchor) in [(d.u.0, "start"), (d.u.1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="{anchor}">{u:.3}</text>"#,
            px(u),
            h - margin + 16.0
        );
    }
    for v in [d.v.0, d.v.1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{v:.3}</text>"#,
            margin - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - margin / 3.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" transform="rotate(-90 {:.3} {:.3})">{}</text>"#,
        margin / 3.0,
        h / 2.0,
        margin / 3.0,
        h / 2.0,
        escape(ylabel)
    );
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        r#"<g id="contours" fill="none" stroke="steelblue" stroke-width="{}">"#,
        style.stroke_width
    );
    for lvl in &cs.levels {
        for poly in &lvl.polylines {
            if poly.points.is_empty() {
                continue;
            }
            let mut path = String::new();
            for (k, &(u, v)) in poly.points.iter().enumerate() {
                let _ = write!(path, "{}{:.3},{:.3} ", if k == 0 { "M" } else { "L" }, px(u), py(v));
            }
            if poly.closed {
                path.push('Z');
            }
            let _ = writeln!(s, r#"<path data-level="{:e}" d="{}"/>"#, lvl.level, path.trim_end());
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="markers" stroke="black">"#);
    for m in &cs.markers {
        let fill = match m.kind {
            MarkerKind::Center => "seagreen",
            MarkerKind::Saddle => "crimson",
            MarkerKind::Degenerate => "orange",
            MarkerKind::SingularPoint => "black",
        };
        let _ = writeln!(
            s,
            r#"<circle class="{:?}" cx="{:.3}" cy="{:.3}" r="4" fill="{fill}"/>"#,
            m.kind,
            px(m.u),
            py(m.v)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s.into_bytes()
}

pub const CSV_HEADER: &str = "level,polyline_id,u,v,w1,w2,w3";

pub fn emit_csv(cs: &ContourSet) -> Vec<u8> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for vx in cs.vertices() {
        write_f64(&mut out, vx.level);
        let _ = write!(out, ",{}", vx.polyline_id);
        for x in [vx.u, vx.v, vx.w.x, vx.w.y, vx.w.z] {
            out.push(',');
            write_f64(&mut out, x);
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// One row of the contour CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvVertex {
    pub level: f64,
    pub polyline_id: usize,
    pub u: f64,
    pub v: f64,
    pub w: [f64; 3],
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvVertex>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::InvalidParameter(format!("expected header `{CSV_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, line)| {
            let row = parse_row(line, 7).map_err(|e| Error::InvalidParameter(format!("row {}: {e}", k + 2)))?;
            Ok(CsvVertex {
                level: row[0],
                polyline_id: row[1] as usize,
                u: row[2],
                v: row[3],
                w: [row[4], row[5], row[6]],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::central_force::{as_smooth_function, Kepler};
    use std::sync::Arc;

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn chart_examples() {
        let hyp = make_chart(LeafKind::Hyperboloid { c: 0.6 }, None, 12.0).unwrap();
        let w = hyp.embed(0.0, 0.0);
        assert!(close(&w, &Vector3::new(0.6f64.sqrt(), 0.0, 0.6f64.sqrt()), 1e-15));
        assert!((hyp.leaf_value(&w) - 0.6).abs() < 1e-15);

        let sphere = make_chart(LeafKind::Sphere { radius: 1.0 }, None, 1.0).unwrap();
        assert!(close(&sphere.embed(0.0, 0.3), &Vector3::new(0.0, 0.0, 1.0), 1e-15));
        assert!(close(&sphere.embed(std::f64::consts::PI, 0.3), &Vector3::new(0.0, 0.0, -1.0), 1e-15));

        let plane = make_chart(LeafKind::PlaneChart { c: 0.6 }, None, 12.0).unwrap();
        assert!(close(&plane.embed(0.36, 0.0), &Vector3::new(0.36, 0.0, 5.0 / 3.0), 1e-15));

        assert!(matches!(make_chart(LeafKind::Hyperboloid { c: -1.0 }, None, 1.0), Err(Error::NoLeaf(_))));
        assert!(matches!(make_chart(LeafKind::PlaneChart { c: -1.0 }, None, 1.0), Err(Error::NoLeaf(_))));
    }

    #[test]
    fn chart_coordinates_invert_the_embedding() {
        for kind in [
            LeafKind::Sphere { radius: 2.0 },
            LeafKind::Hyperboloid { c: 0.6 },
            LeafKind::Cone,
            LeafKind::PlaneChart { c: 0.6 },
        ] {
            let chart = make_chart(kind, None, 12.0).unwrap();
            let (u, v) = (
                0.3 * chart.domain.u.0 + 0.7 * chart.domain.u.1,
                0.6 * chart.domain.v.0 + 0.4 * chart.domain.v.1,
            );
            let (u2, v2) = chart.chart_coords(&chart.embed(u, v)).unwrap();
            assert!((u - u2).abs() < 1e-12 && (v - v2).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for kind in [LeafKind::Sphere { radius: 2.0 }, LeafKind::Hyperboloid { c: 0.6 }, LeafKind::PlaneChart { c: 0.6 }] {
            let chart = make_chart(kind, None, 12.0).unwrap();
            let (u, v) = (1.1, 0.4);
            let (eu, ev) = chart.embed_jacobian(u, v);
            let eps = 1e-6;
            let fu = (chart.embed(u + eps, v) - chart.embed(u - eps, v)) / (2.0 * eps);
            let fv = (chart.embed(u, v + eps) - chart.embed(u, v - eps)) / (2.0 * eps);
            assert!(close(&eu, &fu, 1e-8) && close(&ev, &fv, 1e-8), "{kind:?}");
        }
    }

    #[test]
    fn constant_hamiltonian_is_degenerate() {
        let chart = make_chart(LeafKind::Hyperboloid { c: 1.0 }, None, 4.0).unwrap();
        let h = SmoothFunction::constant(3, 2.5);
        let cs = extract_contours(&chart, &h, &[1.0, 2.5], (16, 16)).unwrap();
        assert_eq!(cs.degenerate, Some(2.5));
        assert!(cs.levels.iter().all(|l| l.polylines.is_empty()));
    }

    #[test]
    fn level_outside_range_is_empty() {
        let chart = make_chart(LeafKind::Hyperboloid { c: 0.6 }, None, 12.0).unwrap();
        let h = as_smooth_function(Arc::new(Kepler));
        let cs = extract_contours(&chart, &h, &[1e6], (32, 32)).unwrap();
        assert!(cs.levels[0].polylines.is_empty());
        assert!(extract_contours(&chart, &h, &[0.0], (1, 5)).is_err());
    }

    #[test]
    fn empty_set_renders_axes_only() {
        let chart = make_chart(LeafKind::Sphere { radius: 1.0 }, None, 1.0).unwrap();
        let cs = ContourSet {
            chart,
            grid: (2, 2),
            levels: Vec::new(),
            markers: Vec::new(),
            degenerate: None,
        };
        let svg = String::from_utf8(emit_svg(&cs, &SvgStyle::default())).unwrap();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains(r#"id="axes""#));
        assert!(!svg.contains("<path"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn joining_closes_a_ring() {
        // a single bump: the level set is one closed loop
        let chart = make_chart(LeafKind::PlaneChart { c: 1.0 }, ChartDomain::new((1.0, 3.0), (-1.0, 1.0)).ok(), 1.0).unwrap();
        let h = SmoothFunction::new(
            "bump",
            3,
            |w| (w[0] - 2.0).powi(2) + w[1] * w[1],
            |w| DVector::from_vec(vec![2.0 * (w[0] - 2.0), 2.0 * w[1], 0.0]),
        );
        let cs = extract_contours(&chart, &h, &[0.25], (41, 41)).unwrap();
        assert_eq!(cs.levels[0].polylines.len(), 1);
        assert!(cs.levels[0].polylines[0].closed);
    }
}
