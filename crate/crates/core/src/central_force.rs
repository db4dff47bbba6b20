//! The reduced central-force problem.
//!
//! An `O(3)`-invariant Hamiltonian on `(q, p) ∈ R³ × R³` depends only on the
//! invariants `w = (‖q‖², q·p, ‖p‖²)`. These obey a closed Lie–Poisson
//! system on `sp(2)*` whose Casimir `C = w₁w₃ − w₂² = ‖q×p‖²` is the
//! squared angular momentum. The full orbit is recovered from `w(t)` and the
//! conserved momentum `μ = q×p` by integrating one phase `θ(t)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::poisson::{self, IntegratorConfig, PoissonStructure, SmoothFunction, Trajectory};
use crate::{Error, Result};

pub type ReducedState = Vector3<f64>;
pub type MomentumVector = Vector3<f64>;

/// Slack allowed in the cone inequality `w₁w₃ − w₂² ≥ −ε`.
pub const CONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalState {
    pub q: Vector3<f64>,
    pub p: Vector3<f64>,
}

impl CanonicalState {
    pub fn new(q: Vector3<f64>, p: Vector3<f64>) -> Self {
        Self { q, p }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.q.x, self.q.y, self.q.z, self.p.x, self.p.y, self.p.z])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            q: Vector3::new(v[0], v[1], v[2]),
            p: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn angular_momentum(&self) -> MomentumVector {
        self.q.cross(&self.p)
    }
}

/// A Hamiltonian expressed in the invariants `w`.
pub trait ReducedHamiltonian: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, w: &ReducedState) -> f64;
    /// `(∂H/∂w₁, ∂H/∂w₂, ∂H/∂w₃)`.
    fn gradient(&self, w: &ReducedState) -> Vector3<f64>;
}

impl fmt::Debug for dyn ReducedHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ReducedHamiltonian({})", self.name())
    }
}

/// `H = w₃/2 − w₁^(−1/2)`, i.e. `½‖p‖² − 1/‖q‖`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kepler;

impl ReducedHamiltonian for Kepler {
    fn name(&self) -> &str {
        "kepler"
    }
    fn value(&self, w: &ReducedState) -> f64 {
        0.5 * w.z - w.x.powf(-0.5)
    }
    fn gradient(&self, w: &ReducedState) -> Vector3<f64> {
        Vector3::new(0.5 * w.x.powf(-1.5), 0.0, 0.5)
    }
}

/// `H = w₁² + w₃² + w₂⁴ − 4w₂²`. On the leaf `C = α` the level `H = 2α`
/// carries two orbits homoclinic to the saddle `(√α, 0, √α)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Homoclinic;

impl ReducedHamiltonian for Homoclinic {
    fn name(&self) -> &str {
        "homoclinic"
    }
    fn value(&self, w: &ReducedState) -> f64 {
        w.x * w.x + w.z * w.z + w.y.powi(4) - 4.0 * w.y * w.y
    }
    fn gradient(&self, w: &ReducedState) -> Vector3<f64> {
        Vector3::new(2.0 * w.x, 4.0 * w.y.powi(3) - 8.0 * w.y, 2.0 * w.z)
    }
}

/// `H = w₁ + w₃ + w₂⁴ − 4w₂²`, the reduction of
/// `‖q‖² + ‖p‖² + (q·p)⁴ − 4(q·p)²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HomoclinicLinear;

impl ReducedHamiltonian for HomoclinicLinear {
    fn name(&self) -> &str {
        "homoclinic_linear"
    }
    fn value(&self, w: &ReducedState) -> f64 {
        w.x + w.z + w.y.powi(4) - 4.0 * w.y * w.y
    }
    fn gradient(&self, w: &ReducedState) -> Vector3<f64> {
        Vector3::new(1.0, 4.0 * w.y.powi(3) - 8.0 * w.y, 1.0)
    }
}

/// `H = cos w₁ + cos w₂ + cos w₃`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cosine;

impl ReducedHamiltonian for Cosine {
    fn name(&self) -> &str {
        "cosine"
    }
    fn value(&self, w: &ReducedState) -> f64 {
        w.x.cos() + w.y.cos() + w.z.cos()
    }
    fn gradient(&self, w: &ReducedState) -> Vector3<f64> {
        -w.map(f64::sin)
    }
}

type ReducedValueFn = Arc<dyn Fn(&ReducedState) -> f64 + Send + Sync>;
type ReducedGradFn = Arc<dyn Fn(&ReducedState) -> Vector3<f64> + Send + Sync>;

/// A reduced Hamiltonian built from closures.
#[derive(Clone)]
pub struct FnHamiltonian {
    name: String,
    value: ReducedValueFn,
    gradient: ReducedGradFn,
}

impl FnHamiltonian {
    pub fn new<V, G>(name: impl Into<String>, value: V, gradient: G) -> Self
    where
        V: Fn(&ReducedState) -> f64 + Send + Sync + 'static,
        G: Fn(&ReducedState) -> Vector3<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl ReducedHamiltonian for FnHamiltonian {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, w: &ReducedState) -> f64 {
        (self.value)(w)
    }
    fn gradient(&self, w: &ReducedState) -> Vector3<f64> {
        (self.gradient)(w)
    }
}

pub const BUILTIN_HAMILTONIANS: [&str; 4] = ["kepler", "homoclinic", "homoclinic_linear", "cosine"];

pub fn builtin_hamiltonian(name: &str) -> Result<Arc<dyn ReducedHamiltonian>> {
    match name {
        "kepler" => Ok(Arc::new(Kepler)),
        "homoclinic" => Ok(Arc::new(Homoclinic)),
        "homoclinic_linear" => Ok(Arc::new(HomoclinicLinear)),
        "cosine" => Ok(Arc::new(Cosine)),
        other => Err(Error::UnknownHamiltonian(other.to_string())),
    }
}

fn v3(w: &DVector<f64>) -> ReducedState {
    Vector3::new(w[0], w[1], w[2])
}

/// Views a reduced Hamiltonian as a [`SmoothFunction`] on `R³`.
pub fn as_smooth_function(h: Arc<dyn ReducedHamiltonian>) -> SmoothFunction {
    let g = h.clone();
    SmoothFunction::new(
        h.name().to_string(),
        3,
        move |w| h.value(&v3(w)),
        move |w| DVector::from_column_slice(g.gradient(&v3(w)).as_slice()),
    )
}

pub fn casimir_value(w: &ReducedState) -> f64 {
    w.x * w.z - w.y * w.y
}

pub fn casimir() -> SmoothFunction {
    SmoothFunction::new(
        "C",
        3,
        |w| w[0] * w[2] - w[1] * w[1],
        |w| DVector::from_vec(vec![w[2], -2.0 * w[1], w[0]]),
    )
}

/// Membership in the cone `w₁ ≥ 0, w₃ ≥ 0, C(w) ≥ −CONE_SLACK`.
pub fn in_cone(w: &ReducedState) -> bool {
    w.x >= 0.0 && w.z >= 0.0 && casimir_value(w) >= -CONE_SLACK
}

/// `(‖q‖², q·p, ‖p‖²)`.
pub fn invariants_map(s: &CanonicalState) -> ReducedState {
    Vector3::new(s.q.norm_squared(), s.q.dot(&s.p), s.p.norm_squared())
}

/// Hamilton's equations for `H(‖q‖², q·p, ‖p‖²)`.
pub fn canonical_vector_field(h: &dyn ReducedHamiltonian, s: &CanonicalState) -> (Vector3<f64>, Vector3<f64>) {
    let g = h.gradient(&invariants_map(s));
    let qdot = s.q * g.y + s.p * (2.0 * g.z);
    let pdot = -s.q * (2.0 * g.x) - s.p * g.y;
    (qdot, pdot)
}

pub fn reduced_tensor(w: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0,
            2.0 * w[0],
            4.0 * w[1],
            -2.0 * w[0],
            0.0,
            2.0 * w[2],
            -4.0 * w[1],
            -2.0 * w[2],
            0.0,
        ],
    )
}

/// The Lie–Poisson structure on `sp(2)*` in the coordinates `w`, with
/// `C = w₁w₃ − w₂²` registered as its Casimir.
pub fn reduced_structure() -> (PoissonStructure, SmoothFunction) {
    let c = casimir();
    (PoissonStructure::new("sp2*", 3, reduced_tensor).with_casimir(c.clone()), c)
}

/// The chain-rule form of the reduced equations.
pub fn reduced_vector_field(h: &dyn ReducedHamiltonian, w: &ReducedState) -> Vector3<f64> {
    let g = h.gradient(w);
    Vector3::new(
        2.0 * w.x * g.y + 4.0 * w.y * g.z,
        -2.0 * w.x * g.x + 2.0 * w.z * g.z,
        -4.0 * w.y * g.x - 2.0 * w.z * g.y,
    )
}

/// Integrates the reduced system with audits `H` and `C`; columns are
/// labelled `w1,w2,w3`.
pub fn integrate_reduced(
    h: Arc<dyn ReducedHamiltonian>,
    w0: &ReducedState,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_reduced_every(h, w0, t_end, cfg, 1)
}

pub fn integrate_reduced_every(
    h: Arc<dyn ReducedHamiltonian>,
    w0: &ReducedState,
    t_end: f64,
    cfg: &IntegratorConfig,
    every: usize,
) -> Result<Trajectory> {
    if !in_cone(w0) {
        return Err(Error::InvalidParameter(format!("w0 = {:?} is outside the cone", w0.as_slice())));
    }
    let (p, _) = reduced_structure();
    let hf = as_smooth_function(h);
    let mut traj = poisson::integrate_every(&p, &hf, &DVector::from_column_slice(w0.as_slice()), t_end, cfg, every)?;
    traj.labels = vec!["w1".into(), "w2".into(), "w3".into()];
    Ok(traj)
}

/// The unreduced system on `R⁶` with the canonical tensor and
/// `H̄(q, p) = H(‖q‖², q·p, ‖p‖²)`; `q×p` components are registered as
/// conserved audits.
pub fn canonical_system(h: Arc<dyn ReducedHamiltonian>) -> (PoissonStructure, SmoothFunction) {
    let mut j = DMatrix::zeros(6, 6);
    for i in 0..3 {
        j[(i, i + 3)] = 1.0;
        j[(i + 3, i)] = -1.0;
    }
    let mut p = PoissonStructure::new("canonical", 6, move |_| j.clone());
    for axis in 0..3 {
        p = p.with_casimir(SmoothFunction::new(
            ["Lx", "Ly", "Lz"][axis],
            6,
            move |z| CanonicalState::from_vector(z).angular_momentum()[axis],
            move |z| {
                // d(q×p)_axis
                let s = CanonicalState::from_vector(z);
                let e = Vector3::ith(axis, 1.0);
                let dq = s.p.cross(&e);
                let dp = e.cross(&s.q);
                DVector::from_vec(vec![dq.x, dq.y, dq.z, dp.x, dp.y, dp.z])
            },
        ));
    }
    let (hv, hg) = (h.clone(), h);
    let hbar = SmoothFunction::new(
        format!("{}_canonical", hv.name()),
        6,
        move |z| hv.value(&invariants_map(&CanonicalState::from_vector(z))),
        move |z| {
            let s = CanonicalState::from_vector(z);
            let g = hg.gradient(&invariants_map(&s));
            let dq = s.q * (2.0 * g.x) + s.p * g.y;
            let dp = s.q * g.y + s.p * (2.0 * g.z);
            DVector::from_vec(vec![dq.x, dq.y, dq.z, dp.x, dp.y, dp.z])
        },
    );
    (p, hbar)
}

pub fn integrate_canonical(
    h: Arc<dyn ReducedHamiltonian>,
    s0: &CanonicalState,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let (p, hbar) = canonical_system(h);
    let mut traj = poisson::integrate(&p, &hbar, &s0.to_vector(), t_end, cfg)?;
    traj.labels = ["qx", "qy", "qz", "px", "py", "pz"].iter().map(|s| s.to_string()).collect();
    Ok(traj)
}

/// Initial data in the plane `z = 0` with `q(0)` on the positive `x`-axis:
/// `q = (√w₁, 0, 0)`, `p = (w₂/√w₁, √(w₃ − w₂²/w₁), 0)`, `μ = (0, 0, √C)`.
pub fn align_initial_frame(w0: &ReducedState) -> Result<(CanonicalState, MomentumVector)> {
    if !(w0.x > 0.0) {
        return Err(Error::DegenerateData(format!(
            "w1 = {} must be positive to place q on the x-axis",
            w0.x
        )));
    }
    let c = casimir_value(w0);
    if !(c > 0.0) {
        return Err(Error::DegenerateData(format!(
            "C = {c:e} is not positive; with zero angular momentum q and p are collinear (use collinear_frame)"
        )));
    }
    let s = frame_at(w0);
    let mu = s.angular_momentum();
    Ok((s, mu))
}

fn frame_at(w: &ReducedState) -> CanonicalState {
    let r = w.x.sqrt();
    let py = (w.z - w.y * w.y / w.x).max(0.0).sqrt();
    CanonicalState::new(Vector3::new(r, 0.0, 0.0), Vector3::new(w.y / r, py, 0.0))
}

/// Zero angular momentum: `q` and `p` both on the positive `x`-axis chart,
/// `q = (√w₁, 0, 0)`, `p = (w₂/√w₁, 0, 0)`.
pub fn collinear_frame(w: &ReducedState) -> Result<CanonicalState> {
    if !(w.x > 0.0) {
        return Err(Error::SingularChart { w1: w.x });
    }
    let r = w.x.sqrt();
    Ok(CanonicalState::new(Vector3::new(r, 0.0, 0.0), Vector3::new(w.y / r, 0.0, 0.0)))
}

/// `θ̇ = 2 (∂H/∂w₃)(w) ‖μ‖ / w₁`.
pub fn reconstruction_rate(h: &dyn ReducedHamiltonian, w: &ReducedState, mu_norm: f64) -> Result<f64> {
    if !(w.x > 0.0) {
        return Err(Error::SingularChart { w1: w.x });
    }
    Ok(2.0 * h.gradient(w).z * mu_norm / w.x)
}

/// Period `2π w₁ / (2 (∂H/∂w₃) ‖μ‖)` of the full motion over a relative
/// equilibrium.
pub fn relative_equilibrium_period(h: &dyn ReducedHamiltonian, w: &ReducedState, mu_norm: f64) -> Result<f64> {
    let rate = reconstruction_rate(h, w, mu_norm)?;
    if rate == 0.0 {
        return Err(Error::DegenerateData("phase rate vanishes; the full motion is steady".into()));
    }
    Ok(2.0 * PI / rate.abs())
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub states: Vec<CanonicalState>,
    pub mu: MomentumVector,
}

impl ReconstructionResult {
    /// CSV view with columns `qx..pz,theta`.
    pub fn to_trajectory(&self) -> Trajectory {
        let labels = ["qx", "qy", "qz", "px", "py", "pz", "theta"];
        let mut traj = Trajectory::new(labels.iter().map(|s| s.to_string()).collect());
        for ((t, s), th) in self.times.iter().zip(&self.states).zip(&self.theta) {
            let mut v = s.to_vector().as_slice().to_vec();
            v.push(*th);
            traj.push(*t, DVector::from_vec(v), &[]);
        }
        traj
    }

    /// `max_t ‖q(t)×p(t) − μ‖`.
    pub fn momentum_drift(&self) -> f64 {
        self.states
            .iter()
            .map(|s| (s.angular_momentum() - self.mu).norm())
            .fold(0.0, f64::max)
    }
}

/// Rotation about the `z`-axis by `θ`.
fn rotate_z(v: &Vector3<f64>, theta: f64) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Rebuilds `(q(t), p(t))` from a reduced trajectory: `θ(t)` by cumulative
/// trapezoidal quadrature of the phase rate on the trajectory grid, and
/// `q = A(θ)(√w₁, 0, 0)`, `p = A(θ)(w₂/√w₁, √(w₃ − w₂²/w₁), 0)` with
/// `A(θ)` the rotation about `z`. A vanishing `mu_norm` selects the
/// collinear chart.
pub fn reconstruct_orbit(h: &dyn ReducedHamiltonian, reduced: &Trajectory, mu_norm: f64) -> Result<ReconstructionResult> {
    if reduced.labels.len() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: reduced.labels.len(),
        });
    }
    let ws: Vec<ReducedState> = reduced.states.iter().map(v3).collect();
    if let Some(bad) = ws.iter().find(|w| !(w.x > 0.0)) {
        return Err(Error::SingularChart { w1: bad.x });
    }
    let mut theta = Vec::with_capacity(ws.len());
    let mut states = Vec::with_capacity(ws.len());
    if mu_norm == 0.0 {
        for w in &ws {
            theta.push(0.0);
            states.push(collinear_frame(w)?);
        }
        return Ok(ReconstructionResult {
            times: reduced.times.clone(),
            theta,
            states,
            mu: Vector3::zeros(),
        });
    }

    let rates: Vec<f64> = ws
        .iter()
        .map(|w| reconstruction_rate(h, w, mu_norm))
        .collect::<Result<_>>()?;
    let mut acc = 0.0;
    theta.push(0.0);
    for i in 1..ws.len() {
        acc += 0.5 * (reduced.times[i] - reduced.times[i - 1]) * (rates[i] + rates[i - 1]);
        theta.push(acc);
    }
    for (w, th) in ws.iter().zip(&theta) {
        let base = frame_at(w);
        states.push(CanonicalState::new(rotate_z(&base.q, *th), rotate_z(&base.p, *th)));
    }
    Ok(ReconstructionResult {
        times: reduced.times.clone(),
        theta,
        states,
        mu: Vector3::new(0.0, 0.0, mu_norm),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelativePeriodicity {
    /// The reduced trajectory starts at an equilibrium (a relative
    /// equilibrium of the full system).
    FixedPoint,
    /// First return after `period` with accumulated phase `phase = θ(T)`.
    Periodic { period: f64, phase: f64 },
    NoReturn,
}

/// Default first-return tolerance, relative to `‖w(0)‖`.
pub const RETURN_TOLERANCE: f64 = 1e-6;

/// Detects the first return of a reduced trajectory to its initial point.
///
/// Crossings of the section through `w(0)` normal to `ẇ(0)` are located on
/// the cubic Hermite interpolant of the samples and refined by bisection; a
/// crossing counts as a return when it lies within
/// `RETURN_TOLERANCE·‖w(0)‖` of `w(0)` and the velocity points the same way.
pub fn detect_relative_periodic(
    h: &dyn ReducedHamiltonian,
    reduced: &Trajectory,
    mu_norm: f64,
) -> Result<RelativePeriodicity> {
    detect_relative_periodic_with_tolerance(h, reduced, mu_norm, RETURN_TOLERANCE)
}

pub fn detect_relative_periodic_with_tolerance(
    h: &dyn ReducedHamiltonian,
    reduced: &Trajectory,
    mu_norm: f64,
    rel_tol: f64,
) -> Result<RelativePeriodicity> {
    let ws: Vec<ReducedState> = reduced.states.iter().map(v3).collect();
    let Some(&w0) = ws.first() else {
        return Ok(RelativePeriodicity::NoReturn);
    };
    let v0 = reduced_vector_field(h, &w0);
    let scale = w0.norm().max(f64::MIN_POSITIVE);
    if v0.norm() <= 1e-12 * (1.0 + scale) {
        return Ok(RelativePeriodicity::FixedPoint);
    }
    let delta = rel_tol * scale;
    let section = |w: &ReducedState| (w - w0).dot(&v0);
    let vel: Vec<Vector3<f64>> = ws.iter().map(|w| reduced_vector_field(h, w)).collect();

    let mut theta_acc = 0.0;
    let rate = |w: &ReducedState| if mu_norm == 0.0 { Ok(0.0) } else { reconstruction_rate(h, w, mu_norm) };
    let mut left = false;
    for i in 1..ws.len() {
        let (ta, tb) = (reduced.times[i - 1], reduced.times[i]);
        let (ga, gb) = (section(&ws[i - 1]), section(&ws[i]));
        if (ws[i] - w0).norm() > 100.0 * delta.max(1e-300) || ga < 0.0 {
            left = true;
        }
        if left && ga < 0.0 && gb >= 0.0 {
            let dt = tb - ta;
            let herm = |s: f64| hermite(&ws[i - 1], &vel[i - 1], &ws[i], &vel[i], dt, s);
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if section(&herm(mid)) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let s = 0.5 * (lo + hi);
            let w_ret = herm(s);
            if (w_ret - w0).norm() <= delta && reduced_vector_field(h, &w_ret).dot(&v0) > 0.0 {
                let r_a = rate(&ws[i - 1])?;
                let r_t = rate(&w_ret)?;
                let phase = theta_acc + 0.5 * s * dt * (r_a + r_t);
                return Ok(RelativePeriodicity::Periodic {
                    period: ta + s * dt,
                    phase,
                });
            }
        }
        theta_acc += 0.5 * (tb - ta) * (rate(&ws[i - 1])? + rate(&ws[i])?);
    }
    Ok(RelativePeriodicity::NoReturn)
}

fn hermite(
    a: &Vector3<f64>,
    va: &Vector3<f64>,
    b: &Vector3<f64>,
    vb: &Vector3<f64>,
    dt: f64,
    s: f64,
) -> Vector3<f64> {
    let s2 = s * s;
    let s3 = s2 * s;
    a * (2.0 * s3 - 3.0 * s2 + 1.0) + va * (dt * (s3 - 2.0 * s2 + s)) + b * (-2.0 * s3 + 3.0 * s2) + vb * (dt * (s3 - s2))
}

/// The point `(w₁, 0, C/w₁)` on the leaf `C` where the Kepler energy equals
/// `energy`; `outer` selects the apocentre for bound orbits.
pub fn kepler_turning_point(c: f64, energy: f64, outer: bool) -> Result<ReducedState> {
    // with x = w₁^(−1/2): (C/2) x² − x − E = 0
    let a = 0.5 * c;
    let disc = 1.0 + 4.0 * a * energy;
    if !(c > 0.0) || disc < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "no Kepler turning point with C = {c}, H = {energy}"
        )));
    }
    let roots = [(1.0 - disc.sqrt()) / (2.0 * a), (1.0 + disc.sqrt()) / (2.0 * a)];
    let x = if energy < 0.0 && outer { roots[0] } else { roots[1] };
    let w1 = 1.0 / (x * x);
    Ok(Vector3::new(w1, 0.0, c / w1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson::hamiltonian_vector_field;
    use approx_eq::*;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    const CIRC: [f64; 3] = [0.36, 0.0, 5.0 / 3.0];

    fn circ() -> ReducedState {
        Vector3::from(CIRC)
    }

    #[test]
    fn invariants_examples() {
        let s = CanonicalState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(invariants_map(&s), Vector3::new(1.0, 0.0, 1.0));
        let s = CanonicalState::new(Vector3::new(1.0, 2.0, 2.0), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(invariants_map(&s), Vector3::new(9.0, 1.0, 1.0));
    }

    #[test]
    fn reduced_structure_examples() {
        let (p, c) = reduced_structure();
        assert_eq!(p.tensor(&DVector::from_vec(vec![1.0, 0.0, 1.0]))[(0, 1)], 2.0);
        assert_eq!(c.value(&DVector::from_vec(vec![2.0, 1.0, 2.0])), 3.0);
        // {w1, w3} = 4 w2
        let b = poisson::bracket(
            &p,
            &SmoothFunction::coordinate(3, 0),
            &SmoothFunction::coordinate(3, 2),
            &DVector::from_vec(vec![1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(b, 4.0);
    }

    #[test]
    fn kepler_circular_point() {
        let k = Kepler;
        assert!(close(k.value(&circ()), -5.0 / 6.0, 1e-14));
        assert!(reduced_vector_field(&k, &circ()).amax() < 1e-14);
        let g = k.gradient(&circ());
        assert!(close(g.x, 0.5 * 0.36f64.powf(-1.5), 1e-14) && g.y == 0.0 && g.z == 0.5);
        let (p, _) = reduced_structure();
        let v = hamiltonian_vector_field(&p, &as_smooth_function(Arc::new(Kepler)), &DVector::from_column_slice(&CIRC))
            .unwrap();
        assert!(v.amax() < 1e-14);
    }

    #[test]
    fn kepler_circular_canonical_field() {
        let s = CanonicalState::new(Vector3::new(0.6, 0.0, 0.0), Vector3::new(0.0, (1.0f64 / 0.6).sqrt(), 0.0));
        let (qd, pd) = canonical_vector_field(&Kepler, &s);
        assert!((qd - s.p).amax() < 1e-15);
        // ṗ = −q/‖q‖³
        assert!((pd + s.q / 0.216).amax() < 1e-12);
    }

    #[test]
    fn homoclinic_value_on_its_leaf() {
        let w = Vector3::new(3f64.sqrt(), 2f64.sqrt(), 3f64.sqrt());
        assert!(close(Homoclinic.value(&w), 2.0, 1e-12));
        assert!(close(casimir_value(&w), 1.0, 1e-12));
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!(builtin_hamiltonian("morse"), Err(Error::UnknownHamiltonian(_))));
        for name in BUILTIN_HAMILTONIANS {
            assert_eq!(builtin_hamiltonian(name).unwrap().name(), name);
        }
    }

    #[test]
    fn casimir_hamiltonian_generates_nothing() {
        let h = FnHamiltonian::new("C", casimir_value, |w| Vector3::new(w.z, -2.0 * w.y, w.x));
        for w in [Vector3::new(1.0, 0.2, 3.0), Vector3::new(0.1, -2.0, 50.0)] {
            assert!(reduced_vector_field(&h, &w).amax() < 1e-13);
        }
    }

    #[test]
    fn w2_only_hamiltonian_scales_q_and_p() {
        let h = FnHamiltonian::new("dilation", |w| w.y.sin(), |w| Vector3::new(0.0, w.y.cos(), 0.0));
        let s = CanonicalState::new(Vector3::new(0.3, -1.0, 2.0), Vector3::new(1.0, 0.5, -0.2));
        let g = s.q.dot(&s.p).cos();
        let (qd, pd) = canonical_vector_field(&h, &s);
        assert!((qd - s.q * g).amax() < 1e-15 && (pd + s.p * g).amax() < 1e-15);
    }

    #[test]
    fn frame_examples() {
        let (s, mu) = align_initial_frame(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.q, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(s.p, Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(mu, Vector3::new(0.0, 0.0, 1.0));

        let (s, mu) = align_initial_frame(&circ()).unwrap();
        assert!((s.q - Vector3::new(0.6, 0.0, 0.0)).amax() < 1e-15);
        assert!((s.p - Vector3::new(0.0, (5.0f64 / 3.0).sqrt(), 0.0)).amax() < 1e-15);
        assert!((mu.z - 0.6f64.sqrt()).abs() < 1e-15);
        assert!((invariants_map(&s) - circ()).amax() < 1e-15);
    }

    #[test]
    fn frame_rejects_degenerate_data() {
        assert!(matches!(align_initial_frame(&Vector3::new(0.0, 0.0, 1.0)), Err(Error::DegenerateData(_))));
        assert!(matches!(align_initial_frame(&Vector3::new(1.0, 1.0, 1.0)), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn phase_rate_examples() {
        let mu = 0.6f64.sqrt();
        let r = reconstruction_rate(&Kepler, &circ(), mu).unwrap();
        assert!(close(r, 0.6f64.powf(-1.5), 1e-12));
        assert!(close(reconstruction_rate(&Kepler, &circ(), 2.0 * mu).unwrap(), 2.0 * r, 1e-12));
        assert_eq!(reconstruction_rate(&Homoclinic, &Vector3::new(1.0, 0.0, 0.0), 1.0).unwrap(), 0.0);
        let no_w3 = FnHamiltonian::new("V", |w| -1.0 / w.x.sqrt(), |w| Vector3::new(0.5 * w.x.powf(-1.5), 0.0, 0.0));
        assert_eq!(reconstruction_rate(&no_w3, &circ(), mu).unwrap(), 0.0);
        assert!(matches!(
            reconstruction_rate(&Kepler, &Vector3::new(0.0, 0.0, 1.0), mu),
            Err(Error::SingularChart { .. })
        ));
        let period = relative_equilibrium_period(&Kepler, &circ(), mu).unwrap();
        assert!(close(period, 2.0 * PI * 0.6f64.powf(1.5), 1e-12));
    }

    #[test]
    fn relative_equilibrium_reconstructs_uniform_rotation() {
        let mu = 0.6f64.sqrt();
        let traj = integrate_reduced(Arc::new(Kepler), &circ(), 3.0, &IntegratorConfig::midpoint(1e-2)).unwrap();
        let rec = reconstruct_orbit(&Kepler, &traj, mu).unwrap();
        let rate = 0.6f64.powf(-1.5);
        for (t, th) in rec.times.iter().zip(&rec.theta) {
            assert!(close(*th, rate * t, 1e-10));
        }
        assert!(rec.momentum_drift() < 1e-12);
        assert_eq!(detect_relative_periodic(&Kepler, &traj, mu).unwrap(), RelativePeriodicity::FixedPoint);
    }

    #[test]
    fn zero_momentum_reconstruction_is_collinear() {
        let w0 = Vector3::new(1.0, -0.5, 0.25);
        let traj = integrate_reduced(Arc::new(Kepler), &w0, 0.5, &IntegratorConfig::midpoint(1e-3)).unwrap();
        let rec = reconstruct_orbit(&Kepler, &traj, 0.0).unwrap();
        for (s, w) in rec.states.iter().zip(&traj.states) {
            assert!(s.q.y == 0.0 && s.q.z == 0.0 && s.p.y == 0.0 && s.p.z == 0.0);
            assert!(s.q.x > 0.0);
            assert!((invariants_map(s) - v3(w)).amax() < 1e-9);
        }
    }

    #[test]
    fn turning_points_have_requested_energy() {
        for (e, outer) in [(-0.5, true), (-0.5, false), (0.3, false)] {
            let w = kepler_turning_point(0.6, e, outer).unwrap();
            assert!(close(Kepler.value(&w), e, 1e-12));
            assert!(close(casimir_value(&w), 0.6, 1e-12));
        }
        let w = kepler_turning_point(0.6, -5.0 / 6.0, true).unwrap();
        assert!((w - circ()).amax() < 1e-6);
        assert!(kepler_turning_point(0.6, -1.0, true).is_err());
    }

    #[test]
    fn cone_membership() {
        assert!(in_cone(&Vector3::new(1.0, 1.0, 1.0)));
        assert!(!in_cone(&Vector3::new(1.0, 1.1, 1.0)));
        assert!(!in_cone(&Vector3::new(-1.0, 0.0, 1.0)));
    }
}
