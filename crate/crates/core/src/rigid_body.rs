//! The free rigid body.
//!
//! Body angular momentum `m ∈ R³` evolves by the Euler equations, which are
//! the Lie–Poisson system on `so(3)*` with the cross-product tensor `K(m)`,
//! Hamiltonian `H = ½ Σ mᵢ²/Iᵢ` and Casimir
//! `C = ‖m‖²`. The full motion adds the attitude `Q ∈ SO(3)` with
//! `Q̇ = Q·hat(ω)`, `Iⱼωⱼ = mⱼ`; the spatial momentum `Q·m` is conserved.

use nalgebra::{Complex, DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;

use crate::linalg::{hat, rotation_angle, rotation_axis, so3_exp};
use crate::poisson::{self, Audit, IntegratorConfig, PoissonStructure, SmoothFunction, Trajectory};
use crate::{Error, Result};

pub type BodyMomentum = Vector3<f64>;

/// Principal moments with `I1 ≥ I2 ≥ I3 > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InertiaTensor {
    i1: f64,
    i2: f64,
    i3: f64,
}

impl InertiaTensor {
    pub fn new(i1: f64, i2: f64, i3: f64) -> Result<Self> {
        if !(i3 > 0.0 && i2 >= i3 && i1 >= i2 && i1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "principal moments must satisfy I1 >= I2 >= I3 > 0, got ({i1}, {i2}, {i3})"
            )));
        }
        Ok(Self { i1, i2, i3 })
    }

    pub fn moments(&self) -> Vector3<f64> {
        Vector3::new(self.i1, self.i2, self.i3)
    }

    /// `ω` with `Iⱼ ωⱼ = mⱼ`.
    pub fn angular_velocity(&self, m: &BodyMomentum) -> Vector3<f64> {
        Vector3::new(m.x / self.i1, m.y / self.i2, m.z / self.i3)
    }

    pub fn energy(&self, m: &BodyMomentum) -> f64 {
        0.5 * (m.x * m.x / self.i1 + m.y * m.y / self.i2 + m.z * m.z / self.i3)
    }
}

/// A rotation matrix: `‖QᵀQ − I‖ ≤ 1e-9` and `det Q > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attitude(Matrix3<f64>);

impl Attitude {
    pub fn new(q: Matrix3<f64>) -> Result<Self> {
        let defect = (q.transpose() * q - Matrix3::identity()).amax();
        if defect > 1e-9 || q.determinant() <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "attitude is not a rotation (orthogonality defect {defect:e}, det {})",
                q.determinant()
            )));
        }
        Ok(Self(q))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn orthogonality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullRigidState {
    pub attitude: Attitude,
    pub m: BodyMomentum,
}

impl FullRigidState {
    pub fn new(attitude: Attitude, m: BodyMomentum) -> Self {
        Self { attitude, m }
    }

    /// The conserved spatial angular momentum `Q·m`.
    pub fn spatial_momentum(&self) -> Vector3<f64> {
        self.attitude.matrix() * self.m
    }
}

/// Right-hand side of the Euler equations.
pub fn euler_vector_field(inertia: &InertiaTensor, m: &BodyMomentum) -> BodyMomentum {
    let (i1, i2, i3) = (inertia.i1, inertia.i2, inertia.i3);
    Vector3::new(
        (1.0 / i3 - 1.0 / i2) * m.y * m.z,
        (1.0 / i1 - 1.0 / i3) * m.z * m.x,
        (1.0 / i2 - 1.0 / i1) * m.x * m.y,
    )
}

/// The cross-product Poisson tensor on `so(3)*`.
pub fn so3_tensor(m: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, -m[2], m[1], m[2], 0.0, -m[0], -m[1], m[0], 0.0])
}

/// Poisson structure, kinetic energy and total angular momentum.
#[derive(Debug, Clone)]
pub struct RigidBodySystem {
    pub structure: PoissonStructure,
    pub hamiltonian: SmoothFunction,
    pub casimir: SmoothFunction,
}

pub fn casimir() -> SmoothFunction {
    SmoothFunction::new("C", 3, |m| m.norm_squared(), |m| m * 2.0)
}

pub fn rigid_body_structure(inertia: &InertiaTensor) -> RigidBodySystem {
    let c = casimir();
    let structure = PoissonStructure::new("so3*", 3, so3_tensor).with_casimir(c.clone());
    let inv = inertia.moments().map(|i| 1.0 / i);
    let hamiltonian = SmoothFunction::new(
        "H",
        3,
        move |m| 0.5 * (m[0] * m[0] * inv.x + m[1] * m[1] * inv.y + m[2] * m[2] * inv.z),
        move |m| DVector::from_vec(vec![m[0] * inv.x, m[1] * inv.y, m[2] * inv.z]),
    );
    RigidBodySystem {
        structure,
        hamiltonian,
        casimir: c,
    }
}

/// `(Q̇, ṁ) = (Q·hat(ω), m × ω)`.
pub fn full_vector_field(inertia: &InertiaTensor, s: &FullRigidState) -> (Matrix3<f64>, Vector3<f64>) {
    let omega = inertia.angular_velocity(&s.m);
    (s.attitude.matrix() * hat(&omega), s.m.cross(&omega))
}

/// Full rigid-body trajectory; audits are `H`, `C`, `Jx`, `Jy`, `Jz`.
#[derive(Debug, Clone)]
pub struct FullTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<FullRigidState>,
    pub audits: Vec<Audit>,
}

impl FullTrajectory {
    pub fn audit(&self, name: &str) -> Option<&Audit> {
        self.audits.iter().find(|a| a.name == name)
    }

    /// `max_t ‖Q(t)m(t) − Q(0)m(0)‖`.
    pub fn spatial_momentum_drift(&self) -> f64 {
        let Some(first) = self.states.first() else { return 0.0 };
        let j0 = first.spatial_momentum();
        self.states
            .iter()
            .map(|s| (s.spatial_momentum() - j0).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_orthogonality_defect(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.attitude.orthogonality_defect())
            .fold(0.0, f64::max)
    }

    /// Flattened view with columns `m1,m2,m3,Q11..Q33` for CSV output.
    pub fn to_trajectory(&self) -> Trajectory {
        let mut labels: Vec<String> = vec!["m1".into(), "m2".into(), "m3".into()];
        for r in 1..=3 {
            for c in 1..=3 {
                labels.push(format!("Q{r}{c}"));
            }
        }
        let mut traj = Trajectory::new(labels);
        traj.declare_audits(&self.audits.iter().map(|a| a.name.clone()).collect::<Vec<_>>());
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let q = s.attitude.matrix();
            let mut v = vec![s.m.x, s.m.y, s.m.z];
            for r in 0..3 {
                for c in 0..3 {
                    v.push(q[(r, c)]);
                }
            }
            let audit_values: Vec<f64> = self.audits.iter().map(|a| a.values[i]).collect();
            traj.push(*t, DVector::from_vec(v), &audit_values);
        }
        traj
    }
}

/// Integrates the full equations: the momentum by the Poisson integrator of
/// `cfg`, the attitude by `Q⁺ = Q·exp(h·hat(ω̄))` with `ω̄` the angular
/// velocity of the averaged momentum `(m + m⁺)/2`.
pub fn integrate_full(
    inertia: &InertiaTensor,
    s0: &FullRigidState,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<FullTrajectory> {
    cfg.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end must be positive, got {t_end}")));
    }
    let sys = rigid_body_structure(inertia);
    let n = (t_end / cfg.step - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / n as f64;

    let mut out = FullTrajectory {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        audits: ["H", "C", "Jx", "Jy", "Jz"]
            .iter()
            .map(|name| Audit {
                name: name.to_string(),
                values: Vec::with_capacity(n + 1),
            })
            .collect(),
    };
    let mut record = |t: f64, s: FullRigidState| {
        let j = s.spatial_momentum();
        let values = [inertia.energy(&s.m), s.m.norm_squared(), j.x, j.y, j.z];
        for (a, v) in out.audits.iter_mut().zip(values) {
            a.values.push(v);
        }
        out.times.push(t);
        out.states.push(s);
    };

    let mut s = *s0;
    record(0.0, s);
    for i in 0..n {
        let t = i as f64 * dt;
        let m = DVector::from_column_slice(s.m.as_slice());
        let m_next = poisson::integrator_step(&sys.structure, &sys.hamiltonian, &m, dt, cfg).map_err(|e| {
            Error::IntegrationFailed {
                time: t,
                state: m.iter().copied().collect(),
                source: Box::new(e),
            }
        })?;
        let m_next = Vector3::new(m_next[0], m_next[1], m_next[2]);
        let omega_bar = inertia.angular_velocity(&((s.m + m_next) * 0.5));
        let q_next = s.attitude.matrix() * so3_exp(&(omega_bar * dt));
        s = FullRigidState {
            attitude: Attitude(q_next),
            m: m_next,
        };
        record((i + 1) as f64 * dt, s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisBehaviour {
    /// Launched exactly on a principal axis; nothing moves.
    Steady,
    StableOscillation,
    HeteroclinicTransit,
}

/// Relative attitude between two successive extrema of the launch-axis
/// momentum component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Twist {
    pub t_start: f64,
    pub t_end: f64,
    /// Rotation angle of `Q(t_end)·Q(t_start)ᵀ`, in `[0, π]`.
    pub angle: f64,
    /// Angle between that rotation's axis and the spatial momentum.
    pub axis_to_momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipReport {
    /// 1-based principal axis carrying the largest initial momentum.
    pub launch_axis: usize,
    pub behaviour: AxisBehaviour,
    /// First time the launch-axis component changes sign.
    pub first_sign_change: Option<f64>,
    /// `(t, m_axis(t))` at the extrema of the launch-axis component.
    pub extrema: Vec<(f64, f64)>,
    /// Twists from the launch and between successive extrema.
    pub twists: Vec<Twist>,
    /// `max_t ‖m(t)/‖m(t)‖ − m(0)/‖m(0)‖‖`.
    pub max_direction_deviation: f64,
    /// Distance of `m/‖m‖` from `−e_axis·sign(m_axis(0))` at the first extremum
    /// after the first sign change.
    pub reversal_error: Option<f64>,
}

/// Launches the body near a principal axis and reports whether (and how)
/// it flips over.
pub fn hammer_throw(
    inertia: &InertiaTensor,
    s0: &FullRigidState,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<(FullTrajectory, FlipReport)> {
    let traj = integrate_full(inertia, s0, t_end, cfg)?;
    let report = flip_report(inertia, &traj);
    Ok((traj, report))
}

fn flip_report(inertia: &InertiaTensor, traj: &FullTrajectory) -> FlipReport {
    let m0 = traj.states[0].m;
    let axis = (0..3).max_by(|&a, &b| m0[a].abs().total_cmp(&m0[b].abs())).unwrap_or(1);
    let dir0 = m0.normalize();
    let max_dev = traj
        .states
        .iter()
        .map(|s| (s.m.normalize() - dir0).norm())
        .fold(0.0, f64::max);

    let off_axis = (0..3).filter(|&i| i != axis).map(|i| m0[i].abs()).fold(0.0, f64::max);
    if off_axis == 0.0 {
        return FlipReport {
            launch_axis: axis + 1,
            behaviour: AxisBehaviour::Steady,
            first_sign_change: None,
            extrema: Vec::new(),
            twists: Vec::new(),
            max_direction_deviation: max_dev,
            reversal_error: None,
        };
    }

    let comp = |i: usize| traj.states[i].m[axis];
    let first_sign_change = (1..traj.states.len())
        .find(|&i| comp(i).signum() != comp(0).signum() && comp(i) != 0.0)
        .map(|i| {
            let (a, b) = (comp(i - 1), comp(i));
            let (ta, tb) = (traj.times[i - 1], traj.times[i]);
            ta + (tb - ta) * a / (a - b)
        });

    // extrema: sign changes of the analytic rate of the launch-axis component
    let rate = |i: usize| euler_vector_field(inertia, &traj.states[i].m)[axis];
    let mut extrema_idx = Vec::new();
    let mut extrema = Vec::new();
    for i in 1..traj.states.len() {
        let (ra, rb) = (rate(i - 1), rate(i));
        if ra != 0.0 && ra.signum() != rb.signum() {
            let (ta, tb) = (traj.times[i - 1], traj.times[i]);
            let t = ta + (tb - ta) * ra / (ra - rb);
            let idx = if (t - ta) < (tb - t) { i - 1 } else { i };
            extrema_idx.push(idx);
            extrema.push((t, comp(idx)));
        }
    }

    let j = traj.states[0].spatial_momentum().normalize();
    let mut anchors = vec![0usize];
    anchors.extend(extrema_idx.iter().copied());
    let twists = anchors
        .windows(2)
        .map(|w| {
            let (qa, qb) = (traj.states[w[0]].attitude.matrix(), traj.states[w[1]].attitude.matrix());
            let r = qb * qa.transpose();
            let axis_vec = rotation_axis(&r);
            Twist {
                t_start: traj.times[w[0]],
                t_end: traj.times[w[1]],
                angle: rotation_angle(&r),
                axis_to_momentum: axis_vec.dot(&j).abs().min(1.0).acos(),
            }
        })
        .collect();

    let reversal_error = first_sign_change.and_then(|tc| {
        extrema_idx.iter().find(|&&i| traj.times[i] > tc).map(|&i| {
            let mut target = Vector3::zeros();
            target[axis] = -m0[axis].signum();
            (traj.states[i].m.normalize() - target).norm()
        })
    });

    FlipReport {
        launch_axis: axis + 1,
        behaviour: if first_sign_change.is_some() {
            AxisBehaviour::HeteroclinicTransit
        } else {
            AxisBehaviour::StableOscillation
        },
        first_sign_change,
        extrema,
        twists,
        max_direction_deviation: max_dev,
        reversal_error,
    }
}

/// Launches about each principal axis in turn with momentum
/// `magnitude·e_a` perturbed by `eps` in the two other components.
pub fn hammer_experiment(
    inertia: &InertiaTensor,
    magnitude: f64,
    eps: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<[FlipReport; 3]> {
    let run = |a: usize| -> Result<FlipReport> {
        let mut m = Vector3::repeat(eps);
        m[a] = magnitude;
        let s0 = FullRigidState::new(Attitude::identity(), m);
        Ok(hammer_throw(inertia, &s0, t_end, cfg)?.1)
    };
    Ok([run(0)?, run(1)?, run(2)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    /// A center: nearby motion oscillates.
    Stable,
    /// A saddle.
    Unstable,
    /// Part of a continuum of equilibria (coinciding moments).
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub point: Vector3<f64>,
    /// 1-based principal axis.
    pub axis: usize,
    pub stability: Stability,
    /// Eigenvalues of the linearised Euler equations at `point`.
    pub eigenvalues: [Complex<f64>; 3],
}

impl Equilibrium {
    /// Whether the eigenvalues agree with the analytic label: a saddle has a
    /// positive real eigenvalue, a center has none.
    pub fn eigenvalues_agree(&self) -> bool {
        let scale = self.eigenvalues.iter().map(|z| z.norm()).fold(1e-300, f64::max);
        let max_re = self.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        match self.stability {
            Stability::Unstable => max_re > 1e-9 * scale,
            Stability::Stable => max_re.abs() <= 1e-9 * scale,
            Stability::Degenerate => self.eigenvalues.iter().all(|z| z.norm() <= 1e-9 * scale.max(1e-12)) || max_re <= 1e-9 * scale,
        }
    }
}

pub fn linearization(inertia: &InertiaTensor, m: &Vector3<f64>) -> Matrix3<f64> {
    let (i1, i2, i3) = (inertia.i1, inertia.i2, inertia.i3);
    let a1 = 1.0 / i3 - 1.0 / i2;
    let a2 = 1.0 / i1 - 1.0 / i3;
    let a3 = 1.0 / i2 - 1.0 / i1;
    Matrix3::new(0.0, a1 * m.z, a1 * m.y, a2 * m.z, 0.0, a2 * m.x, a3 * m.y, a3 * m.x, 0.0)
}

/// The six principal-axis equilibria `±radius·eᵢ` on the sphere
/// `C = radius²`, labelled by the intermediate-axis theorem.
pub fn classify_equilibria(inertia: &InertiaTensor, radius: f64) -> Vec<Equilibrium> {
    let moments = inertia.moments();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let coincides = |axis: usize| (0..3).any(|j| j != axis && close(moments[axis], moments[j]));
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        let stability = if coincides(axis) {
            Stability::Degenerate
        } else if axis == 1 {
            Stability::Unstable
        } else {
            Stability::Stable
        };
        for sign in [1.0, -1.0] {
            let mut point = Vector3::zeros();
            point[axis] = sign * radius;
            let ev = linearization(inertia, &point).complex_eigenvalues();
            out.push(Equilibrium {
                point,
                axis: axis + 1,
                stability,
                eigenvalues: [ev[0], ev[1], ev[2]],
            });
        }
    }
    out
}
