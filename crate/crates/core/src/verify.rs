//! The audit suite behind `symred verify`.
//!
//! Each check measures one structural identity or conservation law and
//! compares it against a fixed tolerance. Checks are independent and run in
//! parallel; results come back in registry order.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::central_force::{
    self, as_smooth_function as reduced_smooth, builtin_hamiltonian, canonical_vector_field, integrate_canonical,
    integrate_reduced, integrate_reduced_every, invariants_map, kepler_turning_point, reconstruct_orbit,
    reconstruction_rate, reduced_structure, reduced_vector_field, relative_equilibrium_period, CanonicalState,
    Homoclinic, Kepler, ReducedHamiltonian, RelativePeriodicity, BUILTIN_HAMILTONIANS,
};
use crate::linalg::{gaussian_matrix, gaussian_vec3, random_orthogonal, seeded_rng};
use crate::poisson::{
    self, antisymmetry_defect, bracket, convergence_order, hamiltonian_vector_field, jacobi_residual, IntegratorConfig,
    Method, PoissonStructure, SmoothFunction,
};
use crate::portrait::{self, extract_contours, locate_equilibria, make_chart, LeafKind, MarkerKind};
use crate::rigid_body::{
    classify_equilibria, euler_vector_field, full_vector_field, hammer_experiment, hammer_throw, integrate_full,
    rigid_body_structure, Attitude, AxisBehaviour, FullRigidState, InertiaTensor, Stability,
};
use crate::sp2k::{
    self, casimirs, collective_pairwise_hamiltonian, dual_pair_centralizer_check, integrate_coadjoint,
    momentum_map_phi, phi_jacobian, phi_rank_audit, sp2k_structure, sp_basis, symplectic_unit, xi_dim,
    ManyBodyState, XiHamiltonian,
};
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Structure,
    Dynamics,
    Reduction,
    Portrait,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structure" => Ok(Suite::Structure),
            "dynamics" => Ok(Suite::Dynamics),
            "reduction" => Ok(Suite::Reduction),
            "portrait" => Ok(Suite::Portrait),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidParameter(format!(
                "unknown suite `{other}` (expected structure, dynamics, reduction, portrait or all)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Structure => "structure",
            Suite::Dynamics => "dynamics",
            Suite::Reduction => "reduction",
            Suite::Portrait => "portrait",
            Suite::All => "all",
        })
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub module: &'static str,
    /// Measured quantity; the check passes when it satisfies `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

struct Outcome {
    value: f64,
    tolerance: f64,
    passed: bool,
    detail: String,
}

impl Outcome {
    fn at_most(value: f64, tolerance: f64) -> Self {
        Self {
            value,
            tolerance,
            passed: value <= tolerance,
            detail: String::new(),
        }
    }

    fn at_least(value: f64, tolerance: f64) -> Self {
        Self {
            value,
            tolerance,
            passed: value >= tolerance,
            detail: String::new(),
        }
    }

    fn flag(ok: bool, detail: String) -> Self {
        Self {
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            passed: ok,
            detail,
        }
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

type CheckFn = fn(u64) -> Result<Outcome>;

/// A registered check.
pub struct Check {
    pub name: &'static str,
    pub module: &'static str,
    pub suite: Suite,
    run: CheckFn,
}

macro_rules! check {
    ($name:literal, $module:literal, $suite:ident, $f:path) => {
        Check {
            name: $name,
            module: $module,
            suite: Suite::$suite,
            run: $f,
        }
    };
}

static REGISTRY: &[Check] = &[
    check!("bracket_antisymmetry", "poisson_core", Structure, antisymmetry),
    check!("bracket_leibniz", "poisson_core", Structure, leibniz),
    check!("jacobi_shipped_structures", "poisson_core", Structure, jacobi_shipped),
    check!("jacobi_negative_control", "poisson_core", Structure, jacobi_negative_control),
    check!("sp2_structure_constants", "central_force", Structure, structure_constants),
    check!("euler_field_is_hamiltonian", "rigid_body", Structure, euler_field_is_hamiltonian),
    check!("full_field_reduces_to_euler", "rigid_body", Structure, full_field_reduces),
    check!("chain_rule_field", "central_force", Structure, chain_rule_field),
    check!("phi_poisson_map", "sp2k_reduction", Structure, phi_poisson_map),
    check!("phi_orthogonal_invariance", "sp2k_reduction", Structure, phi_orthogonal_invariance),
    check!("phi_symplectic_equivariance", "sp2k_reduction", Structure, phi_symplectic_equivariance),
    check!("dual_pair_centralizers", "sp2k_reduction", Structure, dual_pair),
    check!("rank_audit", "sp2k_reduction", Structure, rank_audit),
    check!("casimir_midpoint_rigid", "poisson_core", Dynamics, casimir_midpoint_rigid),
    check!("casimir_midpoint_kepler", "poisson_core", Dynamics, casimir_midpoint_kepler),
    check!("energy_error_second_order", "poisson_core", Dynamics, energy_error_order),
    check!("convergence_order_rk4", "poisson_core", Dynamics, order_rk4),
    check!("convergence_order_midpoint", "poisson_core", Dynamics, order_midpoint),
    check!("full_motion_conservation", "rigid_body", Dynamics, full_motion_conservation),
    check!("sphere_and_energy_level", "rigid_body", Dynamics, sphere_and_energy_level),
    check!("intermediate_axis_flip", "rigid_body", Dynamics, intermediate_axis_flip),
    check!("outer_axes_stable", "rigid_body", Dynamics, outer_axes_stable),
    check!("axis_equilibria", "rigid_body", Dynamics, axis_equilibria),
    check!("escape_energy_dichotomy", "central_force", Dynamics, escape_dichotomy),
    check!("reduce_integrate_commute", "central_force", Reduction, reduce_integrate_commute),
    check!("casimir_midpoint_homoclinic", "central_force", Reduction, casimir_midpoint_homoclinic),
    check!("reconstruction_momentum", "central_force", Reduction, reconstruction_momentum),
    check!("reconstruction_fidelity", "central_force", Reduction, reconstruction_fidelity),
    check!("circular_orbit_rate", "central_force", Reduction, circular_orbit_rate),
    check!("kepler_phase_closure", "central_force", Reduction, kepler_phase_closure),
    check!("trace_powers_conserved", "sp2k_reduction", Reduction, trace_powers),
    check!("single_body_matches_reduced", "sp2k_reduction", Reduction, single_body_match),
    check!("vertices_on_leaf", "portrait", Portrait, vertices_on_leaf),
    check!("vertex_level_error", "portrait", Portrait, vertex_level_error),
    check!("refinement_reduces_error", "portrait", Portrait, refinement),
    check!("trajectory_follows_contour", "portrait", Portrait, trajectory_follows_contour),
    check!("equilibrium_markers", "portrait", Portrait, equilibrium_markers),
    check!("deterministic_output", "cli", Portrait, deterministic_output),
];

/// Every registered check in run order.
pub fn registry() -> &'static [Check] {
    REGISTRY
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<CheckResult> {
    let selected: Vec<&Check> = REGISTRY
        .iter()
        .filter(|c| suite == Suite::All || c.suite == suite)
        .collect();
    selected.par_iter().map(|c| run_check(c, seed)).collect()
}

pub fn run_check(c: &Check, seed: u64) -> CheckResult {
    let (value, tolerance, passed, detail) = match (c.run)(seed) {
        Ok(o) if o.value.is_nan() => (o.value, o.tolerance, false, format!("NaN measurement; {}", o.detail)),
        Ok(o) => (o.value, o.tolerance, o.passed, o.detail),
        Err(e) => (f64::NAN, f64::NAN, false, format!("error: {e}")),
    };
    CheckResult {
        name: c.name,
        module: c.module,
        value,
        tolerance,
        passed,
        detail,
    }
}

/// Fixed-width pass/fail table.
pub fn format_table(results: &[CheckResult]) -> String {
    let mut out = format!("{:<6} {:<15} {:<30} {:>12} {:>12}  detail\n", "status", "module", "check", "value", "tolerance");
    for r in results {
        out.push_str(&format!(
            "{:<6} {:<15} {:<30} {:>12.3e} {:>12.3e}  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.module,
            r.name,
            r.value,
            r.tolerance,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    out
}

// ---------------------------------------------------------------- helpers

fn random_quadratic_fn(name: &str, dim: usize, rng: &mut ChaCha8Rng) -> SmoothFunction {
    let a = gaussian_matrix(dim, 1, rng).column(0).into_owned();
    let s = gaussian_matrix(dim, dim, rng);
    let s = (&s + s.transpose()) * 0.5;
    let (a2, s2) = (a.clone(), s.clone());
    SmoothFunction::new(
        name,
        dim,
        move |w| a.dot(w) + 0.5 * w.dot(&(&s * w)),
        move |w| &a2 + &s2 * w,
    )
}

fn canonical_structure(d: usize) -> PoissonStructure {
    let half = d / 2;
    PoissonStructure::new("canonical", d, move |_| {
        let mut j = DMatrix::zeros(d, d);
        for i in 0..half {
            j[(i, half + i)] = 1.0;
            j[(half + i, i)] = -1.0;
        }
        j
    })
}

fn shipped_structures() -> Vec<PoissonStructure> {
    let inertia = InertiaTensor::new(3.0, 2.0, 1.0).expect("valid moments");
    vec![
        rigid_body_structure(&inertia).structure,
        reduced_structure().0,
        sp2k_structure(1, 3).expect("valid shape"),
        sp2k_structure(2, 3).expect("valid shape"),
        canonical_structure(6),
    ]
}

fn random_inertia(rng: &mut ChaCha8Rng) -> Result<InertiaTensor> {
    let mut i: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..5.0)).collect();
    i.sort_by(|a, b| b.total_cmp(a));
    InertiaTensor::new(i[0], i[1], i[2])
}

fn per_step_drift(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
}

fn kepler_leaf_start() -> DVector<f64> {
    // C = 0.64 − 0.04 = 0.6, H = −0.68
    DVector::from_vec(vec![1.0, 0.2, 0.64])
}

fn default_inertia() -> InertiaTensor {
    InertiaTensor::new(3.0, 2.0, 1.0).expect("valid moments")
}

// ---------------------------------------------------------------- structure

fn antisymmetry(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for p in shipped_structures() {
        let d = p.dim();
        for _ in 0..20 {
            let w = gaussian_matrix(d, 1, &mut rng).column(0).into_owned();
            let f = random_quadratic_fn("f", d, &mut rng);
            let g = random_quadratic_fn("g", d, &mut rng);
            let fg = bracket(&p, &f, &g, &w)?;
            let gf = bracket(&p, &g, &f, &w)?;
            worst = worst.max((fg + gf).abs() / (1.0 + fg.abs()));
            worst = worst.max(antisymmetry_defect(&p, &w)?);
        }
    }
    Ok(Outcome::at_most(worst, 1e-13).detail("relative |{F,G}+{G,F}| over 100 samples"))
}

fn leibniz(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for p in shipped_structures() {
        let d = p.dim();
        for _ in 0..20 {
            let w = gaussian_matrix(d, 1, &mut rng).column(0).into_owned();
            let f = random_quadratic_fn("f", d, &mut rng);
            let g = random_quadratic_fn("g", d, &mut rng);
            let h = random_quadratic_fn("h", d, &mut rng);
            let lhs = bracket(&p, &f, &g.product(&h), &w)?;
            let rhs = bracket(&p, &f, &g, &w)? * h.value(&w) + bracket(&p, &f, &h, &w)? * g.value(&w);
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
    }
    Ok(Outcome::at_most(worst, 1e-12).detail("relative Leibniz defect over 100 samples"))
}

fn jacobi_shipped(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    let mut names = Vec::new();
    for p in shipped_structures() {
        names.push(p.name().to_string());
        for _ in 0..100 {
            let w = gaussian_matrix(p.dim(), 1, &mut rng).column(0).into_owned();
            worst = worst.max(jacobi_residual(&p, &w)?);
        }
    }
    Ok(Outcome::at_most(worst, 1e-8).detail(format!("100 states each: {}", names.join(", "))))
}

/// The `so(3)*` tensor with `K₁₂` bent to `−m₃ − m₁²`.
pub fn corrupted_tensor() -> PoissonStructure {
    PoissonStructure::new("corrupted", 3, |m| {
        let bend = m[2] + m[0] * m[0];
        DMatrix::from_row_slice(3, 3, &[0.0, -bend, m[1], bend, 0.0, -m[0], -m[1], m[0], 0.0])
    })
}

fn jacobi_negative_control(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let p = corrupted_tensor();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let w = gaussian_matrix(3, 1, &mut rng).column(0).into_owned();
        worst = worst.max(jacobi_residual(&p, &w)?);
    }
    Ok(Outcome::at_least(worst, 0.1).detail("corrupted so(3) tensor must fail Jacobi"))
}

fn structure_constants(_: u64) -> Result<Outcome> {
    let [w1, w2, w3] = sp2k::sp2_basis();
    let br = |a: &Matrix2<i64>, b: &Matrix2<i64>| a * b - b * a;
    let ok = br(&w1, &w2) == w1 * 2 && br(&w1, &w3) == w2 * 4 && br(&w2, &w3) == w3 * 2;
    Ok(Outcome::flag(ok, "[W1,W2]=2W1, [W1,W3]=4W2, [W2,W3]=2W3 in integers".into()))
}

fn euler_field_is_hamiltonian(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let inertia = random_inertia(&mut rng)?;
        let m = gaussian_vec3(&mut rng);
        let sys = rigid_body_structure(&inertia);
        let f = hamiltonian_vector_field(&sys.structure, &sys.hamiltonian, &DVector::from_column_slice(m.as_slice()))?;
        let e = euler_vector_field(&inertia, &m);
        let d = (0..3).map(|k| (f[k] - e[k]).abs()).fold(0.0, f64::max);
        worst = worst.max(d / (1.0 + e.norm()));
    }
    Ok(Outcome::at_most(worst, 1e-14).detail("1000 random (I, m)"))
}

fn full_field_reduces(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let inertia = random_inertia(&mut rng)?;
        let m = gaussian_vec3(&mut rng);
        let q = crate::linalg::so3_exp(&gaussian_vec3(&mut rng));
        let s = FullRigidState::new(Attitude::new(q)?, m);
        let (_, dm) = full_vector_field(&inertia, &s);
        let e = euler_vector_field(&inertia, &m);
        worst = worst.max((dm - e).amax() / (1.0 + e.norm()));
    }
    Ok(Outcome::at_most(worst, 1e-14).detail("momentum part of the full field, 1000 samples"))
}

fn chain_rule_field(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for name in BUILTIN_HAMILTONIANS {
        let h = builtin_hamiltonian(name)?;
        for _ in 0..50 {
            let z = CanonicalState::new(gaussian_vec3(&mut rng), gaussian_vec3(&mut rng));
            let (dq, dp) = canonical_vector_field(h.as_ref(), &z);
            let chain = Vector3::new(2.0 * z.q.dot(&dq), dq.dot(&z.p) + z.q.dot(&dp), 2.0 * z.p.dot(&dp));
            let w = invariants_map(&z);
            let field = reduced_vector_field(h.as_ref(), &w);
            worst = worst.max((chain - field).amax() / (1.0 + field.amax()));
        }
    }
    Ok(Outcome::at_most(worst, 1e-12).detail("d/dt of the invariants vs K(w)∇H(w), every builtin H"))
}

/// Largest `|{F∘φ, G∘φ} − {F, G}∘φ|` over `samples` random quadratic pairs
/// and states.
pub fn poisson_map_residual(n: usize, k: usize, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let structure = sp2k_structure(k, n)?;
    let d = xi_dim(k);
    let half = n * k;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let s = ManyBodyState::random(n, k, &mut rng);
        let f = random_quadratic_fn("f", d, &mut rng);
        let g = random_quadratic_fn("g", d, &mut rng);
        let xi = momentum_map_phi(&s).to_xi();
        let reduced = bracket(&structure, &f, &g, &xi)?;
        let jac = phi_jacobian(&s);
        let df = jac.transpose() * f.gradient(&xi);
        let dg = jac.transpose() * g.gradient(&xi);
        let canonical: f64 = (0..half).map(|i| df[i] * dg[half + i] - df[half + i] * dg[i]).sum();
        worst = worst.max((canonical - reduced).abs());
    }
    Ok(worst)
}

fn phi_poisson_map(seed: u64) -> Result<Outcome> {
    let a = poisson_map_residual(3, 1, 100, seed)?;
    let b = poisson_map_residual(3, 2, 100, seed.wrapping_add(1))?;
    Ok(Outcome::at_most(a.max(b), 1e-10).detail(format!("n=3: k=1 {a:.1e}, k=2 {b:.1e}")))
}

fn phi_orthogonal_invariance(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for (n, k) in [(3, 1), (3, 2), (4, 3)] {
        for _ in 0..20 {
            let s = ManyBodyState::random(n, k, &mut rng);
            let a = random_orthogonal(n, &mut rng);
            let moved = ManyBodyState::new(&a * &s.q, &a * &s.p)?;
            let base = momentum_map_phi(&s).to_xi();
            worst = worst.max((momentum_map_phi(&moved).to_xi() - &base).amax() / (1.0 + base.amax()));
        }
    }
    Ok(Outcome::at_most(worst, 1e-14).detail("relative change of phi under random O(n)"))
}

fn phi_symplectic_equivariance(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for k in [1, 2] {
        let basis = sp_basis(k);
        let id = DMatrix::<f64>::identity(2 * k, 2 * k);
        for _ in 0..10 {
            let s = ManyBodyState::random(3, k, &mut rng);
            let coeffs = gaussian_matrix(basis.len(), 1, &mut rng);
            let x = basis
                .iter()
                .zip(coeffs.iter())
                .fold(DMatrix::zeros(2 * k, 2 * k), |acc, (b, c)| acc + b * (0.3 * c));
            let b = (&id - &x)
                .try_inverse()
                .ok_or_else(|| Error::DegenerateData("singular Cayley factor".into()))?
                * (&id + &x);
            let mut z = DMatrix::zeros(3, 2 * k);
            z.columns_mut(0, k).copy_from(&s.q);
            z.columns_mut(k, k).copy_from(&s.p);
            let zb = &z * &b;
            let moved = ManyBodyState::new(zb.columns(0, k).into_owned(), zb.columns(k, k).into_owned())?;
            let expected = b.transpose() * momentum_map_phi(&s).gram() * &b;
            let got = momentum_map_phi(&moved).gram();
            worst = worst.max((got - &expected).amax() / (1.0 + expected.amax()));
            let (c0, c1) = (casimirs(&momentum_map_phi(&s), 3), casimirs(&momentum_map_phi(&moved), 3));
            for (a, b) in c0.iter().zip(&c1) {
                worst = worst.max((a - b).abs() / (1.0 + a.abs()));
            }
            let j = symplectic_unit(k);
            worst = worst.max((b.transpose() * &j * &b - &j).amax());
        }
    }
    Ok(Outcome::at_most(worst, 1e-11).detail("Gram matrix transforms as BᵀGB; Casimirs invariant"))
}

fn dual_pair(_: u64) -> Result<Outcome> {
    let r = dual_pair_centralizer_check(3)?;
    let dims_ok = r.of_rotations.dimension == 3 && r.of_sp2.dimension == 3;
    let residual = r.of_rotations.span_residual.max(r.of_sp2.span_residual);
    Ok(Outcome {
        value: residual,
        tolerance: 1e-8,
        passed: dims_ok && residual <= 1e-8,
        detail: format!(
            "centralizer dimensions {} and {} inside sp(6)",
            r.of_rotations.dimension, r.of_sp2.dimension
        ),
    })
}

fn rank_audit(_: u64) -> Result<Outcome> {
    let a = phi_rank_audit(3, 2)?;
    let ok = a.jacobian_rank == 9 && a.image_dimension == 9 && a.leaf_dimension == 8 && a.poisson_rank == 8;
    Ok(Outcome::flag(
        ok,
        format!(
            "n=3 k=2: rank dphi {}, image {}, leaf {}, Poisson rank {}",
            a.jacobian_rank, a.image_dimension, a.leaf_dimension, a.poisson_rank
        ),
    ))
}

// ---------------------------------------------------------------- dynamics

fn casimir_midpoint_rigid(_: u64) -> Result<Outcome> {
    let sys = rigid_body_structure(&default_inertia());
    let cfg = IntegratorConfig::midpoint(1e-2);
    let traj = poisson::integrate(&sys.structure, &sys.hamiltonian, &DVector::from_vec(vec![0.2, 1.0, 0.3]), 100.0, &cfg)?;
    let c = &traj.audit("C").expect("declared audit").values;
    let step = per_step_drift(c);
    let total = traj.audit("C").expect("declared audit").max_drift();
    Ok(Outcome::at_most(step, 10.0 * cfg.newton_tol).detail(format!("10^4 steps, total drift {total:.1e}")))
}

fn casimir_midpoint_kepler(_: u64) -> Result<Outcome> {
    let (p, _) = reduced_structure();
    let h = reduced_smooth(Arc::new(Kepler));
    let cfg = IntegratorConfig::midpoint(1e-2);
    let traj = poisson::integrate(&p, &h, &kepler_leaf_start(), 100.0, &cfg)?;
    let audit = traj.audit("C").expect("declared audit");
    let step = per_step_drift(&audit.values);
    Ok(Outcome::at_most(step, 10.0 * cfg.newton_tol).detail(format!(
        "Kepler on C=0.6, 10^4 steps, total drift {:.1e}",
        audit.max_drift()
    )))
}

/// Max energy error over `[0, t_end]` for the Kepler orbit at two steps.
fn energy_errors(step: f64) -> Result<f64> {
    let (p, _) = reduced_structure();
    let h = reduced_smooth(Arc::new(Kepler));
    let traj = poisson::integrate(&p, &h, &kepler_leaf_start(), 10.0, &IntegratorConfig::midpoint(step))?;
    Ok(traj.audit("H").expect("declared audit").max_drift())
}

fn energy_error_order(_: u64) -> Result<Outcome> {
    let coarse = energy_errors(2e-2)?;
    let fine = energy_errors(1e-2)?;
    let ratio = coarse / fine;
    Ok(Outcome {
        value: ratio,
        tolerance: 4.0,
        passed: (3.5..=4.5).contains(&ratio),
        detail: format!("Kepler energy error {coarse:.2e} -> {fine:.2e} on halving h; expected ratio 4 +- 0.5"),
    })
}

fn order_check(method: Method, expected: f64) -> Result<Outcome> {
    let sys = rigid_body_structure(&default_inertia());
    let est = convergence_order(&sys.structure, &sys.hamiltonian, &DVector::from_vec(vec![0.2, 1.0, 0.3]), 1.0, method)?;
    let order = est
        .order()
        .ok_or_else(|| Error::DegenerateData("errors vanished identically".into()))?;
    Ok(Outcome {
        value: order,
        tolerance: expected,
        passed: (order - expected).abs() <= 0.3,
        detail: format!("rigid body over [0,1], expected {expected} +- 0.3"),
    })
}

fn order_rk4(_: u64) -> Result<Outcome> {
    order_check(Method::Rk4, 4.0)
}

fn order_midpoint(_: u64) -> Result<Outcome> {
    order_check(Method::ImplicitMidpoint, 2.0)
}

fn full_motion_conservation(_: u64) -> Result<Outcome> {
    let s0 = FullRigidState::new(Attitude::identity(), Vector3::new(0.01, 1.0, 0.01));
    let traj = integrate_full(&default_inertia(), &s0, 50.0, &IntegratorConfig::midpoint(1e-3))?;
    let drift = ["H", "C"]
        .iter()
        .map(|n| traj.audit(n).expect("declared audit").max_drift())
        .fold(traj.spatial_momentum_drift(), f64::max);
    let ortho = traj.max_orthogonality_defect();
    Ok(Outcome {
        value: drift,
        tolerance: 1e-6,
        passed: drift <= 1e-6 && ortho <= 1e-12,
        detail: format!("max drift of H, C, Qm over t=50; orthogonality defect {ortho:.1e} (tol 1e-12)"),
    })
}

fn sphere_and_energy_level(_: u64) -> Result<Outcome> {
    let inertia = default_inertia();
    let sys = rigid_body_structure(&inertia);
    let traj = poisson::integrate(
        &sys.structure,
        &sys.hamiltonian,
        &DVector::from_vec(vec![0.2, 1.0, 0.3]),
        50.0,
        &IntegratorConfig::midpoint(1e-3),
    )?;
    let drift = ["H", "C"]
        .iter()
        .map(|n| traj.audit(n).expect("declared audit").max_drift())
        .fold(0.0, f64::max);
    Ok(Outcome::at_most(drift, 1e-9).detail("Euler trajectory stays on its sphere and energy level"))
}

fn intermediate_axis_flip(_: u64) -> Result<Outcome> {
    let s0 = FullRigidState::new(Attitude::identity(), Vector3::new(1e-3, 1.0, 1e-3));
    let (_, report) = hammer_throw(&default_inertia(), &s0, 100.0, &IntegratorConfig::midpoint(1e-3))?;
    let twist_err = report
        .twists
        .iter()
        .map(|t| (t.angle - PI).abs())
        .fold(f64::NAN, f64::max);
    let flipped = report.first_sign_change.is_some() && report.behaviour == AxisBehaviour::HeteroclinicTransit;
    Ok(Outcome {
        value: twist_err,
        tolerance: 0.3,
        passed: flipped && twist_err <= 0.3,
        detail: format!(
            "first m2 sign change at {:?}, {} twists, reversal error {:?}",
            report.first_sign_change,
            report.twists.len(),
            report.reversal_error
        ),
    })
}

fn outer_axes_stable(_: u64) -> Result<Outcome> {
    let reports = hammer_experiment(&default_inertia(), 1.0, 1e-3, 100.0, &IntegratorConfig::midpoint(1e-3))?;
    let dev = reports[0].max_direction_deviation.max(reports[2].max_direction_deviation);
    Ok(Outcome::at_most(dev, 0.1).detail("momentum direction deviation for launches about axes 1 and 3"))
}

fn axis_equilibria(_: u64) -> Result<Outcome> {
    let eq = classify_equilibria(&default_inertia(), 1.0);
    let ok = eq.len() == 6
        && eq.iter().all(|e| {
            let expected = if e.axis == 2 { Stability::Unstable } else { Stability::Stable };
            e.stability == expected && e.eigenvalues_agree()
        });
    Ok(Outcome::flag(ok, "±e1, ±e3 stable and ±e2 unstable for I=(3,2,1)".into()))
}

fn escape_dichotomy(_: u64) -> Result<Outcome> {
    let c = 0.6;
    let cfg = IntegratorConfig::midpoint(1e-2);
    let bound: Vec<f64> = (0..10).map(|i| -0.8 + 0.075 * i as f64).collect();
    let unbound: Vec<f64> = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
    let max_w1 = |energy: f64| -> Result<f64> {
        let w0 = kepler_turning_point(c, energy, false)?;
        let traj = integrate_reduced_every(Arc::new(Kepler), &w0, 1000.0, &cfg, 100)?;
        Ok(traj.states.iter().map(|w| w[0]).fold(0.0, f64::max))
    };
    let bound_max = bound.par_iter().map(|&e| max_w1(e)).collect::<Result<Vec<_>>>()?;
    let unbound_max = unbound.par_iter().map(|&e| max_w1(e)).collect::<Result<Vec<_>>>()?;
    let worst_bound = bound_max.iter().copied().fold(0.0, f64::max);
    let least_escape = unbound_max.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Outcome {
        value: worst_bound,
        tolerance: 1e3,
        passed: worst_bound <= 1e3 && least_escape > 1e4,
        detail: format!("bound orbits max w1 {worst_bound:.3e}; escaping orbits min of max w1 {least_escape:.3e} (> 1e4)"),
    })
}

// ---------------------------------------------------------------- reduction

fn reduce_integrate_commute(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    let mut starts = Vec::new();
    while starts.len() < BUILTIN_HAMILTONIANS.len() {
        let z = CanonicalState::new(gaussian_vec3(&mut rng) * 0.7, gaussian_vec3(&mut rng) * 0.7);
        let w = invariants_map(&z);
        if central_force::casimir_value(&w) > 0.2 && w.x > 0.3 {
            starts.push(z);
        }
    }
    let cfg = IntegratorConfig::rk4(1e-3);
    for (name, z0) in BUILTIN_HAMILTONIANS.iter().zip(&starts) {
        let h = builtin_hamiltonian(name)?;
        let reduced = integrate_reduced(h.clone(), &invariants_map(z0), 10.0, &cfg)?;
        let full = integrate_canonical(h, z0, 10.0, &cfg)?;
        let z_end = CanonicalState::from_vector(full.last_state().expect("nonempty"));
        let w_end = reduced.last_state().expect("nonempty");
        let d = (DVector::from_column_slice(invariants_map(&z_end).as_slice()) - w_end).amax();
        worst = worst.max(d);
    }
    Ok(Outcome::at_most(worst, 1e-6).detail("RK4 h=1e-3 to t=10, one random start per builtin H"))
}

fn casimir_midpoint_homoclinic(_: u64) -> Result<Outcome> {
    let cfg = IntegratorConfig::midpoint(1e-2);
    let w0 = Vector3::new(1.2, 0.4, 1.0);
    let traj = integrate_reduced(Arc::new(Homoclinic), &w0, 50.0, &cfg)?;
    let step = per_step_drift(&traj.audit("C").expect("declared audit").values);
    Ok(Outcome::at_most(step, 10.0 * cfg.newton_tol).detail("per-step C drift, homoclinic H"))
}

fn kepler_orbit_reconstruction(t_end: f64) -> Result<(central_force::ReconstructionResult, CanonicalState)> {
    let w0 = kepler_turning_point(0.6, -0.5, true)?;
    let cfg = IntegratorConfig::rk4(1e-3);
    let reduced = integrate_reduced(Arc::new(Kepler), &w0, t_end, &cfg)?;
    let rec = reconstruct_orbit(&Kepler, &reduced, 0.6f64.sqrt())?;
    let (z0, _) = central_force::align_initial_frame(&w0)?;
    let direct = integrate_canonical(Arc::new(Kepler), &z0, t_end, &cfg)?;
    Ok((rec, CanonicalState::from_vector(direct.last_state().expect("nonempty"))))
}

fn reconstruction_momentum(_: u64) -> Result<Outcome> {
    let (rec, _) = kepler_orbit_reconstruction(10.0)?;
    Ok(Outcome::at_most(rec.momentum_drift(), 1e-6).detail("max |q x p - mu| along a reconstructed Kepler orbit"))
}

fn reconstruction_fidelity(_: u64) -> Result<Outcome> {
    let (rec, direct) = kepler_orbit_reconstruction(10.0)?;
    let last = rec.states.last().expect("nonempty");
    let err = (last.q - direct.q).amax().max((last.p - direct.p).amax());
    Ok(Outcome::at_most(err, 1e-5).detail("reconstructed vs directly integrated state at t=10, C=0.6, H=-0.5"))
}

fn circular_orbit_rate(_: u64) -> Result<Outcome> {
    let c: f64 = 0.6;
    let w = Vector3::new(c * c, 0.0, 1.0 / c);
    let rate = reconstruction_rate(&Kepler, &w, c.sqrt())?;
    let period = relative_equilibrium_period(&Kepler, &w, c.sqrt())?;
    let err = (rate - c.powf(-1.5)).abs().max((period - 2.0 * PI * c.powf(1.5)).abs());
    Ok(Outcome::at_most(err, 1e-6).detail(format!("rate {rate:.9}, period {period:.9}")))
}

fn kepler_phase_closure(_: u64) -> Result<Outcome> {
    let w0 = kepler_turning_point(0.6, -0.5, true)?;
    let reduced = integrate_reduced(Arc::new(Kepler), &w0, 12.0, &IntegratorConfig::rk4(1e-3))?;
    match central_force::detect_relative_periodic(&Kepler, &reduced, 0.6f64.sqrt())? {
        RelativePeriodicity::Periodic { period, phase } => {
            Ok(Outcome::at_most((phase - 2.0 * PI).abs(), 1e-4).detail(format!("period {period:.6}, phase {phase:.8}")))
        }
        other => Ok(Outcome::flag(false, format!("no first return found: {other:?}"))),
    }
}

fn trace_powers(seed: u64) -> Result<Outcome> {
    let mut rng = seeded_rng(seed);
    let (n, k) = (5, 2);
    let h = collective_pairwise_hamiltonian(&[1.0, 2.0], |u| 0.5 * u * u, |u| u)?;
    let x0 = momentum_map_phi(&ManyBodyState::random(n, k, &mut rng));
    let cfg = IntegratorConfig::midpoint(1e-2);
    let traj = integrate_coadjoint(&h, &x0, n, 5.0, &cfg)?;
    let mut worst = 0.0f64;
    for name in ["C1", "C2"] {
        let a = traj.audit(name).expect("declared audit");
        worst = worst.max(per_step_drift(&a.values) / (1.0 + a.values[0].abs()));
    }
    Ok(Outcome::at_most(worst, 10.0 * cfg.newton_tol).detail("relative per-step drift of tr Y^2, tr Y^4 (n=5, k=2)"))
}

fn single_body_match(_: u64) -> Result<Outcome> {
    let w0 = Vector3::new(1.0, 0.3, 0.69);
    let cfg = IntegratorConfig::midpoint(1e-3);
    let reduced = integrate_reduced(Arc::new(Kepler), &w0, 10.0, &cfg)?;
    let structure = sp2k_structure(1, 3)?;
    let h = XiHamiltonian::new(
        "kepler",
        1,
        |xi| 0.5 * xi[1] - xi[0].powf(-0.5),
        |xi| DVector::from_vec(vec![0.5 * xi[0].powf(-1.5), 0.5, 0.0]),
    );
    let xi0 = DVector::from_vec(vec![w0.x, w0.z, w0.y]);
    let lifted = poisson::integrate(&structure, &sp2k::as_smooth_function(Arc::new(h)), &xi0, 10.0, &cfg)?;
    let worst = lifted
        .states
        .iter()
        .zip(&reduced.states)
        .map(|(x, w)| (x[0] - w[0]).abs().max((x[1] - w[2]).abs()).max((x[2] - w[1]).abs()))
        .fold(0.0, f64::max);
    Ok(Outcome::at_most(worst, 1e-9).detail("k=1 (L, Kmat, M) vs (w1, w3, w2), Kepler, midpoint h=1e-3"))
}

// ---------------------------------------------------------------- portrait

struct PortraitCase {
    kind: LeafKind,
    hamiltonian: SmoothFunction,
    extent: f64,
}

fn portrait_cases() -> Result<Vec<PortraitCase>> {
    let mut out = Vec::new();
    for (name, c) in [("kepler", 0.6), ("homoclinic", 1.0)] {
        out.push(PortraitCase {
            kind: LeafKind::Hyperboloid { c },
            hamiltonian: reduced_smooth(builtin_hamiltonian(name)?),
            extent: portrait::plot_extent(name),
        });
    }
    out.push(PortraitCase {
        kind: LeafKind::PlaneChart { c: 0.6 },
        hamiltonian: reduced_smooth(Arc::new(Kepler)),
        extent: 12.0,
    });
    out.push(PortraitCase {
        kind: LeafKind::Cone,
        hamiltonian: reduced_smooth(Arc::new(Homoclinic)),
        extent: 4.0,
    });
    out.push(PortraitCase {
        kind: LeafKind::Sphere { radius: 1.0 },
        hamiltonian: rigid_body_structure(&default_inertia()).hamiltonian,
        extent: 1.0,
    });
    Ok(out)
}

fn case_contours(case: &PortraitCase, grid: usize) -> Result<portrait::ContourSet> {
    let chart = make_chart(case.kind, None, case.extent)?;
    let levels = portrait::auto_levels(&chart, &case.hamiltonian, grid, portrait::DEFAULT_LEVEL_QUANTILE)?;
    extract_contours(&chart, &case.hamiltonian, &levels, (grid, grid))
}

fn leaf_defect(kind: LeafKind, w: &Vector3<f64>) -> f64 {
    match kind {
        LeafKind::Sphere { radius } => (w.norm() - radius).abs(),
        _ => (central_force::casimir_value(w) - kind.level()).abs(),
    }
}

fn vertices_on_leaf(_: u64) -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for case in portrait_cases()? {
        let cs = case_contours(&case, 256)?;
        for v in cs.vertices() {
            worst = worst.max(leaf_defect(case.kind, &v.w));
            count += 1;
        }
    }
    Ok(Outcome::at_most(worst, 1e-9).detail(format!("{count} vertices over five charts")))
}

fn vertex_level_error(_: u64) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for case in portrait_cases()? {
        let cs = case_contours(&case, 256)?;
        for v in cs.vertices() {
            let err = (case.hamiltonian.value(&DVector::from_column_slice(v.w.as_slice())) - v.level).abs();
            worst = worst.max(err / v.tolerance.max(f64::MIN_POSITIVE));
        }
    }
    Ok(Outcome::at_most(worst, 1.0).detail("max level error / (cell diameter x local gradient bound)"))
}

/// Max level error of the Kepler contours at `grid`.
pub fn kepler_level_error(grid: usize) -> Result<f64> {
    let h = reduced_smooth(Arc::new(Kepler));
    let chart = make_chart(LeafKind::Hyperboloid { c: 0.6 }, None, 12.0)?;
    let levels: Vec<f64> = (0..8).map(|i| -0.8 + 0.1 * i as f64).collect();
    let cs = extract_contours(&chart, &h, &levels, (grid, grid))?;
    Ok(cs
        .vertices()
        .iter()
        .map(|v| (h.value(&DVector::from_column_slice(v.w.as_slice())) - v.level).abs())
        .fold(0.0, f64::max))
}

fn refinement(_: u64) -> Result<Outcome> {
    let coarse = kepler_level_error(128)?;
    let fine = kepler_level_error(256)?;
    let ratio = fine / coarse;
    Ok(Outcome::at_most(ratio, 0.5).detail(format!("Kepler max level error {coarse:.2e} -> {fine:.2e}")))
}

fn trajectory_follows_contour(_: u64) -> Result<Outcome> {
    let w0 = kepler_turning_point(0.6, -0.5, true)?;
    let h = reduced_smooth(Arc::new(Kepler));
    let chart = make_chart(LeafKind::Hyperboloid { c: 0.6 }, None, 12.0)?;
    let cs = extract_contours(&chart, &h, &[Kepler.value(&w0)], (512, 512))?;
    let traj = integrate_reduced(Arc::new(Kepler), &w0, 20.0, &IntegratorConfig::midpoint(1e-3))?;
    let mut worst = 0.0f64;
    for w in &traj.states {
        let p = chart.chart_coords(&Vector3::new(w[0], w[1], w[2]))?;
        worst = worst.max(cs.distance_to_level(0, p));
    }
    let cell = cs.cell_diameter();
    Ok(Outcome::at_most(worst / cell, 1.0).detail(format!("max chart distance in cell diameters (cell {cell:.2e})")))
}

fn equilibrium_markers(_: u64) -> Result<Outcome> {
    let kepler = make_chart(LeafKind::Hyperboloid { c: 0.6 }, None, 12.0)?;
    let centre = locate_equilibria(&kepler, &reduced_smooth(Arc::new(Kepler)));
    let circular = Vector3::new(0.36, 0.0, 1.0 / 0.6);
    let kepler_ok = centre
        .iter()
        .any(|m| m.kind == MarkerKind::Center && (Vector3::from(m.point) - circular).amax() < 1e-8);

    let homoclinic = make_chart(LeafKind::Hyperboloid { c: 1.0 }, None, 4.0)?;
    let markers = locate_equilibria(&homoclinic, &reduced_smooth(Arc::new(Homoclinic)));
    let saddle = markers.iter().find(|m| m.kind == MarkerKind::Saddle);
    let level_err = saddle.map_or(f64::INFINITY, |m| (m.energy - 2.0).abs());
    Ok(Outcome {
        value: level_err,
        tolerance: 1e-8,
        passed: kepler_ok && level_err <= 1e-8,
        detail: format!(
            "Kepler circular point found as centre: {kepler_ok}; homoclinic saddle at {:?}",
            saddle.map(|m| m.point)
        ),
    })
}

fn deterministic_output(_: u64) -> Result<Outcome> {
    let case = &portrait_cases()?[0];
    let a = case_contours(case, 128)?;
    let b = case_contours(case, 128)?;
    let style = portrait::SvgStyle::default();
    let same_plot = portrait::emit_svg(&a, &style) == portrait::emit_svg(&b, &style)
        && portrait::emit_csv(&a) == portrait::emit_csv(&b);
    let run = || integrate_reduced(Arc::new(Kepler), &Vector3::new(1.0, 0.0, 1.0), 5.0, &IntegratorConfig::default());
    let same_traj = run()?.to_csv() == run()?.to_csv();
    Ok(Outcome::flag(same_plot && same_traj, "repeated runs give byte-identical SVG and CSV".into()))
}
