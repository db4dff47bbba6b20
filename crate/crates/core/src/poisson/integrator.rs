use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{vector_field_unchecked, PoissonStructure, SmoothFunction, StateVector, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    ImplicitMidpoint,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "implicit_midpoint" | "midpoint" => Ok(Method::ImplicitMidpoint),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rk4 => "rk4",
            Method::ImplicitMidpoint => "implicit_midpoint",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub step: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::ImplicitMidpoint,
            step: 1e-3,
            newton_tol: 1e-12,
            newton_max_iter: 50,
        }
    }
}

impl IntegratorConfig {
    pub fn midpoint(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4,
            step,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {}", self.step)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "newton_tol must be positive, got {}",
                self.newton_tol
            )));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidParameter("newton_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// One step of size `cfg.step` of `ẇ = K(w)∇H(w)`.
pub fn step(p: &PoissonStructure, h: &SmoothFunction, w: &StateVector, cfg: &IntegratorConfig) -> Result<StateVector> {
    cfg.validate()?;
    p.check_state(w)?;
    p.check_function(h)?;
    step_unchecked(p, h, w, cfg.step, cfg)
}

pub(crate) fn step_unchecked(
    p: &PoissonStructure,
    h: &SmoothFunction,
    w: &StateVector,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<StateVector> {
    let f = |x: &StateVector| vector_field_unchecked(p, h, x);
    match cfg.method {
        Method::Rk4 => Ok(rk4_step(&f, w, dt)),
        Method::ImplicitMidpoint => midpoint_step(&f, w, dt, cfg.newton_tol, cfg.newton_max_iter),
    }
}

pub(crate) fn rk4_step<F>(f: &F, w: &StateVector, dt: f64) -> StateVector
where
    F: Fn(&StateVector) -> StateVector,
{
    let k1 = f(w);
    let k2 = f(&(w + &k1 * (0.5 * dt)));
    let k3 = f(&(w + &k2 * (0.5 * dt)));
    let k4 = f(&(w + &k3 * dt));
    w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Solves `z = w + dt·f((w + z)/2)` by Newton's method with a
/// finite-difference Jacobian, starting from the explicit Euler predictor.
pub(crate) fn midpoint_step<F>(f: &F, w: &StateVector, dt: f64, tol: f64, max_iter: usize) -> Result<StateVector>
where
    F: Fn(&StateVector) -> StateVector,
{
    let d = w.len();
    let mut z = w + f(w) * dt;
    let mut last = f64::INFINITY;
    for _ in 0..max_iter {
        let mid = (w + &z) * 0.5;
        let fm = f(&mid);
        let residual = &z - w - &fm * dt;

        let mut jac = DMatrix::<f64>::identity(d, d);
        let mut x = mid.clone();
        for l in 0..d {
            let eps = 1e-6 * (1.0 + mid[l].abs());
            x[l] = mid[l] + eps;
            let fp = f(&x);
            x[l] = mid[l] - eps;
            let fmm = f(&x);
            x[l] = mid[l];
            let col = (fp - fmm) * (0.5 * dt / (2.0 * eps));
            for r in 0..d {
                jac[(r, l)] -= col[r];
            }
        }
        let delta = jac
            .lu()
            .solve(&residual)
            .ok_or(Error::SolverDivergence { iterations: 0, last_update: f64::NAN })?;
        z -= &delta;
        last = delta.amax();
        if !last.is_finite() {
            break;
        }
        if last <= tol * (1.0 + z.amax()) {
            return Ok(z);
        }
    }
    Err(Error::SolverDivergence {
        iterations: max_iter,
        last_update: last,
    })
}

/// Fixed-step integration over `[0, t_end]`, recording every step.
pub fn integrate(
    p: &PoissonStructure,
    h: &SmoothFunction,
    w0: &StateVector,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_every(p, h, w0, t_end, cfg, 1)
}

/// As [`integrate`], keeping every `every`-th state (and the last one).
///
/// The step is shrunk so that an integer number of steps lands on `t_end`.
pub fn integrate_every(
    p: &PoissonStructure,
    h: &SmoothFunction,
    w0: &StateVector,
    t_end: f64,
    cfg: &IntegratorConfig,
    every: usize,
) -> Result<Trajectory> {
    cfg.validate()?;
    p.check_state(w0)?;
    p.check_function(h)?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end must be positive, got {t_end}")));
    }
    if w0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("initial state has non-finite entries".into()));
    }
    let every = every.max(1);
    let n = (t_end / cfg.step - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / n as f64;

    let labels = (1..=p.dim()).map(|i| format!("x{i}")).collect();
    let mut traj = Trajectory::new(labels);
    let mut audits: Vec<&SmoothFunction> = vec![h];
    audits.extend(p.casimirs());
    let m = p.casimirs().len();
    let names: Vec<String> = std::iter::once("H".to_string())
        .chain((1..=m).map(|i| if m == 1 { "C".to_string() } else { format!("C{i}") }))
        .collect();
    traj.declare_audits(&names);
    if !h.has_analytic_gradient() {
        traj.warnings
            .push(format!("Hamiltonian `{}` uses a finite-difference gradient", h.name()));
    }
    let record = |traj: &mut Trajectory, t: f64, w: &StateVector| {
        let values: Vec<f64> = audits.iter().map(|f| f.value(w)).collect();
        traj.push(t, w.clone(), &values);
    };

    let mut w = w0.clone();
    record(&mut traj, 0.0, &w);
    for i in 0..n {
        let t = i as f64 * dt;
        w = step_unchecked(p, h, &w, dt, cfg).map_err(|e| Error::IntegrationFailed {
            time: t,
            state: w.iter().copied().collect(),
            source: Box::new(e),
        })?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::IntegrationFailed {
                time: t + dt,
                state: w.iter().copied().collect(),
                source: Box::new(Error::ContractViolation("state left the finite range".into())),
            });
        }
        if (i + 1) % every == 0 || i + 1 == n {
            record(&mut traj, (i + 1) as f64 * dt, &w);
        }
    }
    Ok(traj)
}

/// Result of an empirical convergence-order measurement.
#[derive(Debug, Clone, PartialEq)]
pub enum OrderEstimate {
    /// `errors[i]` is the final-state error at step `h/2^i` against the
    /// `h/64` reference; `order = log2(errors[1]/errors[2])`.
    Measured { order: f64, coarse_order: f64, errors: [f64; 3] },
    /// Errors vanish identically (for instance a constant Hamiltonian).
    Degenerate { errors: [f64; 3] },
}

impl OrderEstimate {
    pub fn order(&self) -> Option<f64> {
        match self {
            OrderEstimate::Measured { order, .. } => Some(*order),
            OrderEstimate::Degenerate { .. } => None,
        }
    }
}

/// Empirical order with base step `t_end / 8`.
pub fn convergence_order(
    p: &PoissonStructure,
    h: &SmoothFunction,
    w0: &StateVector,
    t_end: f64,
    method: Method,
) -> Result<OrderEstimate> {
    convergence_order_with_step(p, h, w0, t_end, method, t_end / 8.0)
}

pub fn convergence_order_with_step(
    p: &PoissonStructure,
    h: &SmoothFunction,
    w0: &StateVector,
    t_end: f64,
    method: Method,
    base_step: f64,
) -> Result<OrderEstimate> {
    let run = |dt: f64| -> Result<DVector<f64>> {
        let cfg = IntegratorConfig {
            method,
            step: dt,
            ..IntegratorConfig::default()
        };
        let traj = integrate(p, h, w0, t_end, &cfg)?;
        Ok(traj.states.last().cloned().expect("non-empty trajectory"))
    };
    let reference = run(base_step / 64.0)?;
    let mut errors = [0.0; 3];
    for (i, e) in errors.iter_mut().enumerate() {
        let end = run(base_step / f64::from(1u32 << i))?;
        *e = (end - &reference).amax();
    }
    let scale = 1.0 + reference.amax();
    if errors.iter().all(|&e| e <= 1e-15 * scale) {
        return Ok(OrderEstimate::Degenerate { errors });
    }
    Ok(OrderEstimate::Measured {
        order: (errors[1] / errors[2]).log2(),
        coarse_order: (errors[0] / errors[1]).log2(),
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn harmonic() -> (PoissonStructure, SmoothFunction) {
        let p = PoissonStructure::new("canonical", 2, |_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let h = SmoothFunction::new("H", 2, |w| 0.5 * w.norm_squared(), |w| w.clone());
        (p, h)
    }

    #[test]
    fn constant_hamiltonian_is_a_fixed_point_for_both_methods() {
        let (p, _) = harmonic();
        let h = SmoothFunction::constant(2, 3.0);
        let w = dvector![0.4, -1.1];
        for cfg in [IntegratorConfig::rk4(0.1), IntegratorConfig::midpoint(0.1)] {
            assert_eq!(step(&p, &h, &w, &cfg).unwrap(), w);
        }
    }

    #[test]
    fn harmonic_oscillator_midpoint_matches_cayley_rotation() {
        let (p, h) = harmonic();
        let w = dvector![1.0, 0.0];
        let dt = 0.1;
        let next = step(&p, &h, &w, &IntegratorConfig::midpoint(dt)).unwrap();
        // midpoint on a linear system is the Cayley transform
        let c = (1.0 - dt * dt / 4.0) / (1.0 + dt * dt / 4.0);
        let s = -dt / (1.0 + dt * dt / 4.0);
        assert!((next[0] - c).abs() < 1e-14 && (next[1] - s).abs() < 1e-14, "{next}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (p, h) = harmonic();
        let w = dvector![1.0, 0.0];
        let bad = IntegratorConfig {
            step: 0.0,
            ..IntegratorConfig::default()
        };
        assert!(matches!(step(&p, &h, &w, &bad), Err(Error::InvalidParameter(_))));
        assert!(integrate(&p, &h, &w, -1.0, &IntegratorConfig::default()).is_err());
    }

    #[test]
    fn solver_divergence_carries_iteration_count() {
        let p = PoissonStructure::new("canonical", 2, |_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        // strongly nonlinear field with a huge step: Newton cannot settle in one iteration
        let h = SmoothFunction::new("H", 2, |w| w[0].powi(4) + w[1].powi(4), |w| {
            dvector![4.0 * w[0].powi(3), 4.0 * w[1].powi(3)]
        });
        let cfg = IntegratorConfig {
            step: 10.0,
            newton_max_iter: 1,
            ..IntegratorConfig::default()
        };
        match step(&p, &h, &dvector![1.0, 1.0], &cfg) {
            Err(Error::SolverDivergence { iterations, .. }) => assert_eq!(iterations, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
        let traj = integrate(&p, &h, &dvector![1.0, 1.0], 20.0, &cfg);
        assert!(matches!(traj, Err(Error::IntegrationFailed { time, .. }) if time == 0.0));
    }

    #[test]
    fn integrate_lands_exactly_on_t_end() {
        let (p, h) = harmonic();
        let traj = integrate(&p, &h, &dvector![1.0, 0.0], 1.0, &IntegratorConfig::rk4(0.3)).unwrap();
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert_eq!(traj.len(), 5);
        let traj = integrate_every(&p, &h, &dvector![1.0, 0.0], 1.0, &IntegratorConfig::rk4(0.01), 30).unwrap();
        assert_eq!(traj.times.len(), 5);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
    }

    #[test]
    fn fd_hamiltonian_is_flagged() {
        let (p, _) = harmonic();
        let h = SmoothFunction::without_gradient("H", 2, |w| 0.5 * w.norm_squared());
        let traj = integrate(&p, &h, &dvector![1.0, 0.0], 0.1, &IntegratorConfig::rk4(0.05)).unwrap();
        assert_eq!(traj.warnings.len(), 1);
    }

    #[test]
    fn constant_hamiltonian_gives_degenerate_order() {
        let (p, _) = harmonic();
        let h = SmoothFunction::constant(2, 1.0);
        let est = convergence_order(&p, &h, &dvector![1.0, 0.5], 1.0, Method::Rk4).unwrap();
        assert!(matches!(est, OrderEstimate::Degenerate { .. }));
        assert_eq!(est.order(), None);
    }

    #[test]
    fn method_parses() {
        assert_eq!("rk4".parse::<Method>().unwrap(), Method::Rk4);
        assert_eq!("implicit_midpoint".parse::<Method>().unwrap(), Method::ImplicitMidpoint);
        assert!("euler".parse::<Method>().is_err());
    }
}
