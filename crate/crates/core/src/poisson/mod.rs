//! Generic Poisson-system machinery.
//!
//! A Poisson system on `R^d` is given by a state-dependent antisymmetric
//! tensor `K(w)` satisfying the Jacobi identity; the bracket of two smooth
//! functions is `{F, G}(w) = ∇F(w)ᵀ K(w) ∇G(w)` and the dynamics generated
//! by a Hamiltonian `H` are `ẇ = K(w)∇H(w)`.

mod integrator;
mod trajectory;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub use integrator::{
    convergence_order, convergence_order_with_step, integrate, integrate_every, step, IntegratorConfig,
    Method, OrderEstimate,
};
pub use trajectory::{Audit, Trajectory};
pub(crate) use integrator::step_unchecked as integrator_step;
pub(crate) use trajectory::{parse_row, write_f64};

pub type StateVector = DVector<f64>;

type ValueFn = Arc<dyn Fn(&StateVector) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&StateVector) -> StateVector + Send + Sync>;
type TensorFn = Arc<dyn Fn(&StateVector) -> DMatrix<f64> + Send + Sync>;

/// A real function on `R^d` together with its gradient.
///
/// Functions built with [`SmoothFunction::without_gradient`] fall back to
/// central finite differences; integrators flag such functions in the
/// trajectory warnings.
#[derive(Clone)]
pub struct SmoothFunction {
    name: String,
    dim: usize,
    value: ValueFn,
    gradient: Option<GradientFn>,
}

impl SmoothFunction {
    pub fn new<V, G>(name: impl Into<String>, dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&StateVector) -> f64 + Send + Sync + 'static,
        G: Fn(&StateVector) -> StateVector + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            gradient: Some(Arc::new(gradient)),
        }
    }

    pub fn without_gradient<V>(name: impl Into<String>, dim: usize, value: V) -> Self
    where
        V: Fn(&StateVector) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new("const", dim, move |_| c, move |_| DVector::zeros(dim))
    }

    /// The `i`-th coordinate function `w ↦ w_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        Self::new(
            format!("x{}", i + 1),
            dim,
            move |w| w[i],
            move |_| {
                let mut g = DVector::zeros(dim);
                g[i] = 1.0;
                g
            },
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn value(&self, w: &StateVector) -> f64 {
        (self.value)(w)
    }

    pub fn gradient(&self, w: &StateVector) -> StateVector {
        match &self.gradient {
            Some(g) => g(w),
            None => self.fd_gradient(w),
        }
    }

    /// Central-difference gradient, independent of any analytic gradient.
    pub fn fd_gradient(&self, w: &StateVector) -> StateVector {
        let mut g = DVector::zeros(w.len());
        let mut x = w.clone();
        for i in 0..w.len() {
            let h = 1e-6 * (1.0 + w[i].abs());
            x[i] = w[i] + h;
            let fp = self.value(&x);
            x[i] = w[i] - h;
            let fm = self.value(&x);
            x[i] = w[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    /// Pointwise product `F·G` with gradient by the product rule.
    pub fn product(&self, other: &SmoothFunction) -> SmoothFunction {
        let (a, b) = (self.clone(), other.clone());
        let (ga, gb) = (self.clone(), other.clone());
        SmoothFunction::new(
            format!("{}*{}", self.name, other.name),
            self.dim,
            move |w| a.value(w) * b.value(w),
            move |w| ga.gradient(w) * gb.value(w) + gb.gradient(w) * ga.value(w),
        )
    }
}

impl fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

/// A Poisson tensor `w ↦ K(w)` on `R^dim` with its registered Casimirs.
#[derive(Clone)]
pub struct PoissonStructure {
    name: String,
    dim: usize,
    tensor: TensorFn,
    casimirs: Vec<SmoothFunction>,
}

impl PoissonStructure {
    pub fn new<K>(name: impl Into<String>, dim: usize, tensor: K) -> Self
    where
        K: Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            tensor: Arc::new(tensor),
            casimirs: Vec::new(),
        }
    }

    pub fn with_casimir(mut self, c: SmoothFunction) -> Self {
        self.casimirs.push(c);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn casimirs(&self) -> &[SmoothFunction] {
        &self.casimirs
    }

    pub fn tensor(&self, w: &StateVector) -> DMatrix<f64> {
        (self.tensor)(w)
    }

    pub(crate) fn check_state(&self, w: &StateVector) -> Result<()> {
        check_dim(self.dim, w.len())
    }

    pub(crate) fn check_function(&self, f: &SmoothFunction) -> Result<()> {
        check_dim(self.dim, f.dim())
    }
}

impl fmt::Debug for PoissonStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonStructure")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("casimirs", &self.casimirs.iter().map(|c| c.name()).collect::<Vec<_>>())
            .finish()
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `{F, G}(w) = ∇F(w)ᵀ K(w) ∇G(w)`.
pub fn bracket(p: &PoissonStructure, f: &SmoothFunction, g: &SmoothFunction, w: &StateVector) -> Result<f64> {
    p.check_state(w)?;
    p.check_function(f)?;
    p.check_function(g)?;
    let k = p.tensor(w);
    Ok(f.gradient(w).dot(&(k * g.gradient(w))))
}

/// `K(w)∇H(w)`.
pub fn hamiltonian_vector_field(p: &PoissonStructure, h: &SmoothFunction, w: &StateVector) -> Result<StateVector> {
    p.check_state(w)?;
    p.check_function(h)?;
    Ok(vector_field_unchecked(p, h, w))
}

pub(crate) fn vector_field_unchecked(p: &PoissonStructure, h: &SmoothFunction, w: &StateVector) -> StateVector {
    p.tensor(w) * h.gradient(w)
}

/// Default finite-difference step for [`jacobi_residual`]: `1e-5·(1 + ‖w‖)`.
pub fn jacobi_step(w: &StateVector) -> f64 {
    1e-5 * (1.0 + w.norm())
}

/// Largest absolute cyclic sum
/// `Σ_l K_il ∂_l K_jk + K_jl ∂_l K_ki + K_kl ∂_l K_ij` over all index triples,
/// with `∂_l K` from central differences of step [`jacobi_step`].
pub fn jacobi_residual(p: &PoissonStructure, w: &StateVector) -> Result<f64> {
    jacobi_residual_with_step(p, w, jacobi_step(w))
}

pub fn jacobi_residual_with_step(p: &PoissonStructure, w: &StateVector, eps: f64) -> Result<f64> {
    p.check_state(w)?;
    let d = p.dim();
    let k = p.tensor(w);
    // dk[l] = ∂K/∂w_l
    let dk: Vec<DMatrix<f64>> = (0..d)
        .map(|l| {
            let mut xp = w.clone();
            let mut xm = w.clone();
            xp[l] += eps;
            xm[l] -= eps;
            (p.tensor(&xp) - p.tensor(&xm)) / (2.0 * eps)
        })
        .collect();

    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            for kk in 0..d {
                let mut s = 0.0;
                for (l, dkl) in dk.iter().enumerate() {
                    s += k[(i, l)] * dkl[(j, kk)] + k[(j, l)] * dkl[(kk, i)] + k[(kk, l)] * dkl[(i, j)];
                }
                worst = worst.max(s.abs());
            }
        }
    }
    Ok(worst)
}

/// `‖K(w) + K(w)ᵀ‖_max`.
pub fn antisymmetry_defect(p: &PoissonStructure, w: &StateVector) -> Result<f64> {
    p.check_state(w)?;
    let k = p.tensor(w);
    Ok((&k + k.transpose()).amax())
}
