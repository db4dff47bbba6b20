//! Reduction of `k` bodies in `R^n` by the Gram-matrix momentum map.
//!
//! With positions `Q = [q₁ … q_k]` and momenta `P = [p₁ … p_k]` (both
//! `n × k`), the `O(n)`-invariant dot products
//!
//! ```text
//! L = QᵀQ,   K = PᵀP,   M = PᵀQ   (M_ij = q_j·p_i)
//! ```
//!
//! form a point of `sp(2k)*`. We display it as `X = [[−Mᵀ, L], [K, M]]`
//! and pair it with `x = [[−αᵀ, β], [γ, α]] ∈ sp(2k)` by `½ tr(Xᵀx)`.
//!
//! The dynamics are written through the coadjoint matrix
//! `Y = 𝒢J = [[−Mᵀ, L], [−K, M]]`, where `𝒢 = [[L, Mᵀ], [M, K]]` is the
//! Gram matrix of the `2k` vectors and `J = [[0, I], [−I, 0]]`. The flow of a
//! collective Hamiltonian is `Ẏ = [Y, B]` and the conserved trace powers are
//! `tr Y^{2j}`. For `k = 1` this is exactly the reduced central-force system
//! in `(w₁, w₂, w₃) = (L, M, K)`, with `tr Y² = −2C(w)`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector3};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{commutator, gaussian_matrix, null_space, numerical_rank, seeded_rng};
use crate::poisson::{IntegratorConfig, PoissonStructure, SmoothFunction, Trajectory};
use crate::{Error, Result};

/// Seed of the generic state used by [`phi_rank_audit`].
pub const RANK_AUDIT_SEED: u64 = 20_240_917;

fn symmetry_tolerance(a: &DMatrix<f64>) -> f64 {
    1e-12 * (1.0 + a.amax())
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= symmetry_tolerance(a)
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `J = [[0, I], [−I, 0]]` of size `2k`.
pub fn symplectic_unit(k: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        j[(i, k + i)] = 1.0;
        j[(k + i, i)] = -1.0;
    }
    j
}

fn blocks(a: &DMatrix<f64>, k: usize) -> [DMatrix<f64>; 4] {
    [
        a.view((0, 0), (k, k)).into_owned(),
        a.view((0, k), (k, k)).into_owned(),
        a.view((k, 0), (k, k)).into_owned(),
        a.view((k, k), (k, k)).into_owned(),
    ]
}

fn from_blocks(b11: &DMatrix<f64>, b12: &DMatrix<f64>, b21: &DMatrix<f64>, b22: &DMatrix<f64>) -> DMatrix<f64> {
    let k = b11.nrows();
    let mut out = DMatrix::zeros(2 * k, 2 * k);
    out.view_mut((0, 0), (k, k)).copy_from(b11);
    out.view_mut((0, k), (k, k)).copy_from(b12);
    out.view_mut((k, 0), (k, k)).copy_from(b21);
    out.view_mut((k, k), (k, k)).copy_from(b22);
    out
}

/// The basis of `sp(2)` in integer arithmetic.
pub fn sp2_basis() -> [Matrix2<i64>; 3] {
    [
        Matrix2::new(0, 2, 0, 0),
        Matrix2::new(-1, 0, 0, 1),
        Matrix2::new(0, 0, -2, 0),
    ]
}

pub fn sp2_basis_f64() -> [DMatrix<f64>; 3] {
    sp2_basis().map(|w| DMatrix::from_fn(2, 2, |r, c| w[(r, c)] as f64))
}

/// An element `[[−αᵀ, β], [γ, α]]` of `sp(2k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sp2kElement {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl Sp2kElement {
    pub fn new(alpha: DMatrix<f64>, beta: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let k = alpha.nrows();
        for (name, m) in [("alpha", &alpha), ("beta", &beta), ("gamma", &gamma)] {
            if m.shape() != (k, k) {
                return Err(Error::InvalidParameter(format!("{name} has shape {:?}, expected {k}x{k}", m.shape())));
            }
        }
        if !is_symmetric(&beta) || !is_symmetric(&gamma) {
            return Err(Error::InvalidParameter("beta and gamma must be symmetric".into()));
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Splits a `2k × 2k` matrix, which must satisfy `xᵀJ + Jx = 0`.
    pub fn from_matrix(x: &DMatrix<f64>) -> Result<Self> {
        if !x.is_square() || x.nrows() % 2 != 0 {
            return Err(Error::InvalidParameter(format!("expected a 2k x 2k matrix, got {:?}", x.shape())));
        }
        let k = x.nrows() / 2;
        let j = symplectic_unit(k);
        let defect = (x.transpose() * &j + &j * x).amax();
        if defect > 1e-10 * (1.0 + x.amax()) {
            return Err(Error::ContractViolation(format!("matrix is not in sp(2k) (defect {defect:e})")));
        }
        let [_, b, c, a] = blocks(x, k);
        Ok(Self {
            alpha: a,
            beta: sym(&b),
            gamma: sym(&c),
        })
    }

    pub fn k(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        from_blocks(&-self.alpha.transpose(), &self.beta, &self.gamma, &self.alpha)
    }
}

/// A point `(M, L, K)` of `sp(2k)*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sp2kDualPoint {
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub kmat: DMatrix<f64>,
}

impl Sp2kDualPoint {
    pub fn new(m: DMatrix<f64>, l: DMatrix<f64>, kmat: DMatrix<f64>) -> Result<Self> {
        let k = m.nrows();
        if m.shape() != (k, k) || l.shape() != (k, k) || kmat.shape() != (k, k) {
            return Err(Error::InvalidParameter("M, L and K must be k x k".into()));
        }
        if !is_symmetric(&l) || !is_symmetric(&kmat) {
            return Err(Error::InvalidParameter("L and K must be symmetric".into()));
        }
        Ok(Self { m, l, kmat })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            m: DMatrix::zeros(k, k),
            l: DMatrix::zeros(k, k),
            kmat: DMatrix::zeros(k, k),
        }
    }

    pub fn k(&self) -> usize {
        self.m.nrows()
    }

    /// `X = [[−Mᵀ, L], [K, M]]`.
    pub fn assemble(&self) -> DMatrix<f64> {
        from_blocks(&-self.m.transpose(), &self.l, &self.kmat, &self.m)
    }

    /// `Y = 𝒢J = [[−Mᵀ, L], [−K, M]]`.
    pub fn coadjoint_matrix(&self) -> DMatrix<f64> {
        from_blocks(&-self.m.transpose(), &self.l, &-&self.kmat, &self.m)
    }

    fn from_coadjoint(y: &DMatrix<f64>) -> Self {
        let k = y.nrows() / 2;
        let [_, b, c, d] = blocks(y, k);
        Self {
            m: d,
            l: b,
            kmat: -c,
        }
    }

    /// `𝒢 = [[L, Mᵀ], [M, K]]`.
    pub fn gram(&self) -> DMatrix<f64> {
        from_blocks(&self.l, &self.m.transpose(), &self.m, &self.kmat)
    }

    /// Coordinates `ξ`: upper triangle of `L` and of `K` (row-major), then `M`
    /// row-major.
    pub fn to_xi(&self) -> DVector<f64> {
        let k = self.k();
        let mut v = Vec::with_capacity(xi_dim(k));
        for s in [&self.l, &self.kmat] {
            for i in 0..k {
                for j in i..k {
                    v.push(s[(i, j)]);
                }
            }
        }
        for i in 0..k {
            for j in 0..k {
                v.push(self.m[(i, j)]);
            }
        }
        DVector::from_vec(v)
    }

    pub fn from_xi(xi: &DVector<f64>, k: usize) -> Result<Self> {
        if xi.len() != xi_dim(k) {
            return Err(Error::DimensionMismatch {
                expected: xi_dim(k),
                found: xi.len(),
            });
        }
        let mut out = Self::zeros(k);
        let mut it = xi.iter().copied();
        for s in [&mut out.l, &mut out.kmat] {
            for i in 0..k {
                for j in i..k {
                    let v = it.next().unwrap_or_default();
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
        }
        for i in 0..k {
            for j in 0..k {
                out.m[(i, j)] = it.next().unwrap_or_default();
            }
        }
        Ok(out)
    }
}

/// `dim sp(2k) = k(2k + 1)`.
pub fn xi_dim(k: usize) -> usize {
    k * (2 * k + 1)
}

/// Column labels matching [`Sp2kDualPoint::to_xi`].
pub fn xi_labels(k: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(xi_dim(k));
    for name in ["L", "K"] {
        for i in 1..=k {
            for j in i..=k {
                out.push(format!("{name}{i}{j}"));
            }
        }
    }
    for i in 1..=k {
        for j in 1..=k {
            out.push(format!("M{i}{j}"));
        }
    }
    out
}

/// Positions and momenta of `k` bodies in `R^n`, one body per column.
#[derive(Debug, Clone, PartialEq)]
pub struct ManyBodyState {
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl ManyBodyState {
    pub fn new(q: DMatrix<f64>, p: DMatrix<f64>) -> Result<Self> {
        if q.shape() != p.shape() || q.ncols() == 0 || q.nrows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "positions {:?} and momenta {:?} must have the same non-empty shape",
                q.shape(),
                p.shape()
            )));
        }
        if q.iter().chain(p.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("state has non-finite entries".into()));
        }
        Ok(Self { q, p })
    }

    pub fn from_bodies(q: &[Vec<f64>], p: &[Vec<f64>]) -> Result<Self> {
        let n = q.first().map_or(0, Vec::len);
        if q.len() != p.len() || q.iter().chain(p).any(|v| v.len() != n) {
            return Err(Error::InvalidParameter("every body needs position and momentum of the same dimension".into()));
        }
        let col = |vs: &[Vec<f64>]| DMatrix::from_fn(n, vs.len(), |r, c| vs[c][r]);
        Self::new(col(q), col(p))
    }

    /// Gaussian positions and momenta.
    pub fn random(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let q = gaussian_matrix(n, k, rng);
        let p = gaussian_matrix(n, k, rng);
        Self { q, p }
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    /// `[vec Q, vec P]` with column-major `vec`.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(2 * self.q.len(), self.q.iter().chain(self.p.iter()).copied())
    }

    pub fn from_vector(z: &DVector<f64>, n: usize, k: usize) -> Result<Self> {
        if z.len() != 2 * n * k {
            return Err(Error::DimensionMismatch {
                expected: 2 * n * k,
                found: z.len(),
            });
        }
        Self::new(
            DMatrix::from_column_slice(n, k, &z.as_slice()[..n * k]),
            DMatrix::from_column_slice(n, k, &z.as_slice()[n * k..]),
        )
    }
}

pub fn momentum_map_phi(s: &ManyBodyState) -> Sp2kDualPoint {
    let l = s.q.transpose() * &s.q;
    let kmat = s.p.transpose() * &s.p;
    let m = s.p.transpose() * &s.q;
    Sp2kDualPoint {
        m,
        // exact symmetry despite rounding in the products
        l: sym(&l),
        kmat: sym(&kmat),
    }
}

/// `⟨X, x⟩ = ½ tr(Xᵀx)`.
pub fn pairing(x_dual: &Sp2kDualPoint, x: &Sp2kElement) -> f64 {
    0.5 * (x_dual.assemble().transpose() * x.assemble()).trace()
}

/// Projects an ambient gradient (partials with respect to the entries of the
/// displayed `X`) onto `sp(2k)` so that `dH(δX) = ⟨δX, x⟩`.
pub fn project_gradient(g: &DMatrix<f64>, k: usize) -> Result<Sp2kElement> {
    if g.shape() != (2 * k, 2 * k) {
        return Err(Error::ContractViolation(format!(
            "gradient has shape {:?}, expected {}x{}",
            g.shape(),
            2 * k,
            2 * k
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::ContractViolation("gradient has non-finite entries".into()));
    }
    let j = symplectic_unit(k);
    let x = &j * sym(&(j.transpose() * g)) * 2.0;
    Sp2kElement::from_matrix(&x)
}

/// A Hamiltonian on `sp(2k)*`.
pub trait DualHamiltonian: Send + Sync {
    fn name(&self) -> &str;
    fn k(&self) -> usize;
    fn value(&self, x: &Sp2kDualPoint) -> f64;
    /// `∂H/∂X_ab` for the displayed matrix `X`; only the projection onto
    /// `sp(2k)` matters.
    fn gradient(&self, x: &Sp2kDualPoint) -> DMatrix<f64>;
}

impl fmt::Debug for dyn DualHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DualHamiltonian({}, k = {})", self.name(), self.k())
    }
}

type XiValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type XiGradFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A Hamiltonian given in the coordinates `ξ`.
#[derive(Clone)]
pub struct XiHamiltonian {
    name: String,
    k: usize,
    value: XiValueFn,
    gradient: XiGradFn,
}

impl XiHamiltonian {
    pub fn new<V, G>(name: impl Into<String>, k: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            k,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    /// `aᵀξ + ½ ξᵀSξ` with `S` symmetrised.
    pub fn quadratic(name: impl Into<String>, k: usize, a: DVector<f64>, s: DMatrix<f64>) -> Self {
        let s = sym(&s);
        let (a2, s2) = (a.clone(), s.clone());
        Self::new(
            name,
            k,
            move |xi| a.dot(xi) + 0.5 * xi.dot(&(&s * xi)),
            move |xi| &a2 + &s2 * xi,
        )
    }
}

impl DualHamiltonian for XiHamiltonian {
    fn name(&self) -> &str {
        &self.name
    }
    fn k(&self) -> usize {
        self.k
    }
    fn value(&self, x: &Sp2kDualPoint) -> f64 {
        (self.value)(&x.to_xi())
    }
    fn gradient(&self, x: &Sp2kDualPoint) -> DMatrix<f64> {
        xi_to_ambient(&(self.gradient)(&x.to_xi()), self.k)
    }
}

/// Places a `ξ`-gradient on the upper triangles of the `L` and `K` blocks and
/// on the `M` block of an ambient matrix.
pub fn xi_to_ambient(g: &DVector<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * k, 2 * k);
    let mut idx = 0;
    for (r0, c0) in [(0, k), (k, 0)] {
        for i in 0..k {
            for j in i..k {
                out[(r0 + i, c0 + j)] = g[idx];
                idx += 1;
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            out[(k + i, k + j)] = g[idx];
            idx += 1;
        }
    }
    out
}

/// The `ξ`-gradient of a Hamiltonian with ambient gradient `g`.
pub fn ambient_to_xi(g: &DMatrix<f64>, k: usize) -> DVector<f64> {
    let mut v = Vec::with_capacity(xi_dim(k));
    for (r0, c0) in [(0, k), (k, 0)] {
        for i in 0..k {
            for j in i..k {
                let d = if i == j {
                    g[(r0 + i, c0 + i)]
                } else {
                    g[(r0 + i, c0 + j)] + g[(r0 + j, c0 + i)]
                };
                v.push(d);
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            // M appears directly and, transposed with a minus sign, top-left
            v.push(g[(k + i, k + j)] - g[(j, i)]);
        }
    }
    DVector::from_vec(v)
}

/// `H = Σ Kᵢᵢ/(2mᵢ) + Σ_{i<j} V(Lᵢᵢ − 2Lᵢⱼ + Lⱼⱼ)`.
#[derive(Clone)]
pub struct PairwiseHamiltonian {
    masses: Vec<f64>,
    potential: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for PairwiseHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairwiseHamiltonian").field("masses", &self.masses).finish()
    }
}

/// Builds the pairwise Hamiltonian from `V` (a function of the squared
/// distance) and its derivative `V′`.
pub fn collective_pairwise_hamiltonian<V, D>(masses: &[f64], v: V, dv: D) -> Result<PairwiseHamiltonian>
where
    V: Fn(f64) -> f64 + Send + Sync + 'static,
    D: Fn(f64) -> f64 + Send + Sync + 'static,
{
    if masses.is_empty() {
        return Err(Error::InvalidParameter("at least one mass is required".into()));
    }
    if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidParameter(format!("masses must be positive, got {m}")));
    }
    Ok(PairwiseHamiltonian {
        masses: masses.to_vec(),
        potential: Arc::new(v),
        derivative: Arc::new(dv),
    })
}

pub const BUILTIN_POTENTIALS: [&str; 3] = ["linear", "harmonic", "newton"];

/// Pair potentials as functions of the squared distance `u`:
/// `linear` is `u`, `harmonic` is `u/2` and `newton` is `−u^(−1/2)`.
pub fn builtin_pairwise(masses: &[f64], potential: &str) -> Result<PairwiseHamiltonian> {
    match potential {
        "linear" => collective_pairwise_hamiltonian(masses, |u| u, |_| 1.0),
        "harmonic" => collective_pairwise_hamiltonian(masses, |u| 0.5 * u, |_| 0.5),
        "newton" => collective_pairwise_hamiltonian(masses, |u: f64| -u.powf(-0.5), |u: f64| 0.5 * u.powf(-1.5)),
        other => Err(Error::InvalidParameter(format!(
            "unknown potential `{other}` (expected one of {BUILTIN_POTENTIALS:?})"
        ))),
    }
}

impl PairwiseHamiltonian {
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

fn pair_distance2(l: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    l[(i, i)] - 2.0 * l[(i, j)] + l[(j, j)]
}

impl DualHamiltonian for PairwiseHamiltonian {
    fn name(&self) -> &str {
        "pairwise"
    }
    fn k(&self) -> usize {
        self.masses.len()
    }
    fn value(&self, x: &Sp2kDualPoint) -> f64 {
        let k = self.k();
        let mut h: f64 = (0..k).map(|i| x.kmat[(i, i)] / (2.0 * self.masses[i])).sum();
        for i in 0..k {
            for j in i + 1..k {
                h += (self.potential)(pair_distance2(&x.l, i, j));
            }
        }
        h
    }
    fn gradient(&self, x: &Sp2kDualPoint) -> DMatrix<f64> {
        let k = self.k();
        let mut g = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            g[(k + i, i)] = 1.0 / (2.0 * self.masses[i]);
        }
        for i in 0..k {
            for j in i + 1..k {
                let d = (self.derivative)(pair_distance2(&x.l, i, j));
                g[(i, k + i)] += d;
                g[(j, k + j)] += d;
                g[(i, k + j)] -= 2.0 * d;
            }
        }
        g
    }
}

/// Translates to the centre of mass and removes the total momentum.
pub fn remove_center_of_mass(s: &ManyBodyState, masses: &[f64]) -> Result<ManyBodyState> {
    if masses.len() != s.k() {
        return Err(Error::DimensionMismatch {
            expected: s.k(),
            found: masses.len(),
        });
    }
    if masses.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidParameter("masses must be positive".into()));
    }
    let total: f64 = masses.iter().sum();
    let w = DVector::from_column_slice(masses);
    let centre = &s.q * &w / total;
    let momentum = s.p.column_sum();
    let mut out = s.clone();
    for (i, m) in masses.iter().enumerate() {
        let mut q = out.q.column_mut(i);
        q -= &centre;
        let mut p = out.p.column_mut(i);
        p -= &momentum * (m / total);
    }
    Ok(out)
}

/// Splits the projected gradient into the matrix `A ∈ sp(2k)` with
/// `Ż = Z·A` for `Z = [Q P]`: `A = [[αᵀ, −β], [γ, −α]]`.
fn canonical_generator(x: &Sp2kElement) -> DMatrix<f64> {
    from_blocks(&x.alpha.transpose(), &-&x.beta, &x.gamma, &-&x.alpha)
}

/// The Lie–Poisson field `Ẋ = {X, H}` at `x`, returned as the rates
/// `(Ṁ, L̇, K̇)`.
pub fn lie_poisson_vector_field(h: &dyn DualHamiltonian, x: &Sp2kDualPoint) -> Result<Sp2kDualPoint> {
    let k = x.k();
    if h.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: h.k(),
        });
    }
    if !is_symmetric(&x.l) || !is_symmetric(&x.kmat) {
        return Err(Error::ContractViolation("L and K must be symmetric".into()));
    }
    let grad = project_gradient(&h.gradient(x), k)?;
    Ok(coadjoint_rate(x, &grad))
}

fn coadjoint_rate(x: &Sp2kDualPoint, grad: &Sp2kElement) -> Sp2kDualPoint {
    let k = x.k();
    let j = symplectic_unit(k);
    let b = j.transpose() * canonical_generator(grad) * &j;
    let rate = Sp2kDualPoint::from_coadjoint(&commutator(&x.coadjoint_matrix(), &b));
    Sp2kDualPoint {
        l: sym(&rate.l),
        kmat: sym(&rate.kmat),
        m: rate.m,
    }
}

/// `tr Y², tr Y⁴, …, tr Y^{2⌊n/2⌋}` of the coadjoint matrix.
pub fn casimirs(x: &Sp2kDualPoint, n: usize) -> Vec<f64> {
    let y = x.coadjoint_matrix();
    let y2 = &y * &y;
    let mut power = y2.clone();
    let mut out = Vec::with_capacity(n / 2);
    for _ in 0..n / 2 {
        out.push(power.trace());
        power = &power * &y2;
    }
    out
}

fn xi_unit_points(k: usize) -> Vec<Sp2kDualPoint> {
    (0..xi_dim(k))
        .map(|i| {
            let mut e = DVector::zeros(xi_dim(k));
            e[i] = 1.0;
            Sp2kDualPoint::from_xi(&e, k).expect("dimension matches")
        })
        .collect()
}

/// The Lie–Poisson structure of `sp(2k)*` in the coordinates `ξ`, with the
/// trace powers `tr Y^{2j}`, `j = 1..⌊n/2⌋`, registered as Casimirs.
pub fn sp2k_structure(k: usize, n: usize) -> Result<PoissonStructure> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let d = xi_dim(k);
    let units: Vec<DMatrix<f64>> = xi_unit_points(k).iter().map(|p| p.coadjoint_matrix()).collect();
    let tensor = move |xi: &DVector<f64>| {
        let x = Sp2kDualPoint::from_xi(xi, k).expect("dimension checked by the structure");
        let mut t = DMatrix::zeros(d, d);
        for c in 0..d {
            // column c is the field of the coordinate function ξ_c
            let mut g = DVector::zeros(d);
            g[c] = 1.0;
            let grad = project_gradient(&xi_to_ambient(&g, k), k).expect("finite linear gradient");
            t.set_column(c, &coadjoint_rate(&x, &grad).to_xi());
        }
        t
    };
    let mut p = PoissonStructure::new(format!("sp({})*", 2 * k), d, tensor);
    for j in 1..=n / 2 {
        let units = units.clone();
        p = p.with_casimir(SmoothFunction::new(
            format!("C{j}"),
            d,
            move |xi| {
                let x = Sp2kDualPoint::from_xi(xi, k).expect("dimension checked");
                casimirs(&x, 2 * j)[j - 1]
            },
            move |xi| {
                let y = Sp2kDualPoint::from_xi(xi, k).expect("dimension checked").coadjoint_matrix();
                let odd = y.pow((2 * j - 1) as u32);
                DVector::from_iterator(d, units.iter().map(|u| 2.0 * j as f64 * (&odd * u).trace()))
            },
        ));
    }
    Ok(p)
}

/// A [`DualHamiltonian`] viewed as a function of `ξ`.
pub fn as_smooth_function(h: Arc<dyn DualHamiltonian>) -> SmoothFunction {
    let k = h.k();
    let g = h.clone();
    SmoothFunction::new(
        h.name().to_string(),
        xi_dim(k),
        move |xi| h.value(&Sp2kDualPoint::from_xi(xi, k).expect("dimension checked")),
        move |xi| ambient_to_xi(&g.gradient(&Sp2kDualPoint::from_xi(xi, k).expect("dimension checked")), k),
    )
}

/// Canonical gradient `(∂/∂Q, ∂/∂P)` of `H∘φ` at `s`.
pub fn pullback_gradient(s: &ManyBodyState, ambient_gradient: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x = project_gradient(ambient_gradient, s.k())?;
    // β = 2 sym ∂H/∂L, γ = 2 sym ∂H/∂K, α = ∂H/∂M
    let dq = &s.q * &x.beta + &s.p * &x.alpha;
    let dp = &s.p * &x.gamma + &s.q * x.alpha.transpose();
    Ok((dq, dp))
}

/// Hamilton's equations for `H∘φ`.
pub fn collective_vector_field(h: &dyn DualHamiltonian, s: &ManyBodyState) -> Result<ManyBodyState> {
    let (dq, dp) = pullback_gradient(s, &h.gradient(&momentum_map_phi(s)))?;
    Ok(ManyBodyState { q: dp, p: -dq })
}

/// The canonical system on `R^{2nk}` (state layout of
/// [`ManyBodyState::to_vector`]) with Hamiltonian `H∘φ`.
pub fn collective_system(h: Arc<dyn DualHamiltonian>, n: usize) -> (PoissonStructure, SmoothFunction) {
    let k = h.k();
    let d = 2 * n * k;
    let half = n * k;
    let p = PoissonStructure::new("canonical", d, move |_| {
        let mut j = DMatrix::zeros(d, d);
        for i in 0..half {
            j[(i, half + i)] = 1.0;
            j[(half + i, i)] = -1.0;
        }
        j
    });
    let g = h.clone();
    let f = SmoothFunction::new(
        format!("{}∘φ", h.name()),
        d,
        move |z| {
            let s = ManyBodyState::from_vector(z, n, k).expect("dimension checked");
            h.value(&momentum_map_phi(&s))
        },
        move |z| {
            let s = ManyBodyState::from_vector(z, n, k).expect("dimension checked");
            match pullback_gradient(&s, &g.gradient(&momentum_map_phi(&s))) {
                Ok((dq, dp)) => DVector::from_iterator(d, dq.iter().chain(dp.iter()).copied()),
                Err(_) => DVector::from_element(d, f64::NAN),
            }
        },
    );
    (p, f)
}

/// Integrates `Ẏ = [Y, B]` by the isospectral Cayley midpoint rule
/// `Y⁺ = S⁻¹ Y S`, `S = cay(h B̄)`, with `B̄` taken at the midpoint and found
/// by fixed-point iteration to `cfg.newton_tol`. Every trace power of `Y` is
/// conserved up to rounding. `cfg.method` is not consulted.
///
/// Columns follow [`xi_labels`]; audits are `H` and `C1..C⌊n/2⌋`.
pub fn integrate_coadjoint(
    h: &dyn DualHamiltonian,
    x0: &Sp2kDualPoint,
    n: usize,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end must be positive, got {t_end}")));
    }
    let k = x0.k();
    if h.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: h.k(),
        });
    }
    let steps = (t_end / cfg.step - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let j = symplectic_unit(k);
    let id = DMatrix::<f64>::identity(2 * k, 2 * k);

    let mut traj = Trajectory::new(xi_labels(k));
    let names: Vec<String> = std::iter::once("H".to_string())
        .chain((1..=n / 2).map(|i| format!("C{i}")))
        .collect();
    traj.declare_audits(&names);
    let record = |traj: &mut Trajectory, t: f64, x: &Sp2kDualPoint| {
        let mut audits = vec![h.value(x)];
        audits.extend(casimirs(x, n));
        traj.push(t, x.to_xi(), &audits);
    };

    let mut x = x0.clone();
    record(&mut traj, 0.0, &x);
    for i in 0..steps {
        let y = x.coadjoint_matrix();
        let mut next = x.clone();
        let mut converged = false;
        let mut last = f64::INFINITY;
        for _ in 0..cfg.newton_max_iter {
            let mid = Sp2kDualPoint {
                m: (&x.m + &next.m) * 0.5,
                l: (&x.l + &next.l) * 0.5,
                kmat: (&x.kmat + &next.kmat) * 0.5,
            };
            let grad = project_gradient(&h.gradient(&mid), k)?;
            let b = j.transpose() * canonical_generator(&grad) * &j * dt;
            let minus = &id - &b * 0.5;
            let plus = &id + &b * 0.5;
            let s = minus.clone().lu().solve(&plus).ok_or(Error::SolverDivergence {
                iterations: 0,
                last_update: f64::NAN,
            })?;
            let s_inv = plus.lu().solve(&minus).ok_or(Error::SolverDivergence {
                iterations: 0,
                last_update: f64::NAN,
            })?;
            let candidate = Sp2kDualPoint::from_coadjoint(&(s_inv * &y * s));
            let candidate = Sp2kDualPoint {
                l: sym(&candidate.l),
                kmat: sym(&candidate.kmat),
                m: candidate.m,
            };
            last = (candidate.to_xi() - next.to_xi()).amax();
            next = candidate;
            if !last.is_finite() {
                break;
            }
            if last <= cfg.newton_tol * (1.0 + next.to_xi().amax()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::IntegrationFailed {
                time: i as f64 * dt,
                state: x.to_xi().iter().copied().collect(),
                source: Box::new(Error::SolverDivergence {
                    iterations: cfg.newton_max_iter,
                    last_update: last,
                }),
            });
        }
        x = next;
        record(&mut traj, (i + 1) as f64 * dt, &x);
    }
    Ok(traj)
}

/// `dφ` at `s` as a `k(2k+1) × 2nk` matrix in the coordinates `ξ` and
/// [`ManyBodyState::to_vector`]. Central differences with unit step are
/// exact up to rounding because `φ` is quadratic.
pub fn phi_jacobian(s: &ManyBodyState) -> DMatrix<f64> {
    let (n, k) = (s.n(), s.k());
    let z = s.to_vector();
    let mut jac = DMatrix::zeros(xi_dim(k), z.len());
    let eval = |z: &DVector<f64>| momentum_map_phi(&ManyBodyState::from_vector(z, n, k).expect("same shape")).to_xi();
    for c in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[c] += 1.0;
        zm[c] -= 1.0;
        jac.set_column(c, &((eval(&zp) - eval(&zm)) * 0.5));
    }
    jac
}

/// Numerical and closed-form dimensions for the map `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct RankAudit {
    pub n: usize,
    pub k: usize,
    /// `dim sp(2k)* = k(2k+1)`.
    pub dual_dimension: usize,
    pub jacobian_rank: usize,
    /// Dimension of the Gram matrices of rank `r = min(n, 2k)`:
    /// `2kr − r(r−1)/2`, which is `2nk − n(n−1)/2` when `n ≤ 2k`.
    pub image_dimension: usize,
    /// Image dimension minus the `⌊r/2⌋` independent Casimirs.
    pub leaf_dimension: usize,
    /// Numerical rank of the Poisson tensor at the image point.
    pub poisson_rank: usize,
}

pub fn phi_rank_audit(n: usize, k: usize) -> Result<RankAudit> {
    phi_rank_audit_with_seed(n, k, RANK_AUDIT_SEED)
}

pub fn phi_rank_audit_with_seed(n: usize, k: usize, seed: u64) -> Result<RankAudit> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidParameter("n and k must be positive".into()));
    }
    let s = ManyBodyState::random(n, k, &mut seeded_rng(seed));
    let r = n.min(2 * k);
    let image_dimension = 2 * k * r - r * (r - 1) / 2;
    let structure = sp2k_structure(k, n)?;
    Ok(RankAudit {
        n,
        k,
        dual_dimension: xi_dim(k),
        jacobian_rank: numerical_rank(&phi_jacobian(&s)),
        image_dimension,
        leaf_dimension: image_dimension - r / 2,
        poisson_rank: numerical_rank(&structure.tensor(&momentum_map_phi(&s).to_xi())),
    })
}

/// `(aq + bp, cq + dp)`.
pub fn sp2_act(g: &Matrix2<f64>, q: &Vector3<f64>, p: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    (q * g[(0, 0)] + p * g[(0, 1)], q * g[(1, 0)] + p * g[(1, 1)])
}

/// Frobenius-orthonormal basis of `sp(2m)`: `J·S` for `S` running over an
/// orthonormal basis of the symmetric matrices.
pub fn sp_basis(m: usize) -> Vec<DMatrix<f64>> {
    let d = 2 * m;
    let j = symplectic_unit(m);
    let mut out = Vec::with_capacity(m * (2 * m + 1));
    for a in 0..d {
        for b in a..d {
            let mut s = DMatrix::zeros(d, d);
            if a == b {
                s[(a, a)] = 1.0;
            } else {
                s[(a, b)] = FRAC_1_SQRT_2;
                s[(b, a)] = FRAC_1_SQRT_2;
            }
            out.push(&j * s);
        }
    }
    out
}

/// `so(n)` acting diagonally on `(q, p)`: `diag(a, a)`.
pub fn embedded_rotations(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let mut g = DMatrix::zeros(2 * n, 2 * n);
            for off in [0, n] {
                g[(off + a, off + b)] = 1.0;
                g[(off + b, off + a)] = -1.0;
            }
            out.push(g);
        }
    }
    out
}

/// `sp(2)` acting on `(q, p)`: `W ⊗ I_n`.
pub fn embedded_sp2(n: usize) -> Vec<DMatrix<f64>> {
    sp2_basis_f64()
        .iter()
        .map(|w| DMatrix::from_fn(2 * n, 2 * n, |r, c| if r % n == c % n { w[(r / n, c / n)] } else { 0.0 }))
        .collect()
}

/// Centralizer of `generators` inside the span of `basis` (assumed
/// Frobenius-orthonormal); returned as matrices.
pub fn centralizer(basis: &[DMatrix<f64>], generators: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let Some(first) = basis.first() else { return Vec::new() };
    let block = first.len();
    let mut a = DMatrix::zeros(block * generators.len(), basis.len());
    for (c, x) in basis.iter().enumerate() {
        for (gi, g) in generators.iter().enumerate() {
            let br = commutator(x, g);
            a.view_mut((gi * block, c), (block, 1)).copy_from_slice(br.as_slice());
        }
    }
    let null = null_space(&a);
    null.column_iter()
        .map(|coeffs| {
            basis
                .iter()
                .zip(coeffs.iter())
                .fold(DMatrix::zeros(first.nrows(), first.ncols()), |acc, (b, c)| acc + b * *c)
        })
        .collect()
}

/// Largest relative distance of a target from the span of `basis`.
pub fn span_residual(basis: &[DMatrix<f64>], targets: &[DMatrix<f64>]) -> f64 {
    if basis.is_empty() {
        return if targets.is_empty() { 0.0 } else { 1.0 };
    }
    let rows = basis[0].len();
    let b = DMatrix::from_fn(rows, basis.len(), |r, c| basis[c].as_slice()[r]);
    let svd = b.svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.amax();
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-8 * smax)
        .collect();
    let u = u.select_columns(&cols);
    targets
        .iter()
        .map(|t| {
            let v = DVector::from_column_slice(t.as_slice());
            let r = &v - &u * (u.transpose() * &v);
            r.norm() / v.norm().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// One direction of the dual-pair check.
#[derive(Debug, Clone)]
pub struct CentralizerReport {
    pub dimension: usize,
    pub basis: Vec<DMatrix<f64>>,
    /// Distance of the expected partner algebra from the computed span.
    pub span_residual: f64,
}

#[derive(Debug, Clone)]
pub struct DualPairReport {
    /// Centralizer of the rotations; expected to be `sp(2) ⊗ I`.
    pub of_rotations: CentralizerReport,
    /// Centralizer of `sp(2) ⊗ I`; expected to be the rotations.
    pub of_sp2: CentralizerReport,
}

/// Computes both centralizers inside `sp(2n)` for bodies in `R^n`, `n ≥ 3`.
pub fn dual_pair_centralizer_check(n: usize) -> Result<DualPairReport> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("the rotation group is abelian or trivial for n = {n}")));
    }
    let basis = sp_basis(n);
    let rotations = embedded_rotations(n);
    let sp2 = embedded_sp2(n);
    let report = |gens: &[DMatrix<f64>], partner: &[DMatrix<f64>]| {
        let c = centralizer(&basis, gens);
        CentralizerReport {
            dimension: c.len(),
            span_residual: span_residual(&c, partner),
            basis: c,
        }
    };
    Ok(DualPairReport {
        of_rotations: report(&rotations, &sp2),
        of_sp2: report(&sp2, &rotations),
    })
}
