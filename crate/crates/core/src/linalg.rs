//! Small dense linear-algebra helpers shared by the reduction modules.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Relative singular-value threshold used for every numerical rank.
pub const RANK_RTOL: f64 = 1e-8;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

/// Random orthogonal matrix from the QR factorisation of a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, rng).qr();
    let (mut q, r) = (qr.q(), qr.r());
    // fix column signs so the distribution is Haar
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Singular values of `a` (unordered).
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    a.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Number of singular values above `RANK_RTOL · σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = singular_values(a);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Orthonormal basis (as columns) of the null space of `a`.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = a.ncols();
    // pad so that V is square
    let padded = if a.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, a.nrows()).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let thr = if smax == 0.0 { 0.0 } else { RANK_RTOL * smax };
    let null_rows: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= thr)
        .collect();
    let mut basis = DMatrix::zeros(cols, null_rows.len());
    for (j, &i) in null_rows.iter().enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    basis
}

pub fn commutator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// The matrix `hat(ω)` with `hat(ω)·x = ω × x`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Closed-form (Rodrigues) exponential of `hat(φ)`.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let (a, b) = if theta2 < 1e-8 {
        // Taylor expansions of sin θ/θ and (1 − cos θ)/θ²
        (1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation angle in `[0, π]` of a rotation matrix, robust near `π`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // sin from the antisymmetric part, cos from the trace
    let s = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Unit rotation axis of a rotation matrix (any unit vector for the identity).
pub fn rotation_axis(r: &Matrix3<f64>) -> Vector3<f64> {
    let angle = rotation_angle(r);
    if angle < 1e-12 {
        return Vector3::x();
    }
    if angle > std::f64::consts::PI - 1e-6 {
        // R ≈ 2aaᵀ − I: take the dominant column of (R + I)/2
        let b = (r + Matrix3::identity()) * 0.5;
        let j = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap_or(0);
        return b.column(j).normalize();
    }
    Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rank_of_outer_product_is_one() {
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let v = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 0.5, 2.0]);
        assert_eq!(numerical_rank(&(&u * v.transpose())), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(2, 2)), 0);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&a);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).amax() < 1e-12);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = seeded_rng(3);
        let q = random_orthogonal(5, &mut rng);
        assert!((q.transpose() * &q - DMatrix::identity(5, 5)).amax() < 1e-12);
    }

    #[test]
    fn exp_matches_angle_and_axis() {
        let phi = Vector3::new(0.3, -1.2, 0.8);
        let r = so3_exp(&phi);
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-15);
        assert!((rotation_angle(&r) - phi.norm()).abs() < 1e-14);
        assert!((rotation_axis(&r) - phi.normalize()).amax() < 1e-12);
        let half_turn = so3_exp(&(Vector3::new(0.0, 1.0, 1.0).normalize() * PI));
        assert!((rotation_angle(&half_turn) - PI).abs() < 1e-12);
        let ax = rotation_axis(&half_turn);
        assert!((ax.dot(&Vector3::new(0.0, 1.0, 1.0).normalize()).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_angle_exp_uses_series() {
        let phi = Vector3::new(1e-9, 0.0, 0.0);
        let r = so3_exp(&phi);
        assert!((r[(2, 1)] - 1e-9).abs() < 1e-24);
    }
}
