//! Axis-angle (Rodrigues) rotations and their derivatives.
//!
//! `R(w) = I + a(t) [w]x + b(t) [w]x^2` with `t = |w|`, `a = sin t / t`,
//! `b = (1 - cos t) / t^2`.

use nalgebra::{Matrix3, Vector3};

/// Below this angle the ratios `a` and `b` use their second-order Taylor expansion.
pub const TAYLOR_CUTOFF: f64 = 1e-8;

/// Below this angle the derivative ratios `a'/t` and `b'/t` use a series expansion;
/// their closed forms lose digits to cancellation well above `TAYLOR_CUTOFF`.
const DERIVATIVE_SERIES_CUTOFF: f64 = 0.1;

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn ratios(theta: f64) -> (f64, f64) {
    if theta < TAYLOR_CUTOFF {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half * half / (theta * theta))
    }
}

fn derivative_ratios(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < DERIVATIVE_SERIES_CUTOFF {
        let c = -1.0 / 3.0 + t2 * (1.0 / 30.0 + t2 * (-1.0 / 840.0 + t2 / 45360.0));
        let d = -1.0 / 12.0 + t2 * (1.0 / 180.0 + t2 * (-1.0 / 6720.0 + t2 / 453600.0));
        (c, d)
    } else {
        let (s, co) = theta.sin_cos();
        let c = (theta * co - s) / (t2 * theta);
        let d = (theta * s - 2.0 * (1.0 - co)) / (t2 * t2);
        (c, d)
    }
}

pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = ratios(w.norm());
    let k = skew(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix together with its partial derivatives w.r.t. the three
/// components of the axis-angle vector.
pub fn rodrigues_with_jacobian(w: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let theta = w.norm();
    let (a, b) = ratios(theta);
    let (c, d) = derivative_ratios(theta);
    let k = skew(w);
    let k2 = k * k;
    let r = Matrix3::identity() + k * a + k2 * b;
    let mut dr = [Matrix3::zeros(); 3];
    for (axis, out) in dr.iter_mut().enumerate() {
        let kc = skew(&Vector3::ith(axis, 1.0));
        *out = kc * a + (kc * k + k * kc) * b + k * (w[axis] * c) + k2 * (w[axis] * d);
    }
    (r, dr)
}

/// Rotation about the z axis by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    rodrigues(&Vector3::new(0.0, 0.0, angle))
}

/// Axis-angle vector of a proper rotation matrix (angle in `[0, pi]`).
pub fn log_map(r: &Matrix3<f64>) -> Vector3<f64> {
    nalgebra::Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(w: Vector3<f64>) {
        let (_, dr) = rodrigues_with_jacobian(&w);
        let h = 1e-6;
        for axis in 0..3 {
            let mut wp = w;
            let mut wm = w;
            wp[axis] += h;
            wm[axis] -= h;
            let fd = (rodrigues(&wp) - rodrigues(&wm)) / (2.0 * h);
            let err = (fd - dr[axis]).abs().max();
            assert!(err < 1e-8, "axis {axis} at {w:?}: {err}");
        }
    }

    #[test]
    fn orthonormal_with_unit_determinant() {
        let r = rodrigues(&Vector3::new(0.3, -1.2, 2.0));
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-14);
        assert!((r.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quarter_turn_about_x() {
        let r = rodrigues(&Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        let y = r * Vector3::y();
        assert!((y - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn zero_vector_is_identity_and_derivative_is_skew_basis() {
        let (r, dr) = rodrigues_with_jacobian(&Vector3::zeros());
        assert_eq!(r, Matrix3::identity());
        for (axis, d) in dr.iter().enumerate() {
            assert_eq!(*d, skew(&Vector3::ith(axis, 1.0)));
        }
    }

    #[test]
    fn derivative_matches_finite_differences_across_regimes() {
        fd_check(Vector3::new(1e-9, -2e-9, 5e-10));
        fd_check(Vector3::new(1e-4, 3e-5, -2e-4));
        fd_check(Vector3::new(0.05, -0.04, 0.06));
        fd_check(Vector3::new(0.3, 0.2, -0.1));
        fd_check(Vector3::new(-1.5, 2.0, 0.7));
    }

    #[test]
    fn log_map_inverts_rodrigues() {
        let w = Vector3::new(0.4, -0.2, 0.9);
        assert!((log_map(&rodrigues(&w)) - w).norm() < 1e-12);
    }
}
