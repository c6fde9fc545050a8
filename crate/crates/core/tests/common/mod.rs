#![allow(dead_code)]

use std::sync::OnceLock;

use densebody::body_model::{synth_model, BodyModel, PoseParams, ShapeParams};
use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn model() -> &'static BodyModel {
    static M: OnceLock<BodyModel> = OnceLock::new();
    M.get_or_init(|| synth_model(0, 2).unwrap())
}

pub fn small_model() -> &'static BodyModel {
    static M: OnceLock<BodyModel> = OnceLock::new();
    M.get_or_init(|| synth_model(0, 1).unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pose rows up to 0.5 rad, shape in U(-2, 2).
pub fn random_params(rng: &mut impl Rng, m: &BodyModel) -> (PoseParams, ShapeParams) {
    (
        PoseParams::random(rng, m.n_pose(), 0.5),
        ShapeParams::random_uniform(rng, m.n_shape(), 2.0),
    )
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let w = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 2.0;
    let angle = w.norm();
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(w), angle).into_inner()
}

pub fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        sum += ((a[i].x - b[i].x).powi(2) + (a[i].y - b[i].y).powi(2) + (a[i].z - b[i].z).powi(2)).sqrt();
    }
    sum / a.len() as f64
}

/// Similarity `(s, R, t)` minimizing Σ‖sRx + t − y‖², by the unit-quaternion
/// eigenvector method. `scale = false` pins s to one.
pub fn horn_similarity(x: &[Vector3<f64>], y: &[Vector3<f64>], scale: bool) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = x.len() as f64;
    let cx = x.iter().sum::<Vector3<f64>>() / n;
    let cy = y.iter().sum::<Vector3<f64>>() / n;
    let mut m = Matrix3::zeros();
    for (a, b) in x.iter().zip(y) {
        m += (a - cx) * (b - cy).transpose();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    #[rustfmt::skip]
    let k = Matrix4::new(
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(k);
    let best = (0..4).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
    let q = eig.eigenvectors.column(best);
    let (w, i, j, l) = (q[0], q[1], q[2], q[3]);
    #[rustfmt::skip]
    let r = Matrix3::new(
        w*w + i*i - j*j - l*l, 2.0*(i*j - w*l),       2.0*(i*l + w*j),
        2.0*(i*j + w*l),       w*w - i*i + j*j - l*l, 2.0*(j*l - w*i),
        2.0*(i*l - w*j),       2.0*(j*l + w*i),       w*w - i*i - j*j + l*l,
    );
    let s = if scale {
        let num: f64 = x.iter().zip(y).map(|(a, b)| (b - cy).dot(&(r * (a - cx)))).sum();
        let den: f64 = x.iter().map(|a| (a - cx).norm_squared()).sum();
        num / den
    } else {
        1.0
    };
    (s, r, cy - r * cx * s)
}
