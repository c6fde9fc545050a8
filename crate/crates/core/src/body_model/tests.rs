use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rotation::rodrigues;

fn small_model() -> BodyModel {
    synth_model(7, 0).unwrap()
}

fn with_random_pose_dirs(model: &BodyModel, seed: u64) -> BodyModel {
    let mut data = model.data().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = model.n_vertices() * 3 * 9 * model.n_pose();
    data.pose_dirs = Some((0..len).map(|_| rng.random_range(-0.01..0.01)).collect());
    BodyModel::new(data).unwrap()
}

/// Textbook LBS with homogeneous 4x4 chains, evaluated on the dense arrays.
fn oracle_forward(d: &BodyModelData, pose: &[Vector3<f64>], beta: &[f64]) -> Vec<Vector3<f64>> {
    let n = d.template.len();
    let j = d.parents.len();
    let s = d.n_shape;
    let shaped: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            Vector3::from_fn(|c, _| {
                d.template[i][c] + (0..s).map(|b| d.shape_dirs[(i * 3 + c) * s + b] * beta[b]).sum::<f64>()
            })
        })
        .collect();
    let joints: Vec<Vector3<f64>> = (0..j)
        .map(|a| (0..n).map(|i| shaped[i] * d.joint_regressor[a * n + i]).sum())
        .collect();
    let non_root: Vec<usize> = (0..j).filter(|&a| a != d.root_joint).collect();
    let mut local = vec![Matrix3::identity(); j];
    for (r, &a) in non_root.iter().enumerate() {
        local[a] = rodrigues(&pose[r]);
    }
    let mut posed_rest = shaped.clone();
    if let Some(pd) = &d.pose_dirs {
        let feats = 9 * non_root.len();
        for (i, x) in posed_rest.iter_mut().enumerate() {
            for c in 0..3 {
                for (r, &a) in non_root.iter().enumerate() {
                    let m = local[a] - Matrix3::identity();
                    for e in 0..9 {
                        x[c] += pd[(i * 3 + c) * feats + r * 9 + e] * m[(e / 3, e % 3)];
                    }
                }
            }
        }
    }
    let homog = |r: &Matrix3<f64>, t: &Vector3<f64>| {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
        m
    };
    let mut chain = vec![Matrix4::identity(); j];
    let mut done = vec![false; j];
    while done.iter().any(|x| !x) {
        for a in 0..j {
            if done[a] {
                continue;
            }
            match d.parents[a] {
                None => {
                    chain[a] = homog(&Matrix3::identity(), &joints[a]);
                    done[a] = true;
                }
                Some(p) if done[p] => {
                    chain[a] = chain[p] * homog(&local[a], &(joints[a] - joints[p]));
                    done[a] = true;
                }
                _ => {}
            }
        }
    }
    let skin: Vec<Matrix4<f64>> = (0..j)
        .map(|a| chain[a] * homog(&Matrix3::identity(), &-joints[a]))
        .collect();
    (0..n)
        .map(|i| {
            let x = posed_rest[i];
            let h = Vector4::new(x.x, x.y, x.z, 1.0);
            let y: Vector4<f64> = (0..j).map(|a| skin[a] * h * d.skin_weights[i * j + a]).sum();
            y.xyz()
        })
        .collect()
}

fn max_dist(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn identity_pose_and_zero_shape_return_template() {
    let m = small_model();
    let mesh = m
        .forward(&PoseParams::zeros(m.n_pose()), &ShapeParams::zeros(m.n_shape()))
        .unwrap();
    assert_eq!(max_dist(&mesh.vertices, m.template()), 0.0);
}

#[test]
fn unit_shape_coefficient_adds_its_direction() {
    let m = small_model();
    let mut beta = vec![0.0; m.n_shape()];
    beta[0] = 1.0;
    let mesh = m
        .forward(&PoseParams::zeros(m.n_pose()), &ShapeParams::new(beta).unwrap())
        .unwrap();
    let s = m.n_shape();
    for (i, v) in mesh.vertices.iter().enumerate() {
        let d = &m.data().shape_dirs;
        let expect = m.template()[i] + Vector3::new(d[i * 3 * s], d[(i * 3 + 1) * s], d[(i * 3 + 2) * s]);
        assert!((v - expect).norm() < 1e-12);
    }
}

#[test]
fn matches_homogeneous_chain_oracle() {
    let m = small_model();
    let mut pose = vec![Vector3::zeros(); m.n_pose()];
    // left elbow (joint 18) by a quarter turn about x
    let row = m.pose_joints().iter().position(|&j| j == 18).unwrap();
    pose[row] = Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0);
    let beta = vec![0.0; m.n_shape()];
    let got = m
        .forward(&PoseParams::new(pose.clone()).unwrap(), &ShapeParams::zeros(m.n_shape()))
        .unwrap();
    let want = oracle_forward(m.data(), &pose, &beta);
    assert!(max_dist(&got.vertices, &want) < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for model in [m.clone(), with_random_pose_dirs(&m, 11)] {
        for _ in 0..5 {
            let pose = PoseParams::random(&mut rng, model.n_pose(), 1.5);
            let shape = ShapeParams::random_uniform(&mut rng, model.n_shape(), 2.0);
            let got = model.forward(&pose, &shape).unwrap();
            let want = oracle_forward(model.data(), pose.rows(), shape.coeffs());
            assert!(max_dist(&got.vertices, &want) < 1e-12);
        }
    }
}

/// Worst column of `|J - FD|_inf / max(|FD|_inf, |J|_inf, 1e-3)`.
fn jacobian_error(model: &BodyModel, pose: &PoseParams, shape: &ShapeParams) -> f64 {
    let fj = model.forward_with_jacobian(pose, shape).unwrap();
    let base = model.forward(pose, shape).unwrap();
    assert!(max_dist(&fj.vertices, &base.vertices) < 1e-12);
    let mut params = pose.to_flat();
    params.extend_from_slice(shape.coeffs());
    let k3 = 3 * model.n_pose();
    let eval = |p: &[f64]| {
        model
            .forward(
                &PoseParams::from_flat(&p[..k3]).unwrap(),
                &ShapeParams::new(p[k3..].to_vec()).unwrap(),
            )
            .unwrap()
            .vertices
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for col in 0..params.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus[col] += h;
        minus[col] -= h;
        let (vp, vm) = (eval(&plus), eval(&minus));
        let mut diff: f64 = 0.0;
        let mut fd_norm: f64 = 0.0;
        let mut an_norm: f64 = 0.0;
        for i in 0..vp.len() {
            for c in 0..3 {
                let fd = (vp[i][c] - vm[i][c]) / (2.0 * h);
                let an = fj.jacobian[(3 * i + c, col)];
                diff = diff.max((fd - an).abs());
                fd_norm = fd_norm.max(fd.abs());
                an_norm = an_norm.max(an.abs());
            }
        }
        worst = worst.max(diff / fd_norm.max(an_norm).max(1e-3));
    }
    worst
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let m = small_model();
    let with_dirs = with_random_pose_dirs(&m, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for draw in 0..100 {
        let model = if draw % 4 == 3 { &with_dirs } else { &m };
        let pose = PoseParams::random(&mut rng, model.n_pose(), 2.5);
        let shape = ShapeParams::random_uniform(&mut rng, model.n_shape(), 2.0);
        let err = jacobian_error(model, &pose, &shape);
        assert!(err < 1e-5, "draw {draw}: column error {err}");
    }
}

#[test]
fn jacobian_at_rest_pose_is_finite_and_matches() {
    let m = small_model();
    let err = jacobian_error(&m, &PoseParams::zeros(m.n_pose()), &ShapeParams::zeros(m.n_shape()));
    assert!(err < 1e-5);
}

#[test]
fn translating_rest_mesh_translates_output() {
    let m = small_model();
    let shift = Vector3::new(0.3, -1.2, 2.5);
    let mut data = m.data().clone();
    data.template.iter_mut().for_each(|v| *v += shift);
    let moved = BodyModel::new(data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pose = PoseParams::random(&mut rng, m.n_pose(), 1.0);
    let shape = ShapeParams::random_uniform(&mut rng, m.n_shape(), 1.0);
    let a = m.forward(&pose, &shape).unwrap().vertices;
    let b = moved.forward(&pose, &shape).unwrap().vertices;
    let shifted: Vec<_> = a.iter().map(|v| v + shift).collect();
    assert!(max_dist(&b, &shifted) < 1e-12);
}

#[test]
fn output_is_affine_in_shape_at_fixed_pose() {
    let m = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pose = PoseParams::random(&mut rng, m.n_pose(), 1.0);
    let b1 = ShapeParams::random_uniform(&mut rng, m.n_shape(), 2.0);
    let b2 = ShapeParams::random_uniform(&mut rng, m.n_shape(), 2.0);
    let t = 0.3;
    let mix: Vec<f64> = b1
        .coeffs()
        .iter()
        .zip(b2.coeffs())
        .map(|(x, y)| (1.0 - t) * x + t * y)
        .collect();
    let v1 = m.forward(&pose, &b1).unwrap().vertices;
    let v2 = m.forward(&pose, &b2).unwrap().vertices;
    let vm = m.forward(&pose, &ShapeParams::new(mix).unwrap()).unwrap().vertices;
    let lerp: Vec<_> = v1.iter().zip(&v2).map(|(a, b)| a * (1.0 - t) + b * t).collect();
    assert!(max_dist(&vm, &lerp) < 1e-10);
}

#[test]
fn mirrored_pose_gives_mirrored_mesh() {
    let m = small_model();
    let perm = m.mirror_perm().unwrap();
    let flip = |v: &Vector3<f64>| Vector3::new(-v.x, v.y, v.z);
    let joint_twin = super::synth::MIRROR_JOINT;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pose = PoseParams::random(&mut rng, m.n_pose(), 1.2);
    let shape = ShapeParams::random_uniform(&mut rng, m.n_shape(), 2.0);
    let rows = m.pose_joints();
    let mirrored: Vec<Vector3<f64>> = rows
        .iter()
        .map(|&j| {
            let src = rows.iter().position(|&r| r == joint_twin[j]).unwrap();
            let w = pose.rows()[src];
            Vector3::new(w.x, -w.y, -w.z)
        })
        .collect();
    let a = m.forward(&pose, &shape).unwrap().vertices;
    let b = m
        .forward(&PoseParams::new(mirrored).unwrap(), &shape)
        .unwrap()
        .vertices;
    for i in 0..a.len() {
        assert!((b[i] - flip(&a[perm[i] as usize])).norm() < 1e-9, "vertex {i}");
    }
}

#[test]
fn rest_root_joint_lies_inside_template_bounds() {
    let m = small_model();
    let r = m.rest_joints()[m.root_joint()];
    for c in 0..3 {
        let lo = m.template().iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
        let hi = m.template().iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo < r[c] && r[c] < hi);
    }
}

#[test]
fn subdivision_grows_the_mesh() {
    let a = synth_model(1, 0).unwrap();
    let b = synth_model(1, 1).unwrap();
    let ratio = b.n_vertices() as f64 / a.n_vertices() as f64;
    assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    assert_eq!(a.n_joints(), 24);
    assert_eq!(a.n_parts(), 10);
}

#[test]
fn regression_follows_translation_and_scale() {
    let m = small_model();
    let verts: Vec<_> = m
        .template()
        .iter()
        .map(|v| v * 1.5 + Vector3::new(1.0, 2.0, 3.0))
        .collect();
    let j = m.regress(&verts).unwrap();
    for (a, b) in j.positions.iter().zip(m.rest_joints()) {
        assert!((a - (b * 1.5 + Vector3::new(1.0, 2.0, 3.0))).norm() < 1e-12);
    }
    assert!(m.regress(&verts[1..]).is_err());
}

#[test]
fn wrong_parameter_counts_are_rejected() {
    let m = small_model();
    assert!(m
        .forward(&PoseParams::zeros(m.n_pose() - 1), &ShapeParams::zeros(m.n_shape()))
        .is_err());
    assert!(m
        .forward(&PoseParams::zeros(m.n_pose()), &ShapeParams::zeros(3))
        .is_err());
    assert!(PoseParams::new(vec![Vector3::new(7.0, 0.0, 0.0)]).is_err());
    assert!(PoseParams::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
}

#[test]
fn save_and_load_round_trip_exactly() {
    let m = small_model();
    let dir = tempfile::tempdir().unwrap();
    save_model(&m, dir.path()).unwrap();
    let back = load_model(dir.path()).unwrap();
    assert_eq!(back.data(), m.data());
}

#[test]
fn same_seed_writes_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_model(&synth_model(42, 1).unwrap(), a.path()).unwrap();
    save_model(&synth_model(42, 1).unwrap(), b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 12);
    for name in names {
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert_eq!(x, y, "{name:?}");
    }
    let c = synth_model(43, 1).unwrap();
    assert_ne!(c.template(), synth_model(42, 1).unwrap().template());
}

#[test]
fn truncated_template_is_a_shape_mismatch() {
    let m = small_model();
    let dir = tempfile::tempdir().unwrap();
    save_model(&m, dir.path()).unwrap();
    let path = dir.path().join("template.f32");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..99 * 12]).unwrap();
    let err = load_model(dir.path()).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
}

#[test]
fn broken_mirror_involution_is_rejected() {
    let m = small_model();
    let mut data = m.data().clone();
    let perm = data.mirror_perm.as_mut().unwrap();
    perm[3] = 5;
    perm[5] = 4;
    let err = BodyModel::new(data.clone()).unwrap_err();
    assert!(matches!(err, Error::InvalidModel(_)), "{err}");

    let dir = tempfile::tempdir().unwrap();
    save_model(&m, dir.path()).unwrap();
    crate::binio::write_bytes(
        &dir.path().join("mirror_perm.u32"),
        &crate::binio::u32_bytes(data.mirror_perm.unwrap()),
    )
    .unwrap();
    assert!(matches!(load_model(dir.path()), Err(Error::InvalidModel(_))));
}

#[test]
fn bad_weight_rows_are_rejected() {
    let m = small_model();
    let mut data = m.data().clone();
    let j = data.parents.len();
    data.skin_weights[0] = 0.5;
    data.skin_weights[1] = 0.6;
    for x in &mut data.skin_weights[2..j] {
        *x = 0.0;
    }
    assert!(matches!(BodyModel::new(data), Err(Error::InvalidModel(_))));

    let mut data = m.data().clone();
    data.parents[5] = Some(5);
    assert!(matches!(BodyModel::new(data), Err(Error::InvalidModel(_))));
}

