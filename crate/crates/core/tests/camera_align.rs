mod common;

use common::*;
use densebody::body_model::{BodyModel, Mesh};
use densebody::camera_align::{
    align_orthographic, augment, make_ground_truth, transform_vertices, AugmentParams, CameraExtrinsics,
    ColorJitter, CropSpec, Sample, SampleMeta,
};
use densebody::uv::{render_position_map, resample_vertices, PositionMap};
use densebody::Error;
use image::RgbImage;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::Rng;

fn posed_mesh(seed: u64, m: &BodyModel) -> Mesh {
    let (pose, shape) = random_params(&mut rng(seed), m);
    m.forward(&pose, &shape).unwrap()
}

fn camera(seed: u64) -> CameraExtrinsics {
    let mut r = rng(seed);
    let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), r.random_range(-3.0..3.0)).into_inner();
    CameraExtrinsics::new(yaw, Vector3::new(r.random_range(-0.2..0.2), 0.1, 3.0)).unwrap()
}

fn sample_at(seed: u64, m: &BodyModel, size: usize) -> Sample {
    let mesh = posed_mesh(seed, m);
    let ext = camera(seed);
    let cam: Vec<_> = mesh.vertices.iter().map(|v| ext.to_camera(v)).collect();
    let crop = CropSpec::from_bbox(&cam, size, 0.15).unwrap();
    let (map, frame) = make_ground_truth(&mesh, &ext, &crop, m).unwrap();
    let mut r = rng(seed);
    let image = RgbImage::from_fn(size as u32, size as u32, |_, _| image::Rgb([r.random(), r.random(), r.random()]));
    let meta = SampleMeta {
        id: "s".into(),
        frame: Some(frame),
        augmentations: vec![],
    };
    Sample::new(image, map, meta).unwrap()
}

fn sample(seed: u64, m: &BodyModel) -> Sample {
    sample_at(seed, m, 128)
}

/// Mean position gap over texels valid in both maps, in metres.
fn mean_gap_m(a: &PositionMap, b: &PositionMap, px_per_m: f64) -> f64 {
    let pairs: Vec<_> = (0..a.texels()).filter(|&t| a.valid()[t] && b.valid()[t]).collect();
    pairs.iter().map(|&t| (a.positions()[t] - b.positions()[t]).norm()).sum::<f64>() / pairs.len() as f64 / px_per_m
}

#[test]
fn root_is_at_zero_depth_after_alignment() {
    let m = model();
    let mesh = posed_mesh(1, m);
    let ext = CameraExtrinsics::identity();
    let cam: Vec<_> = mesh.vertices.clone();
    let crop = CropSpec::centered(&cam, 100.0, 256).unwrap();
    let (aligned, frame) = align_orthographic(&mesh, &ext, &crop, m.root_joint(), m).unwrap();
    let root = m.regress(&aligned.vertices).unwrap().positions[m.root_joint()];
    assert!(root.z.abs() < 1e-9, "root z {}", root.z);
    let back = frame.inverse(&aligned.vertices);
    assert!(mean_distance(&back, &mesh.vertices) < 1e-12);
}

#[test]
fn root_joint_out_of_range_is_rejected() {
    let m = small_model();
    let mesh = m.template_mesh();
    let crop = CropSpec::centered(&mesh.vertices, 100.0, 64).unwrap();
    let err = align_orthographic(&mesh, &CameraExtrinsics::identity(), &crop, m.n_joints(), m).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn camera_parallel_translation_with_recentred_crop_is_invisible() {
    let m = model();
    let mesh = posed_mesh(2, m);
    let ext = camera(2);
    let shift = ext.rotation.transpose() * Vector3::new(0.3, -0.2, 0.0);
    let moved = Mesh {
        vertices: mesh.vertices.iter().map(|v| v + shift).collect(),
    };
    let crop_for = |mesh: &Mesh| {
        let cam: Vec<_> = mesh.vertices.iter().map(|v| ext.to_camera(v)).collect();
        CropSpec::centered(&cam, 120.0, 256).unwrap()
    };
    let (a, _) = align_orthographic(&mesh, &ext, &crop_for(&mesh), m.root_joint(), m).unwrap();
    let (b, _) = align_orthographic(&moved, &ext, &crop_for(&moved), m.root_joint(), m).unwrap();
    for (p, q) in a.vertices.iter().zip(&b.vertices) {
        assert!((p - q).amax() < 1e-9);
    }
}

#[test]
fn projected_extent_matches_crop_scale() {
    let m = model();
    let mesh = posed_mesh(3, m);
    let ext = camera(3);
    let cam: Vec<_> = mesh.vertices.iter().map(|v| ext.to_camera(v)).collect();
    let crop = CropSpec::centered(&cam, 128.0, 256).unwrap();
    let (aligned, _) = align_orthographic(&mesh, &ext, &crop, m.root_joint(), m).unwrap();
    for axis in 0..2 {
        let (lo, hi) = cam.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v[axis]), b.max(v[axis])));
        let (plo, phi) = aligned.vertices.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v[axis]), b.max(v[axis])));
        let half = 128.0 * (hi - lo) / 2.0;
        assert!((plo - (128.0 - half)).abs() < 1.0);
        assert!((phi - (128.0 + half)).abs() < 1.0);
    }
}

#[test]
fn crops_differing_in_center_shift_the_map_uniformly() {
    let m = small_model();
    let mesh = posed_mesh(4, m);
    let ext = CameraExtrinsics::identity();
    let a = CropSpec::new([10.0, -5.0], 90.0, 64).unwrap();
    let b = CropSpec::new([13.5, -9.0], 90.0, 64).unwrap();
    let (ma, _) = make_ground_truth(&mesh, &ext, &a, m).unwrap();
    let (mb, _) = make_ground_truth(&mesh, &ext, &b, m).unwrap();
    let want = Vector3::new(-3.5, 4.0, 0.0);
    for t in 0..ma.texels() {
        if ma.valid()[t] {
            assert!((mb.positions()[t] - ma.positions()[t] - want).amax() < 1e-9);
        }
    }
}

#[test]
fn constant_mesh_gives_constant_map() {
    let m = small_model();
    let mesh = Mesh {
        vertices: vec![Vector3::new(0.1, 0.2, 0.3); m.n_vertices()],
    };
    let crop = CropSpec::new([0.0, 0.0], 50.0, 32).unwrap();
    let (map, _) = make_ground_truth(&mesh, &CameraExtrinsics::identity(), &crop, m).unwrap();
    let first = map.positions()[map.valid().iter().position(|v| *v).unwrap()];
    for t in 0..map.texels() {
        if map.valid()[t] {
            assert!((map.positions()[t] - first).amax() < 1e-12);
        }
    }
}

#[test]
fn ground_truth_round_trip_recovers_world_vertices() {
    let m = model();
    let mesh = posed_mesh(5, m);
    let ext = camera(5);
    let cam: Vec<_> = mesh.vertices.iter().map(|v| ext.to_camera(v)).collect();
    let crop = CropSpec::from_bbox(&cam, 256, 0.15).unwrap();
    let (map, frame) = make_ground_truth(&mesh, &ext, &crop, m).unwrap();
    let back = frame.inverse(&resample_vertices(m.uv_layout(), m.n_vertices(), &map).unwrap().vertices);
    let err = mean_distance(&back, &mesh.vertices);
    assert!(err < 2e-3, "mean error {err}");
}

#[test]
fn identity_augmentation_keeps_map_bytes() {
    let m = small_model();
    let s = sample(6, m);
    let out = augment(&s, &AugmentParams::identity(), m).unwrap();
    assert_eq!(out.gt_map.to_bytes(), s.gt_map.to_bytes());
    assert_eq!(out.image, s.image);
    assert_eq!(out.meta.augmentations.len(), 1);
}

#[test]
fn flip_needs_mirror_perm() {
    let m = small_model();
    let mut data = m.data().clone();
    data.mirror_perm = None;
    let plain = BodyModel::new(data).unwrap();
    let s = sample(7, m);
    let flip = AugmentParams {
        flip: true,
        ..AugmentParams::identity()
    };
    assert!(matches!(augment(&s, &flip, &plain), Err(Error::InvalidModel(_))));
}

#[test]
fn rotation_by_90_matches_transform_then_render() {
    let m = model();
    let mesh = posed_mesh(8, m);
    let ext = camera(8);
    let cam: Vec<_> = mesh.vertices.iter().map(|v| ext.to_camera(v)).collect();
    let crop = CropSpec::from_bbox(&cam, 256, 0.15).unwrap();
    let (map, frame) = make_ground_truth(&mesh, &ext, &crop, m).unwrap();
    let s = Sample::new(
        RgbImage::new(256, 256),
        map,
        SampleMeta {
            id: "r".into(),
            frame: Some(frame),
            augmentations: vec![],
        },
    )
    .unwrap();
    let p = AugmentParams {
        rotate_deg: 90.0,
        ..AugmentParams::identity()
    };
    let aug = augment(&s, &p, m).unwrap();
    let aligned: Vec<_> = mesh.vertices.iter().map(|v| frame.align_point(v)).collect();
    let c = 128.0;
    for (v, w) in aligned.iter().zip(transform_vertices(&aligned, &p, 256, None).unwrap()) {
        // +x turns toward +y
        let want = Vector3::new(c - (v.y - c), c + (v.x - c), v.z);
        assert!((w - want).amax() < 1e-9);
    }
    let direct = render_position_map(m.uv_layout(), &transform_vertices(&aligned, &p, 256, None).unwrap(), 256).unwrap();
    let gap = mean_gap_m(&aug.gt_map, &direct, crop.scale);
    assert!(gap < 2e-3, "mean gap {gap}");
}

#[test]
fn in_plane_rotation_keeps_depth() {
    let m = model();
    let s = sample_at(9, m, 256);
    let scale = s.meta.frame.unwrap().crop.scale;
    let before = resample_vertices(m.uv_layout(), m.n_vertices(), &s.gt_map).unwrap().vertices;
    let p = AugmentParams {
        rotate_deg: 37.0,
        ..AugmentParams::identity()
    };
    let out = augment(&s, &p, m).unwrap();
    let after = resample_vertices(m.uv_layout(), m.n_vertices(), &out.gt_map).unwrap().vertices;
    let dz: f64 = before.iter().zip(&after).map(|(a, b)| (a.z - b.z).abs()).sum::<f64>() / before.len() as f64;
    assert!(dz / scale < 2e-3, "mean depth change {} m", dz / scale);
}

#[test]
fn root_depth_of_ground_truth_is_zero() {
    let m = model();
    let s = sample_at(10, m, 256);
    let scale = s.meta.frame.unwrap().crop.scale;
    let verts = resample_vertices(m.uv_layout(), m.n_vertices(), &s.gt_map).unwrap().vertices;
    let root = m.regress(&verts).unwrap().positions[m.root_joint()];
    assert!(root.z.abs() / scale < 2e-3, "root depth {} m", root.z / scale);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn color_jitter_never_touches_the_map(
        g in prop::array::uniform3(0.5f64..1.5),
        o in prop::array::uniform3(-40.0f64..40.0),
        seed in 0u64..4,
    ) {
        let m = small_model();
        let s = sample(seed, m);
        let p = AugmentParams { jitter: ColorJitter { gain: g, offset: o }, ..AugmentParams::identity() };
        let out = augment(&s, &p, m).unwrap();
        prop_assert_eq!(out.gt_map.to_bytes(), s.gt_map.to_bytes());
    }

    #[test]
    fn augmenting_with_the_inverse_restores_the_map(
        tx in -16.0f64..16.0,
        ty in -16.0f64..16.0,
        rot in -30.0f64..30.0,
        flip in any::<bool>(),
        seed in 0u64..4,
    ) {
        let m = model();
        let s = sample_at(seed, m, 256);
        let scale = s.meta.frame.unwrap().crop.scale;
        let p = AugmentParams { translate_px: [tx, ty], rotate_deg: rot, flip, jitter: ColorJitter::identity() };
        let back = augment(&augment(&s, &p, m).unwrap(), &p.inverse(), m).unwrap();
        let q = Vector3::new(37.0, 81.0, 0.0).xy();
        prop_assert!((p.inverse().transform_point(&p.transform_point(&q, 256), 256) - q).amax() < 1e-9);
        prop_assert!(mean_gap_m(&back.gt_map, &s.gt_map, scale) < 2.0 * 2e-3);
    }
}
