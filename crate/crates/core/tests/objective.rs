mod common;

use common::*;
use densebody::body_model::Joints;
use densebody::objective::{joint_loss, loss_grad, total_loss, tv, weighted_l1, JointTerm, LossConfig};
use densebody::uv::{render_position_map, resample_vertices, PositionMap, WeightMask};
use densebody::Error;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;

const RES: usize = 12;

fn map_from(seed: u64, valid: &[bool]) -> PositionMap {
    let mut r = rng(seed);
    let pos = (0..RES * RES).map(|_| Vector3::from_fn(|_, _| r.random_range(-1.0..1.0))).collect();
    PositionMap::new(RES, pos, valid.to_vec()).unwrap()
}

fn validity(seed: u64) -> Vec<bool> {
    let mut r = rng(seed);
    (0..RES * RES).map(|_| r.random_bool(0.8)).collect()
}

fn mask(seed: u64, valid: &[bool]) -> WeightMask {
    let mut r = rng(seed);
    WeightMask {
        resolution: RES,
        n_parts: 2,
        weights: valid.iter().map(|&v| if v { r.random_range(0.1..2.0) } else { 0.0 }).collect(),
        part_id: valid
            .iter()
            .enumerate()
            .map(|(t, &v)| if !v { 2 } else if t % RES < RES / 2 { 0 } else { 1 })
            .collect(),
    }
}

fn shifted(map: &PositionMap, f: impl Fn(usize, Vector3<f64>) -> Vector3<f64>) -> PositionMap {
    let pos = map.positions().iter().enumerate().map(|(t, p)| f(t, *p)).collect();
    PositionMap::new(map.resolution(), pos, map.valid().to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l1_is_nonnegative_and_zero_only_on_equal_maps(seed in any::<u64>()) {
        let valid = validity(seed);
        let (p, gt, m) = (map_from(seed ^ 1, &valid), map_from(seed ^ 2, &valid), mask(seed, &valid));
        prop_assert!(weighted_l1(&p, &gt, &m).unwrap() > 0.0);
        prop_assert_eq!(weighted_l1(&gt, &gt, &m).unwrap(), 0.0);
    }

    #[test]
    fn tv_is_nonnegative_and_shift_invariant(seed in any::<u64>(), c in prop::array::uniform3(-5.0f64..5.0)) {
        let valid = validity(seed);
        let (p, m) = (map_from(seed, &valid), mask(seed, &valid));
        let alpha = [0.7, 1.3];
        let base = tv(&p, &m, &alpha).unwrap();
        let moved = tv(&shifted(&p, |_, x| x + Vector3::from(c)), &m, &alpha).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn loss_without_tv_is_positively_homogeneous(seed in any::<u64>(), k in 0.0f64..10.0) {
        let valid = validity(seed);
        let (p, gt, m) = (map_from(seed ^ 1, &valid), map_from(seed ^ 2, &valid), mask(seed, &valid));
        let cfg = LossConfig { lambda: 0.0, ..LossConfig::default() };
        let scaled = shifted(&p, |t, x| gt.positions()[t] + (x - gt.positions()[t]) * k);
        let a = total_loss(&p, &gt, &cfg, &m, None).unwrap();
        let b = total_loss(&scaled, &gt, &cfg, &m, None).unwrap();
        prop_assert!((b.total - k * a.total).abs() <= 1e-12 * (k * a.total).max(1.0));
        prop_assert_eq!(a.total, a.l1);
    }

    #[test]
    fn breakdown_adds_up(seed in any::<u64>(), lambda in 0.0f64..3.0) {
        let valid = validity(seed);
        let (p, gt, m) = (map_from(seed ^ 1, &valid), map_from(seed ^ 2, &valid), mask(seed, &valid));
        let cfg = LossConfig { lambda, alpha: Some(vec![1.0, 0.25]), joint: None };
        let b = total_loss(&p, &gt, &cfg, &m, None).unwrap();
        prop_assert!((b.total - (b.l1 + lambda * b.tv)).abs() <= 1e-12 * b.total.max(1.0));
        let same = total_loss(&gt, &gt, &cfg, &m, None).unwrap();
        prop_assert_eq!(same.l1, 0.0);
        prop_assert!((same.total - lambda * tv(&gt, &m, &[1.0, 0.25]).unwrap()).abs() <= 1e-12 * same.total.max(1.0));
    }

    #[test]
    fn scaling_alpha_scales_tv(seed in any::<u64>(), c in 0.0f64..4.0) {
        let valid = validity(seed);
        let (p, m) = (map_from(seed, &valid), mask(seed, &valid));
        let a = tv(&p, &m, &[0.5, 2.0]).unwrap();
        let b = tv(&p, &m, &[0.5 * c, 2.0 * c]).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-12 * (c * a).max(1.0));
    }
}

#[test]
fn single_texel_gradient_is_its_mask_weight() {
    let valid = vec![true; RES * RES];
    let gt = map_from(3, &valid);
    let m = mask(4, &valid);
    let t = 37;
    let p = shifted(&gt, |s, x| if s == t { x + Vector3::repeat(1e-3) } else { x });
    let cfg = LossConfig { lambda: 0.0, ..LossConfig::default() };
    let g = loss_grad(&p, &gt, &cfg, &m, None).unwrap();
    for (s, v) in g.iter().enumerate() {
        let want = if s == t { Vector3::repeat(m.weights[t]) } else { Vector3::zeros() };
        assert_eq!(*v, want);
    }
    assert!(loss_grad(&gt, &gt, &cfg, &m, None).unwrap().iter().all(|v| *v == Vector3::zeros()));
}

#[test]
fn hand_computed_examples() {
    let mut valid = vec![false; RES * RES];
    valid[0] = true;
    valid[1] = true;
    let gt = PositionMap::new(RES, vec![Vector3::zeros(); RES * RES], valid.clone()).unwrap();
    let p = shifted(&gt, |t, x| if t == 0 { Vector3::new(1.0, 1.0, 1.0) } else { x });
    let m = WeightMask {
        resolution: RES,
        n_parts: 1,
        weights: valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        part_id: valid.iter().map(|&v| if v { 0 } else { 1 }).collect(),
    };
    assert_eq!(weighted_l1(&p, &gt, &m).unwrap(), 3.0);
    let step = shifted(&gt, |t, x| if t == 1 { Vector3::new(1.0, 0.0, 0.0) } else { x });
    assert_eq!(tv(&step, &m, &[1.0]).unwrap(), 1.0);
}

#[test]
fn mismatched_validity_is_rejected() {
    let valid = validity(1);
    let mut other = valid.clone();
    other[0] = !other[0];
    let m = mask(1, &valid);
    let err = weighted_l1(&map_from(1, &valid), &map_from(2, &other), &m).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn joint_loss_tracks_translated_targets() {
    let m = model();
    let (pose, shape) = random_params(&mut rng(5), m);
    let verts = m.forward(&pose, &shape).unwrap().vertices;
    let map = render_position_map(m.uv_layout(), &verts, 256).unwrap();
    let gt = m.regress(&resample_vertices(m.uv_layout(), m.n_vertices(), &map).unwrap().vertices).unwrap();
    let all: Vec<usize> = (0..m.n_joints()).collect();
    assert!(joint_loss(&map, m, &gt, &all).unwrap() < 1e-12);
    let d = Vector3::new(0.003, -0.004, 0.0);
    let moved = Joints::new(gt.positions.iter().map(|p| p + d).collect());
    assert!((joint_loss(&map, m, &moved, &all).unwrap() - d.norm()).abs() < 1e-12);

    let truth = m.regress(&verts).unwrap();
    let base = joint_loss(&map, m, &truth, &all).unwrap();
    assert!(base < 2e-3, "{base}");
    let moved = Joints::new(truth.positions.iter().map(|p| p + d).collect());
    assert!(joint_loss(&map, m, &moved, &all).unwrap() <= base + d.norm() + 1e-12);
    assert!(matches!(joint_loss(&map, m, &truth, &[]), Err(Error::InvalidArgument(_))));
}

#[test]
fn joint_term_enters_the_total() {
    let m = small_model();
    let (pose, shape) = random_params(&mut rng(6), m);
    let verts = m.forward(&pose, &shape).unwrap().vertices;
    let gt = render_position_map(m.uv_layout(), &verts, 32).unwrap();
    let p = shifted(&gt, |_, x| x + Vector3::new(0.01, 0.0, 0.0));
    let wm = densebody::objective::model_weight_mask(m, 32, &densebody::uv::WeightMaskConfig::for_resolution(32)).unwrap();
    let cfg = LossConfig {
        lambda: 0.5,
        alpha: None,
        joint: Some(JointTerm { weight: 2.0, subset: vec![0, 3, 5] }),
    };
    let b = total_loss(&p, &gt, &cfg, &wm, Some(m)).unwrap();
    let j = b.joint.unwrap();
    assert!((j - 0.01).abs() < 1e-12);
    assert!((b.total - (b.l1 + 0.5 * b.tv + 2.0 * j)).abs() < 1e-12 * b.total);
    assert!(total_loss(&p, &gt, &cfg, &wm, None).is_err());
}
