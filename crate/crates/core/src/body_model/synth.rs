//! Deterministic synthetic humanoid used in place of licensed body assets.
//!
//! The body is ten closed capsules (torso, head, upper arms, forearms, thighs,
//! shins) in a T-pose, y up, +x on the body's left, +z forward, about 1.7 m
//! tall. Each capsule is unwrapped into one rectangular UV chart with a seam
//! column and two pole fans. Regressor and skinning weights are dyadic, and
//! every float is rounded to `f32`, so a saved model reloads bit-identically.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BodyModel, BodyModelData};
use crate::binio::to_storage;
use crate::error::{Error, Result};
use crate::uv::UvLayout;

pub const SYNTH_JOINT_NAMES: [&str; 24] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const PARENTS: [Option<usize>; 24] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Left/right joint swap.
pub(crate) const MIRROR_JOINT: [usize; 24] = [
    0, 2, 1, 3, 5, 4, 6, 8, 7, 9, 11, 10, 12, 14, 13, 15, 17, 16, 19, 18, 21, 20, 23, 22,
];

const N_SHAPE: usize = 10;
const SKIN_QUANTUM: f64 = 256.0;
const CHART_PAD: f64 = 0.008;

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Center,
    Left,
    Right,
}

/// One capsule. Lengths in meters; `e1`/`e2` span the cross-section and the
/// ring angle starts at `-e2` (the seam).
#[derive(Clone)]
struct PartSpec {
    start: Vector3<f64>,
    end: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    /// Cross-section radii along (e1, e2) at start and end.
    r_start: (f64, f64),
    r_end: (f64, f64),
    base_ring: usize,
    base_rows: usize,
    side: Side,
    /// Skinning stations: (point on the axis, joint), ordered from start to end.
    stations: Vec<(Vector3<f64>, usize)>,
}

struct BuiltPart {
    /// Vertex index of ring `k` (0-based over rows), column `q`.
    ring_base: usize,
    ring: usize,
    rows: usize,
    row_centers: Vec<Vector3<f64>>,
}

fn v3(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z)
}

fn mirror(p: &Vector3<f64>) -> Vector3<f64> {
    v3(-p.x, p.y, p.z)
}

fn left_parts(height: f64, radius: &[f64; 6]) -> Vec<PartSpec> {
    let h = |x: f64, y: f64, z: f64| v3(x, y, z) * height;
    let ex = Vector3::x();
    let ey = Vector3::y();
    let ez = Vector3::z();
    let torso = PartSpec {
        start: h(0.0, 0.84, 0.0),
        end: h(0.0, 1.47, 0.0),
        e1: ex,
        e2: ez,
        r_start: (0.15 * radius[0], 0.105 * radius[0]),
        r_end: (0.165 * radius[0], 0.11 * radius[0]),
        base_ring: 8,
        base_rows: 8,
        side: Side::Center,
        stations: vec![
            (h(0.0, 0.93, 0.0), 0),
            (h(0.0, 1.03, 0.0), 3),
            (h(0.0, 1.16, 0.0), 6),
            (h(0.0, 1.29, 0.0), 9),
            (h(0.0, 1.40, 0.0), 9),
            (h(0.0, 1.47, 0.0), 12),
        ],
    };
    let head = PartSpec {
        start: h(0.0, 1.42, 0.0),
        end: h(0.0, 1.70, 0.0),
        e1: ex,
        e2: ez,
        r_start: (0.06 * radius[1], 0.065 * radius[1]),
        r_end: (0.085 * radius[1], 0.10 * radius[1]),
        base_ring: 8,
        base_rows: 4,
        side: Side::Center,
        stations: vec![(h(0.0, 1.47, 0.0), 12), (h(0.0, 1.53, 0.0), 15)],
    };
    let upper_arm = PartSpec {
        start: h(0.10, 1.38, 0.0),
        end: h(0.47, 1.38, 0.0),
        e1: ey,
        e2: ez,
        r_start: (0.055 * radius[2], 0.055 * radius[2]),
        r_end: (0.045 * radius[2], 0.045 * radius[2]),
        base_ring: 4,
        base_rows: 4,
        side: Side::Left,
        stations: vec![
            (h(0.16, 1.38, 0.0), 13),
            (h(0.22, 1.38, 0.0), 16),
            (h(0.40, 1.38, 0.0), 16),
            (h(0.46, 1.38, 0.0), 18),
        ],
    };
    let forearm = PartSpec {
        start: h(0.42, 1.38, 0.0),
        end: h(0.82, 1.38, 0.0),
        e1: ey,
        e2: ez,
        r_start: (0.042 * radius[3], 0.042 * radius[3]),
        r_end: (0.03 * radius[3], 0.03 * radius[3]),
        base_ring: 4,
        base_rows: 4,
        side: Side::Left,
        stations: vec![
            (h(0.66, 1.38, 0.0), 18),
            (h(0.71, 1.38, 0.0), 20),
            (h(0.75, 1.38, 0.0), 20),
            (h(0.79, 1.38, 0.0), 22),
        ],
    };
    let thigh = PartSpec {
        start: h(0.09, 0.97, 0.0),
        end: h(0.09, 0.46, 0.0),
        e1: ex,
        e2: ez,
        r_start: (0.085 * radius[4], 0.085 * radius[4]),
        r_end: (0.06 * radius[4], 0.06 * radius[4]),
        base_ring: 4,
        base_rows: 6,
        side: Side::Left,
        stations: vec![
            (h(0.09, 0.96, 0.0), 0),
            (h(0.09, 0.90, 0.0), 1),
            (h(0.09, 0.55, 0.0), 1),
            (h(0.09, 0.48, 0.0), 4),
        ],
    };
    let shin = PartSpec {
        start: h(0.09, 0.52, 0.0),
        end: h(0.09, 0.0, 0.0),
        e1: ex,
        e2: ez,
        r_start: (0.055 * radius[5], 0.055 * radius[5]),
        r_end: (0.04 * radius[5], 0.04 * radius[5]),
        base_ring: 4,
        base_rows: 6,
        side: Side::Left,
        stations: vec![
            (h(0.09, 0.13, 0.0), 4),
            (h(0.09, 0.07, 0.0), 7),
            (h(0.09, 0.045, 0.0), 7),
            (h(0.09, 0.01, 0.0), 10),
        ],
    };
    vec![torso, head, upper_arm, forearm, thigh, shin]
}

fn mirrored(spec: &PartSpec) -> PartSpec {
    PartSpec {
        start: mirror(&spec.start),
        end: mirror(&spec.end),
        e1: mirror(&spec.e1),
        e2: mirror(&spec.e2),
        side: Side::Right,
        stations: spec
            .stations
            .iter()
            .map(|(p, j)| (mirror(p), MIRROR_JOINT[*j]))
            .collect(),
        ..spec.clone()
    }
}

/// Axial positions (meters from `start`) of the ring rows, evenly spaced in
/// arc length along the capsule profile, plus the radial scale of each row.
fn profile_rows(spec: &PartSpec, rows: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let len = (spec.end - spec.start).norm();
    let mean_r = |r: (f64, f64)| 0.5 * (r.0 + r.1);
    let cap_s = mean_r(spec.r_start).min(0.5 * len);
    let cap_e = mean_r(spec.r_end).min(0.5 * len);
    let sigma = |l: f64| -> f64 {
        if l < cap_s {
            let t = (cap_s - l) / cap_s;
            (1.0 - t * t).max(0.0).sqrt()
        } else if l > len - cap_e {
            let t = (l - (len - cap_e)) / cap_e;
            (1.0 - t * t).max(0.0).sqrt()
        } else {
            1.0
        }
    };
    let radius_at = |l: f64| {
        let t = l / len;
        mean_r(spec.r_start) * (1.0 - t) + mean_r(spec.r_end) * t
    };
    const SAMPLES: usize = 4096;
    let mut arc = Vec::with_capacity(SAMPLES + 1);
    arc.push(0.0);
    let mut prev = (0.0, 0.0);
    for s in 1..=SAMPLES {
        let l = len * s as f64 / SAMPLES as f64;
        let cur = (l, sigma(l) * radius_at(l));
        let d = ((cur.0 - prev.0).powi(2) + (cur.1 - prev.1).powi(2)).sqrt();
        arc.push(arc[s - 1] + d);
        prev = cur;
    }
    let total = arc[SAMPLES];
    let mut axial = Vec::with_capacity(rows);
    let mut scale = Vec::with_capacity(rows);
    let mut seg = 0;
    for k in 1..=rows {
        let target = total * k as f64 / (rows + 1) as f64;
        while arc[seg + 1] < target {
            seg += 1;
        }
        let f = (target - arc[seg]) / (arc[seg + 1] - arc[seg]);
        let l = len * (seg as f64 + f) / SAMPLES as f64;
        axial.push(l);
        scale.push(sigma(l));
    }
    (axial, scale, total)
}

fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let h = ((a - b) / (a + b)).powi(2);
    std::f64::consts::PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
}

/// Shelf-packs rectangles into the unit square at the largest common scale.
/// Returns the scale and the lower-left corner of every rectangle.
fn pack_charts(sizes: &[(f64, f64)]) -> (f64, Vec<(f64, f64)>) {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].1.total_cmp(&sizes[a].1).then(a.cmp(&b)));
    let place = |scale: f64| -> Option<Vec<(f64, f64)>> {
        let mut pos = vec![(0.0, 0.0); sizes.len()];
        let (mut x, mut y, mut shelf_h) = (CHART_PAD, CHART_PAD, 0.0_f64);
        for &i in &order {
            let (w, h) = (sizes[i].0 * scale, sizes[i].1 * scale);
            if x + w + CHART_PAD > 1.0 {
                x = CHART_PAD;
                y += shelf_h + CHART_PAD;
                shelf_h = 0.0;
            }
            if x + w + CHART_PAD > 1.0 || y + h + CHART_PAD > 1.0 {
                return None;
            }
            pos[i] = (x, y);
            x += w + CHART_PAD;
            shelf_h = shelf_h.max(h);
        }
        Some(pos)
    };
    let (mut lo, mut hi) = (0.0, 4.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if place(mid).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, place(lo).expect("lower bound always packs"))
}

/// Builds the synthetic model for `(seed, n_subdiv)`. Vertex count grows by
/// roughly 4x per subdivision level.
pub fn synth_model(seed: u64, n_subdiv: u32) -> Result<BodyModel> {
    if n_subdiv > 5 {
        return Err(Error::InvalidArgument(format!(
            "n_subdiv {n_subdiv} is too large (max 5)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height = 1.0 + rng.random_range(-0.02..=0.02);
    let radius: [f64; 6] = std::array::from_fn(|_| 1.0 + rng.random_range(-0.05..=0.05));
    let left = left_parts(height, &radius);
    // torso, head, upper arms, forearms, thighs, shins; part label = index
    let specs: Vec<PartSpec> = vec![
        left[0].clone(),
        left[1].clone(),
        left[2].clone(),
        mirrored(&left[2]),
        left[3].clone(),
        mirrored(&left[3]),
        left[4].clone(),
        mirrored(&left[4]),
        left[5].clone(),
        mirrored(&left[5]),
    ];
    let mult = 1usize << n_subdiv;

    let profiles: Vec<_> = specs
        .iter()
        .map(|s| profile_rows(s, s.base_rows * mult))
        .collect();
    let chart_sizes: Vec<(f64, f64)> = specs
        .iter()
        .zip(&profiles)
        .map(|(s, (_, _, arc))| {
            let a = 0.5 * (s.r_start.0 + s.r_end.0);
            let b = 0.5 * (s.r_start.1 + s.r_end.1);
            (ellipse_perimeter(a, b), *arc)
        })
        .collect();
    let (uv_scale, origins) = pack_charts(&chart_sizes);

    let mut template: Vec<Vector3<f64>> = Vec::new();
    let mut radial: Vec<Vector3<f64>> = Vec::new();
    let mut vertex_part: Vec<usize> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut uv_faces: Vec<[u32; 3]> = Vec::new();
    let mut uv_coords: Vec<[f64; 2]> = Vec::new();
    let mut uv_to_vertex: Vec<u32> = Vec::new();
    let mut part_labels: Vec<u32> = Vec::new();
    let mut built: Vec<BuiltPart> = Vec::new();

    for (p, spec) in specs.iter().enumerate() {
        let (axial, scale, _) = &profiles[p];
        let ring = spec.base_ring * mult;
        let rows = axial.len();
        let len = (spec.end - spec.start).norm();
        let axis = (spec.end - spec.start) / len;
        let base = template.len();
        let mut row_centers = Vec::with_capacity(rows);
        for (&l, &sig) in axial.iter().zip(scale) {
            let t = l / len;
            let r1 = sig * (spec.r_start.0 * (1.0 - t) + spec.r_end.0 * t);
            let r2 = sig * (spec.r_start.1 * (1.0 - t) + spec.r_end.1 * t);
            let center = spec.start + axis * l;
            row_centers.push(center);
            for q in 0..ring {
                let phi = -std::f64::consts::FRAC_PI_2
                    + std::f64::consts::TAU * q as f64 / ring as f64;
                let (s, c) = phi.sin_cos();
                template.push(center + spec.e1 * (r1 * c) + spec.e2 * (r2 * s));
                radial.push(spec.e1 * c + spec.e2 * s);
                vertex_part.push(p);
            }
        }
        let pole_start = template.len();
        template.push(spec.start);
        radial.push(-axis);
        vertex_part.push(p);
        let pole_end = template.len();
        template.push(spec.end);
        radial.push(axis);
        vertex_part.push(p);

        let (u0, v0) = origins[p];
        let width = chart_sizes[p].0 * uv_scale;
        let height_uv = chart_sizes[p].1 * uv_scale;
        let u_of = |q: f64| u0 + width * q / ring as f64;
        let v_of = |k: f64| v0 + height_uv * k / (rows + 1) as f64;
        let grid_base = uv_coords.len();
        for k in 0..rows {
            for q in 0..=ring {
                uv_coords.push([u_of(q as f64), v_of((k + 1) as f64)]);
                uv_to_vertex.push((base + k * ring + q % ring) as u32);
            }
        }
        let grid = |k: usize, q: usize| (grid_base + k * (ring + 1) + q) as u32;
        let vert = |k: usize, q: usize| (base + k * ring + q % ring) as u32;

        let first_face = faces.len();
        for k in 0..rows - 1 {
            for q in 0..ring {
                faces.push([vert(k, q), vert(k, q + 1), vert(k + 1, q + 1)]);
                uv_faces.push([grid(k, q), grid(k, q + 1), grid(k + 1, q + 1)]);
                faces.push([vert(k, q), vert(k + 1, q + 1), vert(k + 1, q)]);
                uv_faces.push([grid(k, q), grid(k + 1, q + 1), grid(k + 1, q)]);
            }
        }
        for q in 0..ring {
            let copy = uv_coords.len() as u32;
            uv_coords.push([u_of(q as f64 + 0.5), v_of(0.0)]);
            uv_to_vertex.push(pole_start as u32);
            faces.push([pole_start as u32, vert(0, q + 1), vert(0, q)]);
            uv_faces.push([copy, grid(0, q + 1), grid(0, q)]);
        }
        for q in 0..ring {
            let copy = uv_coords.len() as u32;
            uv_coords.push([u_of(q as f64 + 0.5), v_of((rows + 1) as f64)]);
            uv_to_vertex.push(pole_end as u32);
            faces.push([pole_end as u32, vert(rows - 1, q), vert(rows - 1, q + 1)]);
            uv_faces.push([copy, grid(rows - 1, q), grid(rows - 1, q + 1)]);
        }
        part_labels.extend(std::iter::repeat_n(p as u32, faces.len() - first_face));

        // Orient the whole part outward, judged on a mid-body face.
        let probe = first_face + (rows / 2) * 2 * ring;
        let [a, b, c] = faces[probe].map(|i| template[i as usize]);
        let outward = (a + b + c) / 3.0 - row_centers[rows / 2];
        if (b - a).cross(&(c - a)).dot(&outward) < 0.0 {
            for f in first_face..faces.len() {
                faces[f].swap(1, 2);
                uv_faces[f].swap(1, 2);
            }
        }
        built.push(BuiltPart {
            ring_base: base,
            ring,
            rows,
            row_centers,
        });
    }
    let n = template.len();

    // Mirror permutation: torso/head rings pair column q with ring - q; the
    // right limbs are vertex-for-vertex copies of the left ones.
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for (p, part) in built.iter().enumerate() {
        match specs[p].side {
            Side::Center => {
                for k in 0..part.rows {
                    for q in 0..part.ring {
                        let a = part.ring_base + k * part.ring + q;
                        let b = part.ring_base + k * part.ring + (part.ring - q) % part.ring;
                        perm[a] = b as u32;
                    }
                }
            }
            Side::Left => {
                let right = &built[p + 1];
                let count = part.rows * part.ring + 2;
                for i in 0..count {
                    perm[part.ring_base + i] = (right.ring_base + i) as u32;
                    perm[right.ring_base + i] = (part.ring_base + i) as u32;
                }
            }
            Side::Right => {}
        }
    }

    for v in template.iter_mut() {
        *v = v.map(to_storage);
    }
    for uv in uv_coords.iter_mut() {
        *uv = uv.map(to_storage);
    }
    symmetrize(&mut template, &perm);

    let joint_regressor = build_regressor(&specs, &built, n);
    let skin_weights = build_skin_weights(&specs, &template, &vertex_part);
    let shape_dirs = build_shape_dirs(&mut rng, &template, &radial, &vertex_part, &perm);

    let uv_layout = UvLayout {
        uv_coords,
        uv_faces,
        uv_to_vertex,
    };
    BodyModel::new(BodyModelData {
        template,
        faces,
        shape_dirs,
        n_shape: N_SHAPE,
        pose_dirs: None,
        joint_regressor,
        skin_weights,
        parents: PARENTS.to_vec(),
        uv_layout,
        part_labels,
        n_parts: specs.len(),
        mirror_perm: Some(perm),
        root_joint: 0,
        joint_names: Some(SYNTH_JOINT_NAMES.iter().map(|s| s.to_string()).collect()),
    })
}

/// Makes `values` exactly mirror-symmetric under `perm` (x negated).
fn symmetrize(values: &mut [Vector3<f64>], perm: &[u32]) {
    for i in 0..values.len() {
        let m = perm[i] as usize;
        if m == i {
            values[i].x = 0.0;
        } else if i < m {
            values[m] = mirror(&values[i]);
        }
    }
}

/// Each joint is the mean of one or two vertex rings; ring sizes are powers of
/// two so every weight is exact in `f32`.
fn build_regressor(
    specs: &[PartSpec],
    built: &[BuiltPart],
    n: usize,
) -> Vec<f64> {
    let (torso, head, uarm, farm, thigh, shin) = (0, 1, 2, 4, 6, 8);
    let h = specs[0].end.y / 1.47;
    let p = |x: f64, y: f64| v3(x, y, 0.0) * h;
    // (joint, [(part, target)]) for the left and center joints.
    let recipes: Vec<(usize, Vec<(usize, Vector3<f64>)>)> = vec![
        (0, vec![(torso, p(0.0, 0.93))]),
        (1, vec![(thigh, p(0.09, 0.90))]),
        (3, vec![(torso, p(0.0, 1.03))]),
        (4, vec![(thigh, p(0.09, 0.50)), (shin, p(0.09, 0.50))]),
        (6, vec![(torso, p(0.0, 1.16))]),
        (7, vec![(shin, p(0.09, 0.08))]),
        (9, vec![(torso, p(0.0, 1.29))]),
        (10, vec![(shin, p(0.09, 0.03))]),
        (12, vec![(torso, p(0.0, 1.44)), (head, p(0.0, 1.46))]),
        (13, vec![(torso, p(0.0, 1.38)), (uarm, p(0.16, 1.38))]),
        (15, vec![(head, p(0.0, 1.56))]),
        (16, vec![(uarm, p(0.19, 1.38))]),
        (18, vec![(uarm, p(0.44, 1.38)), (farm, p(0.44, 1.38))]),
        (20, vec![(farm, p(0.70, 1.38))]),
        (22, vec![(farm, p(0.77, 1.38))]),
    ];
    let nearest_row = |part: &BuiltPart, target: &Vector3<f64>| {
        (0..part.rows)
            .min_by(|&a, &b| {
                (part.row_centers[a] - target)
                    .norm()
                    .total_cmp(&(part.row_centers[b] - target).norm())
            })
            .expect("parts have rows")
    };
    let mut reg = vec![0.0; 24 * n];
    for (joint, rings) in &recipes {
        let share = 1.0 / rings.len() as f64;
        let mirrored_joint = MIRROR_JOINT[*joint];
        for (part, target) in rings {
            let mut sides = vec![(*joint, *part)];
            if mirrored_joint != *joint {
                let twin = if specs[*part].side == Side::Left { part + 1 } else { *part };
                sides.push((mirrored_joint, twin));
            }
            for (j, pi) in sides {
                let bp = &built[pi];
                // rows are identical between a left part and its mirror
                let k = nearest_row(&built[*part], target);
                let w = share / bp.ring as f64;
                for q in 0..bp.ring {
                    reg[j * n + bp.ring_base + k * bp.ring + q] += w;
                }
            }
        }
    }
    reg
}

fn station_weights(spec: &PartSpec, p: &Vector3<f64>) -> Vec<(usize, f64)> {
    let axis = (spec.end - spec.start).normalize();
    let t = (p - spec.start).dot(&axis);
    let pos: Vec<f64> = spec
        .stations
        .iter()
        .map(|(s, _)| (s - spec.start).dot(&axis))
        .collect();
    let last = pos.len() - 1;
    if t <= pos[0] {
        return vec![(spec.stations[0].1, 1.0)];
    }
    if t >= pos[last] {
        return vec![(spec.stations[last].1, 1.0)];
    }
    let k = (0..last).find(|&k| t <= pos[k + 1]).unwrap_or(last - 1);
    let f = (t - pos[k]) / (pos[k + 1] - pos[k]);
    vec![(spec.stations[k].1, 1.0 - f), (spec.stations[k + 1].1, f)]
}

fn build_skin_weights(
    specs: &[PartSpec],
    template: &[Vector3<f64>],
    vertex_part: &[usize],
) -> Vec<f64> {
    let n = template.len();
    let h = specs[0].end.y / 1.47;
    let mut skin = vec![0.0; n * 24];
    for i in 0..n {
        let spec = &specs[vertex_part[i]];
        let p = template[i];
        let mut row = [0.0f64; 24];
        for (j, w) in station_weights(spec, &p) {
            row[j] += w;
        }
        if vertex_part[i] == 0 && p.x != 0.0 {
            // shoulder region of the torso follows the collar
            let f = ((p.y - 1.30 * h) / (0.08 * h)).clamp(0.0, 1.0)
                * (p.x.abs() / (0.12 * h)).clamp(0.0, 1.0);
            let collar = if p.x > 0.0 { 13 } else { 14 };
            let moved = f * row[9];
            row[9] -= moved;
            row[collar] += moved;
        }
        // Quantize to multiples of 1/256; the dominant joint absorbs the rest.
        let dominant = (0..24)
            .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
            .expect("24 joints");
        let mut rest = 0.0;
        for (j, w) in row.iter_mut().enumerate() {
            if j != dominant {
                *w = (*w * SKIN_QUANTUM).round() / SKIN_QUANTUM;
                rest += *w;
            }
        }
        row[dominant] = 1.0 - rest;
        skin[i * 24..(i + 1) * 24].copy_from_slice(&row);
    }
    skin
}

fn build_shape_dirs(
    rng: &mut ChaCha8Rng,
    template: &[Vector3<f64>],
    radial: &[Vector3<f64>],
    vertex_part: &[usize],
    perm: &[u32],
) -> Vec<f64> {
    let n = template.len();
    let top = template.iter().map(|v| v.y).fold(0.0, f64::max);
    let bump = |x: f64, c: f64, w: f64| (-((x - c) / w).powi(2)).exp();
    let mut fields: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(N_SHAPE);
    // 0: torso length; everything above the chest moves up rigidly
    let (waist, chest) = (0.95 * top / 1.7, 1.30 * top / 1.7);
    fields.push(
        template
            .iter()
            .map(|p| v3(0.0, 0.03 * ((p.y - waist) / (chest - waist)).clamp(0.0, 1.0), 0.0))
            .collect(),
    );
    // 1: limb and torso girth; the head keeps its size
    fields.push(
        (0..n)
            .map(|i| if vertex_part[i] == 1 { Vector3::zeros() } else { radial[i] * 0.012 })
            .collect(),
    );
    // 2: torso and hip width
    fields.push(
        (0..n)
            .map(|i| match vertex_part[i] {
                0 | 6 | 7 => v3(radial[i].x * 0.015, 0.0, 0.0),
                _ => Vector3::zeros(),
            })
            .collect(),
    );
    // 3: leg length
    let hip = 0.9 * top / 1.7;
    fields.push(
        template
            .iter()
            .map(|p| v3(0.0, -0.03 * ((hip - p.y) / hip).max(0.0), 0.0))
            .collect(),
    );
    // 4: arm span
    fields.push(
        (0..n)
            .map(|i| match vertex_part[i] {
                2..=5 => {
                    let p = template[i];
                    v3(0.03 * (p.x.abs() - 0.1).max(0.0) / 0.7 * p.x.signum(), 0.0, 0.0)
                }
                _ => Vector3::zeros(),
            })
            .collect(),
    );
    // 5: belly
    fields.push(
        (0..n)
            .map(|i| {
                if vertex_part[i] == 0 {
                    radial[i] * (0.02 * radial[i].z.max(0.0) * bump(template[i].y, 1.05 * top / 1.7, 0.12))
                } else {
                    Vector3::zeros()
                }
            })
            .collect(),
    );
    // 6..9: smooth random fields
    while fields.len() < N_SHAPE {
        let waves: Vec<(Vector3<f64>, Vector3<f64>, f64)> = (0..3)
            .map(|_| {
                let amp = Vector3::from_fn(|_, _| rng.random_range(-0.005..=0.005));
                let k = Vector3::from_fn(|_, _| rng.random_range(-8.0..=8.0));
                (amp, k, rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        fields.push(
            template
                .iter()
                .map(|p| waves.iter().map(|(a, k, ph)| a * (k.dot(p) + ph).sin()).sum())
                .collect(),
        );
    }
    let mut dirs = vec![0.0; n * 3 * N_SHAPE];
    for (b, field) in fields.iter_mut().enumerate() {
        for v in field.iter_mut() {
            *v = v.map(to_storage);
        }
        symmetrize(field, perm);
        for (i, d) in field.iter().enumerate() {
            for c in 0..3 {
                dirs[(i * 3 + c) * N_SHAPE + b] = d[c];
            }
        }
    }
    dirs
}
