//! Parametric body model: shape blendshapes, optional pose blendshapes and
//! linear blend skinning over a kinematic tree.
//!
//! Global orientation, translation and scale are not part of the pose vector;
//! they live in [`crate::fitting::SimilarityTransform`]. Pose rows are the
//! non-root joints in increasing joint-index order.

mod io;
mod synth;

pub use io::{load_model, save_model};
pub use synth::{synth_model, SYNTH_JOINT_NAMES};

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rotation::rodrigues_with_jacobian;
use crate::uv::UvLayout;

/// Tolerance on regressor and skin-weight row sums held in memory.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Per-joint axis-angle rotations, root excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams {
    axis_angle: Vec<Vector3<f64>>,
}

impl PoseParams {
    pub fn new(axis_angle: Vec<Vector3<f64>>) -> Result<Self> {
        for (k, w) in axis_angle.iter().enumerate() {
            if !w.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidArgument(format!("pose row {k} is not finite")));
            }
            if w.norm() >= std::f64::consts::TAU {
                return Err(Error::InvalidArgument(format!(
                    "pose row {k} has angle {} >= 2pi",
                    w.norm()
                )));
            }
        }
        Ok(PoseParams { axis_angle })
    }

    pub fn zeros(k: usize) -> Self {
        PoseParams {
            axis_angle: vec![Vector3::zeros(); k],
        }
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::Dimension(format!(
                "pose vector length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(
            flat.chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    /// Random pose: uniform axis direction, angle uniform in `[0, max_angle]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, k: usize, max_angle: f64) -> Self {
        let axis_angle = (0..k)
            .map(|_| {
                let dir = Vector3::from_fn(|_, _| StandardNormal.sample(rng)).normalize();
                dir * rng.random_range(0.0..=max_angle)
            })
            .collect();
        PoseParams { axis_angle }
    }

    pub fn rows(&self) -> &[Vector3<f64>] {
        &self.axis_angle
    }

    pub fn len(&self) -> usize {
        self.axis_angle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis_angle.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.axis_angle.iter().flat_map(|w| [w.x, w.y, w.z]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    coeffs: Vec<f64>,
}

impl ShapeParams {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("shape coefficient {i} is not finite")));
        }
        Ok(ShapeParams { coeffs })
    }

    pub fn zeros(s: usize) -> Self {
        ShapeParams { coeffs: vec![0.0; s] }
    }

    pub fn random_uniform<R: Rng + ?Sized>(rng: &mut R, s: usize, bound: f64) -> Self {
        ShapeParams {
            coeffs: (0..s).map(|_| rng.random_range(-bound..=bound)).collect(),
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joints {
    pub positions: Vec<Vector3<f64>>,
    pub names: Option<Vec<String>>,
}

impl Joints {
    pub fn new(positions: Vec<Vector3<f64>>) -> Self {
        Joints {
            positions,
            names: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Joints> {
        let mut positions = Vec::with_capacity(indices.len());
        for &i in indices {
            positions.push(*self.positions.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("joint {i} out of range ({} joints)", self.len()))
            })?);
        }
        let names = self
            .names
            .as_ref()
            .map(|n| indices.iter().map(|&i| n[i].clone()).collect());
        Ok(Joints { positions, names })
    }
}

/// Stored model arrays, as read from or written to a model directory.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModelData {
    pub template: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    /// `N x 3 x S`, row-major.
    pub shape_dirs: Vec<f64>,
    pub n_shape: usize,
    /// `N x 3 x 9K`, row-major; features are `vec(R_k - I)` per pose row.
    pub pose_dirs: Option<Vec<f64>>,
    /// `J x N`, row-major.
    pub joint_regressor: Vec<f64>,
    /// `N x J`, row-major.
    pub skin_weights: Vec<f64>,
    pub parents: Vec<Option<usize>>,
    pub uv_layout: UvLayout,
    pub part_labels: Vec<u32>,
    pub n_parts: usize,
    pub mirror_perm: Option<Vec<u32>>,
    pub root_joint: usize,
    pub joint_names: Option<Vec<String>>,
}

impl BodyModelData {
    /// Rescales regressor and skin-weight rows to sum to one. Rows whose sum is
    /// off by more than `tol` are rejected instead.
    pub fn normalize_rows(&mut self, tol: f64) -> Result<()> {
        let n = self.template.len();
        let j = self.parents.len();
        if self.joint_regressor.len() != j * n || self.skin_weights.len() != n * j {
            return Ok(()); // shape errors are reported by validation
        }
        for (name, data, width) in [
            ("joint_regressor", &mut self.joint_regressor, n),
            ("skin_weights", &mut self.skin_weights, j),
        ] {
            for (r, row) in data.chunks_exact_mut(width).enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > tol {
                    return Err(Error::InvalidModel(format!(
                        "{name} row {r} sums to {sum}, not 1"
                    )));
                }
                row.iter_mut().for_each(|w| *w /= sum);
            }
        }
        Ok(())
    }
}

/// An evaluated kinematic state: everything needed for skinning and for the
/// analytic Jacobian at one `(pose, shape)`.
struct PoseState {
    shaped: Vec<Vector3<f64>>,
    local_drot: Vec<[Matrix3<f64>; 3]>,
    global_rot: Vec<Matrix3<f64>>,
    /// Translation part of each skinning transform `A_j(x) = Rg_j x + b_j`.
    offset: Vec<Vector3<f64>>,
    /// Posed joint positions.
    posed_joint: Vec<Vector3<f64>>,
}

/// Vertices together with `d vertices / d (pose, shape)`.
#[derive(Debug, Clone)]
pub struct ForwardJacobian {
    pub vertices: Vec<Vector3<f64>>,
    /// `3N x (3K + S)`; row `3i + c`, pose columns first.
    pub jacobian: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct BodyModel {
    data: BodyModelData,
    regressor_rows: Vec<Vec<(usize, f64)>>,
    skin_rows: Vec<Vec<(usize, f64)>>,
    /// Joint index of each pose row.
    pose_joints: Vec<usize>,
    pose_row: Vec<Option<usize>>,
    /// Parents before children.
    topo: Vec<usize>,
    rest_joints: Vec<Vector3<f64>>,
    /// `joint_regressor * shape_dirs`, one `3 x S` block per joint.
    joint_shape_dirs: Vec<DMatrix<f64>>,
}

impl BodyModel {
    pub fn new(data: BodyModelData) -> Result<Self> {
        validate(&data)?;
        let n = data.template.len();
        let j = data.parents.len();
        let s = data.n_shape;
        let sparse = |dense: &[f64], width: usize| -> Vec<Vec<(usize, f64)>> {
            dense
                .chunks_exact(width)
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &w)| w != 0.0)
                        .map(|(c, &w)| (c, w))
                        .collect()
                })
                .collect()
        };
        let regressor_rows = sparse(&data.joint_regressor, n);
        let skin_rows = sparse(&data.skin_weights, j);
        let pose_joints: Vec<usize> = (0..j).filter(|&i| i != data.root_joint).collect();
        let mut pose_row = vec![None; j];
        for (r, &jj) in pose_joints.iter().enumerate() {
            pose_row[jj] = Some(r);
        }
        let topo = topological_order(&data.parents, data.root_joint);
        let rest_joints = regressor_rows
            .iter()
            .map(|row| row.iter().map(|&(v, w)| data.template[v] * w).sum())
            .collect();
        let joint_shape_dirs = regressor_rows
            .iter()
            .map(|row| {
                let mut m = DMatrix::zeros(3, s);
                for &(v, w) in row {
                    for c in 0..3 {
                        for b in 0..s {
                            m[(c, b)] += w * data.shape_dirs[(v * 3 + c) * s + b];
                        }
                    }
                }
                m
            })
            .collect();
        Ok(BodyModel {
            data,
            regressor_rows,
            skin_rows,
            pose_joints,
            pose_row,
            topo,
            rest_joints,
            joint_shape_dirs,
        })
    }

    pub fn data(&self) -> &BodyModelData {
        &self.data
    }

    pub fn n_vertices(&self) -> usize {
        self.data.template.len()
    }

    pub fn n_faces(&self) -> usize {
        self.data.faces.len()
    }

    pub fn n_joints(&self) -> usize {
        self.data.parents.len()
    }

    /// Number of pose rows (`J - 1`).
    pub fn n_pose(&self) -> usize {
        self.pose_joints.len()
    }

    pub fn n_shape(&self) -> usize {
        self.data.n_shape
    }

    pub fn n_parts(&self) -> usize {
        self.data.n_parts
    }

    pub fn n_params(&self) -> usize {
        3 * self.n_pose() + self.n_shape()
    }

    pub fn root_joint(&self) -> usize {
        self.data.root_joint
    }

    pub fn template(&self) -> &[Vector3<f64>] {
        &self.data.template
    }

    pub fn template_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.data.template.clone(),
        }
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.data.faces
    }

    pub fn uv_layout(&self) -> &UvLayout {
        &self.data.uv_layout
    }

    pub fn part_labels(&self) -> &[u32] {
        &self.data.part_labels
    }

    pub fn mirror_perm(&self) -> Option<&[u32]> {
        self.data.mirror_perm.as_deref()
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.data.parents
    }

    pub fn pose_joints(&self) -> &[usize] {
        &self.pose_joints
    }

    pub fn joint_names(&self) -> Option<&[String]> {
        self.data.joint_names.as_deref()
    }

    pub fn regressor_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.regressor_rows
    }

    pub fn skin_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.skin_rows
    }

    /// Joints regressed from the template.
    pub fn rest_joints(&self) -> &[Vector3<f64>] {
        &self.rest_joints
    }

    fn check_params(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<()> {
        if pose.len() != self.n_pose() {
            return Err(Error::Dimension(format!(
                "pose has {} rows, model expects {}",
                pose.len(),
                self.n_pose()
            )));
        }
        if shape.len() != self.n_shape() {
            return Err(Error::Dimension(format!(
                "shape has {} coefficients, model expects {}",
                shape.len(),
                self.n_shape()
            )));
        }
        Ok(())
    }

    fn pose_state(&self, pose: &PoseParams, shape: &ShapeParams) -> PoseState {
        let n = self.n_vertices();
        let j = self.n_joints();
        let s = self.n_shape();
        let beta = shape.coeffs();

        let mut shaped = self.data.template.clone();
        if s > 0 {
            for (i, x) in shaped.iter_mut().enumerate() {
                for c in 0..3 {
                    let dirs = &self.data.shape_dirs[(i * 3 + c) * s..(i * 3 + c + 1) * s];
                    x[c] += dirs.iter().zip(beta).map(|(d, b)| d * b).sum::<f64>();
                }
            }
        }
        let rest: Vec<Vector3<f64>> = self
            .regressor_rows
            .iter()
            .map(|row| row.iter().map(|&(v, w)| shaped[v] * w).sum())
            .collect();

        let mut local_rot = vec![Matrix3::identity(); j];
        let mut local_drot = vec![[Matrix3::zeros(); 3]; j];
        for (r, &jj) in self.pose_joints.iter().enumerate() {
            let (rot, drot) = rodrigues_with_jacobian(&pose.rows()[r]);
            local_rot[jj] = rot;
            local_drot[jj] = drot;
        }

        if let Some(pose_dirs) = &self.data.pose_dirs {
            let feats = 9 * self.n_pose();
            let mut feature = vec![0.0; feats];
            for (r, &jj) in self.pose_joints.iter().enumerate() {
                let m = local_rot[jj] - Matrix3::identity();
                for a in 0..3 {
                    for b in 0..3 {
                        feature[r * 9 + a * 3 + b] = m[(a, b)];
                    }
                }
            }
            for (i, x) in shaped.iter_mut().enumerate().take(n) {
                for c in 0..3 {
                    let dirs = &pose_dirs[(i * 3 + c) * feats..(i * 3 + c + 1) * feats];
                    x[c] += dirs.iter().zip(&feature).map(|(d, f)| d * f).sum::<f64>();
                }
            }
        }

        let root = self.data.root_joint;
        let mut global_rot = vec![Matrix3::identity(); j];
        let mut offset = vec![Vector3::zeros(); j];
        let mut posed_joint = vec![Vector3::zeros(); j];
        posed_joint[root] = rest[root];
        for &jj in &self.topo[1..] {
            let p = self.data.parents[jj].expect("non-root joint has a parent");
            global_rot[jj] = global_rot[p] * local_rot[jj];
            posed_joint[jj] = posed_joint[p] + global_rot[p] * (rest[jj] - rest[p]);
            offset[jj] = posed_joint[jj] - global_rot[jj] * rest[jj];
        }
        PoseState {
            shaped,
            local_drot,
            global_rot,
            offset,
            posed_joint,
        }
    }

    pub fn forward(&self, pose: &PoseParams, shape: &ShapeParams) -> Result<Mesh> {
        self.check_params(pose, shape)?;
        let st = self.pose_state(pose, shape);
        let vertices = self
            .skin_rows
            .iter()
            .zip(&st.shaped)
            .map(|(row, x)| {
                row.iter()
                    .map(|&(jj, w)| (st.global_rot[jj] * x + st.offset[jj]) * w)
                    .sum()
            })
            .collect();
        Ok(Mesh { vertices })
    }

    /// Posed vertices and the analytic Jacobian w.r.t. the stacked parameters
    /// `(pose rows flattened, shape coefficients)`.
    pub fn forward_with_jacobian(
        &self,
        pose: &PoseParams,
        shape: &ShapeParams,
    ) -> Result<ForwardJacobian> {
        self.check_params(pose, shape)?;
        let st = self.pose_state(pose, shape);
        let n = self.n_vertices();
        let j = self.n_joints();
        let k = self.n_pose();
        let s = self.n_shape();
        let root = self.data.root_joint;
        let mut jac = DMatrix::zeros(3 * n, 3 * k + s);

        // E_kc = Rg_parent(k) * dR_k/dw_c * Rg_k^T rotates a descendant offset.
        let mut spin = vec![[Matrix3::zeros(); 3]; j];
        for &jj in &self.pose_joints {
            let p = self.data.parents[jj].expect("non-root joint has a parent");
            for (e, d) in spin[jj].iter_mut().zip(&st.local_drot[jj]) {
                *e = st.global_rot[p] * d * st.global_rot[jj].transpose();
            }
        }
        // D_j = d offset_j / d shape.
        let mut offset_shape = vec![DMatrix::<f64>::zeros(3, s); j];
        for &jj in &self.topo[1..] {
            let p = self.data.parents[jj].expect("non-root joint has a parent");
            let step = (st.global_rot[p] - st.global_rot[jj]) * &self.joint_shape_dirs[jj];
            offset_shape[jj] = &offset_shape[p] + DMatrix::from_column_slice(3, s, step.as_slice());
        }

        let pose_feats = self.data.pose_dirs.as_ref().map(|pd| (pd, 9 * k));
        let mut acc = vec![Vector3::zeros(); j];
        let mut touched = vec![false; j];
        let mut vertices = Vec::with_capacity(n);
        for i in 0..n {
            let x = st.shaped[i];
            let mut v = Vector3::zeros();
            let mut blend_rot = Matrix3::zeros();
            for &(jj, w) in &self.skin_rows[i] {
                let y = st.global_rot[jj] * x + st.offset[jj];
                v += y * w;
                blend_rot += st.global_rot[jj] * w;
                let mut a = jj;
                while a != root {
                    acc[a] += (y - st.posed_joint[a]) * w;
                    touched[a] = true;
                    a = self.data.parents[a].expect("non-root joint has a parent");
                }
            }
            vertices.push(v);

            for a in 0..j {
                if !touched[a] {
                    continue;
                }
                let r = self.pose_row[a].expect("touched joints are pose joints");
                for c in 0..3 {
                    let d = spin[a][c] * acc[a];
                    for row in 0..3 {
                        jac[(3 * i + row, 3 * r + c)] += d[row];
                    }
                }
                acc[a] = Vector3::zeros();
                touched[a] = false;
            }

            if let Some((pd, feats)) = pose_feats {
                for (r, &jj) in self.pose_joints.iter().enumerate() {
                    for c in 0..3 {
                        let drot = &st.local_drot[jj][c];
                        let mut dx = Vector3::zeros();
                        for comp in 0..3 {
                            let dirs = &pd[(i * 3 + comp) * feats + r * 9..][..9];
                            dx[comp] = (0..9).map(|e| dirs[e] * drot[(e / 3, e % 3)]).sum();
                        }
                        let d = blend_rot * dx;
                        for row in 0..3 {
                            jac[(3 * i + row, 3 * r + c)] += d[row];
                        }
                    }
                }
            }

            if s > 0 {
                let sd = &self.data.shape_dirs[i * 3 * s..(i + 1) * 3 * s];
                for &(jj, w) in &self.skin_rows[i] {
                    let rg = &st.global_rot[jj];
                    let ds = &offset_shape[jj];
                    for b in 0..s {
                        let col = Vector3::new(sd[b], sd[s + b], sd[2 * s + b]);
                        let d = (rg * col + ds.column(b)) * w;
                        for row in 0..3 {
                            jac[(3 * i + row, 3 * k + b)] += d[row];
                        }
                    }
                }
            }
        }
        Ok(ForwardJacobian {
            vertices,
            jacobian: jac,
        })
    }

    pub fn regress_joints(&self, mesh: &Mesh) -> Result<Joints> {
        self.regress(&mesh.vertices)
    }

    pub fn regress(&self, vertices: &[Vector3<f64>]) -> Result<Joints> {
        if vertices.len() != self.n_vertices() {
            return Err(Error::Dimension(format!(
                "mesh has {} vertices, model expects {}",
                vertices.len(),
                self.n_vertices()
            )));
        }
        let positions = self
            .regressor_rows
            .iter()
            .map(|row| row.iter().map(|&(v, w)| vertices[v] * w).sum())
            .collect();
        Ok(Joints {
            positions,
            names: self.data.joint_names.clone(),
        })
    }
}

fn topological_order(parents: &[Option<usize>], root: usize) -> Vec<usize> {
    let mut children = vec![Vec::new(); parents.len()];
    for (j, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(j);
        }
    }
    let mut order = vec![root];
    let mut next = 0;
    while next < order.len() {
        let j = order[next];
        order.extend(children[j].iter().copied());
        next += 1;
    }
    order
}

fn validate(d: &BodyModelData) -> Result<()> {
    let n = d.template.len();
    let j = d.parents.len();
    let s = d.n_shape;
    let expect = |what: &str, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                what: what.into(),
                expected,
                found,
            })
        }
    };
    if n == 0 || j == 0 {
        return Err(Error::InvalidModel("model has no vertices or joints".into()));
    }
    if !d.template.iter().all(|v| v.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidModel("template has non-finite entries".into()));
    }
    expect("shape_dirs", n * 3 * s, d.shape_dirs.len())?;
    if let Some(pd) = &d.pose_dirs {
        expect("pose_dirs", n * 3 * 9 * (j - 1), pd.len())?;
    }
    expect("joint_regressor", j * n, d.joint_regressor.len())?;
    expect("skin_weights", n * j, d.skin_weights.len())?;
    expect("part_labels", d.faces.len(), d.part_labels.len())?;
    expect("uv_faces", d.faces.len(), d.uv_layout.uv_faces.len())?;

    for (name, data, width) in [
        ("joint_regressor", &d.joint_regressor, n),
        ("skin_weights", &d.skin_weights, j),
    ] {
        for (r, row) in data.chunks_exact(width).enumerate() {
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::InvalidModel(format!(
                    "{name} row {r} has negative or non-finite weights"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!(
                    "{name} row {r} sums to {sum}, not 1"
                )));
            }
        }
    }

    for (f, face) in d.faces.iter().enumerate() {
        if let Some(&bad) = face.iter().find(|&&i| i as usize >= n) {
            return Err(Error::InvalidModel(format!(
                "face {f} references vertex {bad} >= {n}"
            )));
        }
    }
    if let Some((f, &p)) = d
        .part_labels
        .iter()
        .enumerate()
        .find(|(_, &p)| p as usize >= d.n_parts)
    {
        return Err(Error::InvalidModel(format!(
            "face {f} has part {p} >= {}",
            d.n_parts
        )));
    }
    // uv faces must be parallel to mesh faces
    for (f, (face, uvf)) in d.faces.iter().zip(&d.uv_layout.uv_faces).enumerate() {
        for c in 0..3 {
            let uv = uvf[c] as usize;
            if uv < d.uv_layout.uv_to_vertex.len() && d.uv_layout.uv_to_vertex[uv] != face[c] {
                return Err(Error::InvalidLayout(format!(
                    "uv face {f} corner {c} maps to vertex {} but mesh face uses {}",
                    d.uv_layout.uv_to_vertex[uv], face[c]
                )));
            }
        }
    }

    validate_tree(&d.parents, d.root_joint)?;

    if let Some(perm) = &d.mirror_perm {
        expect("mirror_perm", n, perm.len())?;
        for (i, &p) in perm.iter().enumerate() {
            let p = p as usize;
            if p >= n || perm[p] as usize != i {
                return Err(Error::InvalidModel(format!(
                    "mirror_perm is not an involution at vertex {i}"
                )));
            }
        }
    }
    d.uv_layout.validate(n)
}

fn validate_tree(parents: &[Option<usize>], root: usize) -> Result<()> {
    let j = parents.len();
    if root >= j {
        return Err(Error::InvalidModel(format!("root joint {root} >= {j}")));
    }
    let roots: Vec<usize> = (0..j).filter(|&i| parents[i].is_none()).collect();
    if roots != [root] {
        return Err(Error::InvalidModel(format!(
            "kinematic tree must have exactly one root (joint {root}), found {roots:?}"
        )));
    }
    for start in 0..j {
        let mut a = start;
        let mut steps = 0;
        while let Some(p) = parents[a] {
            if p >= j {
                return Err(Error::InvalidModel(format!("joint {a} has parent {p} >= {j}")));
            }
            a = p;
            steps += 1;
            if steps > j {
                return Err(Error::InvalidModel(format!(
                    "kinematic tree has a cycle through joint {start}"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
