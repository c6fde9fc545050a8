//! Model directory format.
//!
//! `manifest.json` declares the sizes; every array is a raw little-endian file
//! in row-major order. Float arrays are `f32`, index arrays `u32`. The root's
//! parent entry is `u32::MAX`.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{BodyModel, BodyModelData};
use crate::binio::{f32_bytes, read_f32_file, read_u32_file, u32_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::uv::UvLayout;

pub const MODEL_FORMAT: &str = "densebody-model";
pub const ROOT_SENTINEL: u32 = u32::MAX;

/// Row sums read from `f32` files may be off by storage rounding; rows within
/// this tolerance are renormalized on load.
pub const STORAGE_ROW_SUM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub n_vertices: usize,
    pub n_faces: usize,
    pub n_joints: usize,
    pub n_shape: usize,
    /// Pose rows, `n_joints - 1`.
    pub n_pose: usize,
    pub n_parts: usize,
    pub n_uv: usize,
    pub root_joint: usize,
    pub has_pose_dirs: bool,
    pub has_mirror_perm: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_names: Option<Vec<String>>,
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            what: what.into(),
            expected,
            found,
        })
    }
}

fn triples(flat: &[u32]) -> Vec<[u32; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn load_model(dir: &Path) -> Result<BodyModel> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != MODEL_FORMAT {
        return Err(Error::format("manifest", format!("unknown format {:?}", m.format)));
    }
    if m.endianness != "little" {
        return Err(Error::format(
            "manifest",
            format!("unsupported endianness {:?}", m.endianness),
        ));
    }
    if m.n_joints == 0 || m.n_pose + 1 != m.n_joints {
        return Err(Error::format(
            "manifest",
            format!("n_pose {} must equal n_joints - 1 ({})", m.n_pose, m.n_joints),
        ));
    }
    let (n, j, s) = (m.n_vertices, m.n_joints, m.n_shape);

    let template = read_f32_file(&dir.join("template.f32"))?;
    check_len("template.f32", n * 3, template.len())?;
    let faces = read_u32_file(&dir.join("faces.u32"))?;
    check_len("faces.u32", m.n_faces * 3, faces.len())?;
    let shape_dirs = read_f32_file(&dir.join("shape_dirs.f32"))?;
    check_len("shape_dirs.f32", n * 3 * s, shape_dirs.len())?;
    let pose_dirs = if m.has_pose_dirs {
        let pd = read_f32_file(&dir.join("pose_dirs.f32"))?;
        check_len("pose_dirs.f32", n * 3 * 9 * m.n_pose, pd.len())?;
        Some(pd)
    } else {
        None
    };
    let joint_regressor = read_f32_file(&dir.join("joint_regressor.f32"))?;
    check_len("joint_regressor.f32", j * n, joint_regressor.len())?;
    let skin_weights = read_f32_file(&dir.join("skin_weights.f32"))?;
    check_len("skin_weights.f32", n * j, skin_weights.len())?;
    let parents_raw = read_u32_file(&dir.join("parents.u32"))?;
    check_len("parents.u32", j, parents_raw.len())?;
    let part_labels = read_u32_file(&dir.join("part_labels.u32"))?;
    check_len("part_labels.u32", m.n_faces, part_labels.len())?;
    let mirror_perm = if m.has_mirror_perm {
        let perm = read_u32_file(&dir.join("mirror_perm.u32"))?;
        check_len("mirror_perm.u32", n, perm.len())?;
        Some(perm)
    } else {
        None
    };
    let uv_flat = read_f32_file(&dir.join("uv_coords.f32"))?;
    check_len("uv_coords.f32", m.n_uv * 2, uv_flat.len())?;
    let uv_faces = read_u32_file(&dir.join("uv_faces.u32"))?;
    check_len("uv_faces.u32", m.n_faces * 3, uv_faces.len())?;
    let uv_to_vertex = read_u32_file(&dir.join("uv_to_vertex.u32"))?;
    check_len("uv_to_vertex.u32", m.n_uv, uv_to_vertex.len())?;

    let parents = parents_raw
        .iter()
        .map(|&p| (p != ROOT_SENTINEL).then_some(p as usize))
        .collect();
    let mut data = BodyModelData {
        template: template
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect(),
        faces: triples(&faces),
        shape_dirs,
        n_shape: s,
        pose_dirs,
        joint_regressor,
        skin_weights,
        parents,
        uv_layout: UvLayout {
            uv_coords: uv_flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            uv_faces: triples(&uv_faces),
            uv_to_vertex,
        },
        part_labels,
        n_parts: m.n_parts,
        mirror_perm,
        root_joint: m.root_joint,
        joint_names: m.joint_names,
    };
    data.normalize_rows(STORAGE_ROW_SUM_TOL)?;
    BodyModel::new(data)
}

pub fn manifest_of(model: &BodyModel) -> Manifest {
    let d = model.data();
    Manifest {
        format: MODEL_FORMAT.into(),
        version: 1,
        endianness: "little".into(),
        n_vertices: model.n_vertices(),
        n_faces: model.n_faces(),
        n_joints: model.n_joints(),
        n_shape: model.n_shape(),
        n_pose: model.n_pose(),
        n_parts: model.n_parts(),
        n_uv: d.uv_layout.n_uv(),
        root_joint: d.root_joint,
        has_pose_dirs: d.pose_dirs.is_some(),
        has_mirror_perm: d.mirror_perm.is_some(),
        joint_names: d.joint_names.clone(),
    }
}

pub fn save_model(model: &BodyModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = model.data();
    let manifest = serde_json::to_string_pretty(&manifest_of(model))?;
    write_bytes(&dir.join("manifest.json"), manifest.as_bytes())?;
    let flat3 = |v: &[Vector3<f64>]| f32_bytes(v.iter().flat_map(|p| [p.x, p.y, p.z]));
    write_bytes(&dir.join("template.f32"), &flat3(&d.template))?;
    write_bytes(
        &dir.join("faces.u32"),
        &u32_bytes(d.faces.iter().flatten().copied()),
    )?;
    write_bytes(
        &dir.join("shape_dirs.f32"),
        &f32_bytes(d.shape_dirs.iter().copied()),
    )?;
    if let Some(pd) = &d.pose_dirs {
        write_bytes(&dir.join("pose_dirs.f32"), &f32_bytes(pd.iter().copied()))?;
    }
    write_bytes(
        &dir.join("joint_regressor.f32"),
        &f32_bytes(d.joint_regressor.iter().copied()),
    )?;
    write_bytes(
        &dir.join("skin_weights.f32"),
        &f32_bytes(d.skin_weights.iter().copied()),
    )?;
    write_bytes(
        &dir.join("parents.u32"),
        &u32_bytes(
            d.parents
                .iter()
                .map(|p| p.map_or(ROOT_SENTINEL, |p| p as u32)),
        ),
    )?;
    write_bytes(
        &dir.join("part_labels.u32"),
        &u32_bytes(d.part_labels.iter().copied()),
    )?;
    if let Some(perm) = &d.mirror_perm {
        write_bytes(&dir.join("mirror_perm.u32"), &u32_bytes(perm.iter().copied()))?;
    }
    write_bytes(
        &dir.join("uv_coords.f32"),
        &f32_bytes(d.uv_layout.uv_coords.iter().flatten().copied()),
    )?;
    write_bytes(
        &dir.join("uv_faces.u32"),
        &u32_bytes(d.uv_layout.uv_faces.iter().flatten().copied()),
    )?;
    write_bytes(
        &dir.join("uv_to_vertex.u32"),
        &u32_bytes(d.uv_layout.uv_to_vertex.iter().copied()),
    )?;
    Ok(())
}
