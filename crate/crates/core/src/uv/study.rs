//! Round-trip error of rendering and resampling across map resolutions.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::Coverage;
use super::resample::Resampler;
use crate::body_model::{BodyModel, PoseParams, ShapeParams};
use crate::error::{Error, Result};

/// Pose rows drawn with angle up to this bound (radians).
pub const STUDY_MAX_ANGLE: f64 = 0.5;
/// Shape coefficients drawn uniformly in `[-bound, bound]`.
pub const STUDY_SHAPE_BOUND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub resolution: usize,
    pub surface_error_mm: f64,
    pub joint_error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("resolution,surface_error_mm,joint_error_mm\n");
        for r in &self.rows {
            writeln!(out, "{},{:.6},{:.6}", r.resolution, r.surface_error_mm, r.joint_error_mm)
                .expect("writing to a String cannot fail");
        }
        out
    }
}

pub fn random_samples<R: Rng + ?Sized>(
    rng: &mut R,
    model: &BodyModel,
    count: usize,
) -> Vec<(PoseParams, ShapeParams)> {
    (0..count)
        .map(|_| {
            let pose = PoseParams::random(rng, model.n_pose(), STUDY_MAX_ANGLE);
            let shape = ShapeParams::random_uniform(rng, model.n_shape(), STUDY_SHAPE_BOUND);
            (pose, shape)
        })
        .collect()
}

pub fn resolution_study(
    model: &BodyModel,
    samples: &[(PoseParams, ShapeParams)],
    resolutions: &[usize],
) -> Result<StudyReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("study needs at least one sample".into()));
    }
    if resolutions.len() < 2 {
        return Err(Error::InvalidArgument("study needs at least two resolutions".into()));
    }
    if resolutions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("resolutions must be strictly increasing".into()));
    }
    let meshes = samples
        .iter()
        .map(|(pose, shape)| {
            let mesh = model.forward(pose, shape)?;
            let joints = model.regress_joints(&mesh)?;
            Ok((mesh, joints))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(resolutions.len());
    for &res in resolutions {
        let coverage = Coverage::new(model.uv_layout(), res)?;
        let sampler = Resampler::new(model.uv_layout(), model.n_vertices(), res, &coverage.valid_mask())?;
        let (mut surface, mut joint) = (0.0, 0.0);
        for (mesh, joints) in &meshes {
            let map = coverage.render(&mesh.vertices)?;
            let back = sampler.apply(&map)?.vertices;
            let back_joints = model.regress(&back)?;
            surface += mean_distance(&mesh.vertices, &back);
            joint += mean_distance(&joints.positions, &back_joints.positions);
        }
        let k = meshes.len() as f64;
        rows.push(StudyRow {
            resolution: res,
            surface_error_mm: 1000.0 * surface / k,
            joint_error_mm: 1000.0 * joint / k,
        });
    }
    Ok(StudyReport { rows })
}

fn mean_distance(a: &[nalgebra::Vector3<f64>], b: &[nalgebra::Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}
