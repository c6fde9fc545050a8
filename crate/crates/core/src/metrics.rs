//! Joint and surface error metrics. Inputs are in metres, results in millimetres.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, Joints};
use crate::error::{Error, Result};
use crate::fitting::{umeyama, umeyama_rigid};

/// How predicted joints are translated onto the ground truth before MPJPE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootAlign {
    /// Match the root depth only; x and y stay image-aligned.
    #[default]
    DepthOnly,
    FullRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceAlign {
    #[default]
    Raw,
    RootDepth,
}

fn check_counts(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            what: what.into(),
            expected: b,
            found: a,
        });
    }
    if a == 0 {
        return Err(Error::InvalidArgument(format!("{what} is empty")));
    }
    Ok(())
}

fn mean_distance_mm(pred: &[Vector3<f64>], gt: &[Vector3<f64>], shift: &Vector3<f64>) -> f64 {
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p + shift - g).norm()).sum();
    sum / pred.len() as f64 * 1000.0
}

fn root_shift(pred_root: &Vector3<f64>, gt_root: &Vector3<f64>, mode: RootAlign) -> Vector3<f64> {
    match mode {
        RootAlign::DepthOnly => Vector3::new(0.0, 0.0, gt_root.z - pred_root.z),
        RootAlign::FullRoot => gt_root - pred_root,
    }
}

/// Per-joint distances in millimetres after root alignment.
pub fn joint_distances_mm(pred: &Joints, gt: &Joints, root: usize, mode: RootAlign) -> Result<Vec<f64>> {
    check_counts("joints", pred.len(), gt.len())?;
    if root >= gt.len() {
        return Err(Error::InvalidArgument(format!("root {root} out of range ({} joints)", gt.len())));
    }
    let shift = root_shift(&pred.positions[root], &gt.positions[root], mode);
    Ok(pred
        .positions
        .iter()
        .zip(&gt.positions)
        .map(|(p, g)| (p + shift - g).norm() * 1000.0)
        .collect())
}

pub fn mpjpe(pred: &Joints, gt: &Joints, root: usize, mode: RootAlign) -> Result<f64> {
    let d = joint_distances_mm(pred, gt, root, mode)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// MPJPE after Procrustes alignment of `pred` onto `gt`, with or without scale.
pub fn mpjpe_pa(pred: &Joints, gt: &Joints, with_scale: bool) -> Result<f64> {
    check_counts("joints", pred.len(), gt.len())?;
    let w = vec![1.0; pred.len()];
    let tr = if with_scale {
        umeyama(&pred.positions, &gt.positions, &w)?
    } else {
        umeyama_rigid(&pred.positions, &gt.positions, &w)?
    };
    Ok(mean_distance_mm(&tr.apply_all(&pred.positions), &gt.positions, &Vector3::zeros()))
}

/// Mean per-vertex distance. `roots` (predicted, ground truth) is required for
/// [`SurfaceAlign::RootDepth`].
pub fn surface_error(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    mode: SurfaceAlign,
    roots: Option<(Vector3<f64>, Vector3<f64>)>,
) -> Result<f64> {
    check_counts("vertices", pred.len(), gt.len())?;
    let shift = match (mode, roots) {
        (SurfaceAlign::Raw, _) => Vector3::zeros(),
        (SurfaceAlign::RootDepth, Some((p, g))) => root_shift(&p, &g, RootAlign::DepthOnly),
        (SurfaceAlign::RootDepth, None) => {
            return Err(Error::InvalidArgument("root-depth surface error needs root positions".into()))
        }
    };
    Ok(mean_distance_mm(pred, gt, &shift))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricModes {
    pub mpjpe: RootAlign,
    pub pa_scale: bool,
    pub surface: SurfaceAlign,
}

impl MetricModes {
    pub fn new() -> Self {
        MetricModes {
            pa_scale: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mpjpe_mm: f64,
    pub mpjpe_pa_mm: f64,
    pub surface_mm: f64,
    pub per_joint_mm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub modes: MetricModes,
    pub joints: Vec<usize>,
    pub count: usize,
    pub mpjpe_mm: f64,
    pub mpjpe_pa_mm: f64,
    pub surface_mm: f64,
    /// Mean over samples, per evaluated joint.
    pub per_joint_mm: Vec<f64>,
    pub samples: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,mpjpe_mm,mpjpe_pa_mm,surface_mm\n");
        for (i, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", s.mpjpe_mm, s.mpjpe_pa_mm, s.surface_mm));
        }
        out
    }
}

fn evaluate_one(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    model: &BodyModel,
    joints: &[usize],
    modes: MetricModes,
) -> Result<SampleMetrics> {
    check_counts("vertices", pred.len(), gt.len())?;
    let root = model.root_joint();
    let pj = model.regress(pred)?;
    let gj = model.regress(gt)?;
    let roots = (pj.positions[root], gj.positions[root]);
    let all = joint_distances_mm(&pj, &gj, root, modes.mpjpe)?;
    let per_joint: Vec<f64> = joints.iter().map(|&j| all[j]).collect();
    let (ps, gs) = (pj.subset(joints)?, gj.subset(joints)?);
    Ok(SampleMetrics {
        mpjpe_mm: per_joint.iter().sum::<f64>() / per_joint.len() as f64,
        mpjpe_pa_mm: mpjpe_pa(&ps, &gs, modes.pa_scale)?,
        surface_mm: surface_error(pred, gt, modes.surface, Some(roots))?,
        per_joint_mm: per_joint,
    })
}

/// Evaluates predicted against ground-truth vertex sets. Joints are regressed
/// with `model`; `joints` selects which ones enter MPJPE (all when `None`).
pub fn evaluate_batch(
    preds: &[Vec<Vector3<f64>>],
    gts: &[Vec<Vector3<f64>>],
    model: &BodyModel,
    joints: Option<&[usize]>,
    modes: MetricModes,
) -> Result<MetricReport> {
    check_counts("batch", preds.len(), gts.len())?;
    let joints: Vec<usize> = joints.map_or_else(|| (0..model.n_joints()).collect(), <[usize]>::to_vec);
    if joints.is_empty() {
        return Err(Error::InvalidArgument("joint subset is empty".into()));
    }
    if let Some(&j) = joints.iter().find(|&&j| j >= model.n_joints()) {
        return Err(Error::InvalidArgument(format!("joint {j} out of range ({} joints)", model.n_joints())));
    }
    let samples = preds
        .par_iter()
        .zip(gts)
        .map(|(p, g)| evaluate_one(p, g, model, &joints, modes))
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let per_joint_mm = (0..joints.len())
        .map(|k| samples.iter().map(|s| s.per_joint_mm[k]).sum::<f64>() / n)
        .collect();
    Ok(MetricReport {
        modes,
        count: samples.len(),
        mpjpe_mm: mean(|s| s.mpjpe_mm),
        mpjpe_pa_mm: mean(|s| s.mpjpe_pa_mm),
        surface_mm: mean(|s| s.surface_mm),
        per_joint_mm,
        joints,
        samples,
    })
}
