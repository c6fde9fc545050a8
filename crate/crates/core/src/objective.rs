//! Training losses over position maps and their subgradients.
//!
//! All sums run serially in row-major texel order so results are reproducible
//! bit for bit. The subgradient of `|x|` at 0 is taken as 0.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, Joints};
use crate::error::{Error, Result};
use crate::uv::{build_weight_mask, joint_uvs, Coverage, PositionMap, Resampler, WeightMask, WeightMaskConfig};

pub const DEFAULT_TV_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTerm {
    pub weight: f64,
    /// Joint indices entering the mean; all joints when empty.
    #[serde(default)]
    pub subset: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Total-variation weight.
    #[serde(default = "default_tv_weight")]
    pub lambda: f64,
    /// Per-part smoothing weights; all ones when absent.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub joint: Option<JointTerm>,
}

fn default_tv_weight() -> f64 {
    DEFAULT_TV_WEIGHT
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_TV_WEIGHT,
            alpha: None,
            joint: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if let Some(a) = &self.alpha {
            if a.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidArgument("alpha entries must be finite and >= 0".into()));
            }
        }
        if let Some(j) = &self.joint {
            if !(j.weight >= 0.0 && j.weight.is_finite()) {
                return Err(Error::InvalidArgument("joint weight must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn alpha_for(&self, n_parts: usize) -> Result<Vec<f64>> {
        match &self.alpha {
            None => Ok(vec![1.0; n_parts]),
            Some(a) if a.len() == n_parts => Ok(a.clone()),
            Some(a) => Err(Error::InvalidArgument(format!(
                "alpha has {} entries but the mask has {n_parts} parts",
                a.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub tv: f64,
    pub joint: Option<f64>,
    pub total: f64,
}

fn check_pair(p: &PositionMap, gt: &PositionMap) -> Result<()> {
    if p.resolution() != gt.resolution() {
        return Err(Error::ShapeMismatch {
            what: "position map resolution".into(),
            expected: gt.resolution(),
            found: p.resolution(),
        });
    }
    if p.valid() != gt.valid() {
        return Err(Error::InvalidArgument("position maps have different validity masks".into()));
    }
    Ok(())
}

fn check_mask(p: &PositionMap, mask: &WeightMask) -> Result<()> {
    if mask.weights.len() != p.texels() || mask.part_id.len() != p.texels() {
        return Err(Error::ShapeMismatch {
            what: "weight mask texels".into(),
            expected: p.texels(),
            found: mask.weights.len(),
        });
    }
    Ok(())
}

fn l1_norm(v: &Vector3<f64>) -> f64 {
    v.x.abs() + v.y.abs() + v.z.abs()
}

fn sign(v: &Vector3<f64>) -> Vector3<f64> {
    v.map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
}

pub fn weighted_l1(p: &PositionMap, gt: &PositionMap, mask: &WeightMask) -> Result<f64> {
    check_pair(p, gt)?;
    check_mask(p, mask)?;
    let mut sum = 0.0;
    for t in 0..p.texels() {
        if p.valid()[t] {
            sum += mask.weights[t] * l1_norm(&(p.positions()[t] - gt.positions()[t]));
        }
    }
    Ok(sum)
}

/// Calls `f(a, b, part)` for every forward-difference pair that lies inside
/// one part, in row-major order of `a`, right neighbor before lower neighbor.
fn for_each_tv_pair(p: &PositionMap, part_id: &[u32], mut f: impl FnMut(usize, usize, usize)) {
    let r = p.resolution();
    let valid = p.valid();
    for i in 0..r {
        for j in 0..r {
            let a = i * r + j;
            if !valid[a] {
                continue;
            }
            let k = part_id[a];
            if j + 1 < r && valid[a + 1] && part_id[a + 1] == k {
                f(a, a + 1, k as usize);
            }
            if i + 1 < r && valid[a + r] && part_id[a + r] == k {
                f(a, a + r, k as usize);
            }
        }
    }
}

fn check_alpha(mask: &WeightMask, alpha: &[f64]) -> Result<()> {
    if alpha.len() < mask.n_parts {
        return Err(Error::InvalidArgument(format!(
            "alpha has {} entries but the mask has {} parts",
            alpha.len(),
            mask.n_parts
        )));
    }
    Ok(())
}

pub fn tv(p: &PositionMap, mask: &WeightMask, alpha: &[f64]) -> Result<f64> {
    check_mask(p, mask)?;
    check_alpha(mask, alpha)?;
    let pos = p.positions();
    let mut sum = 0.0;
    for_each_tv_pair(p, &mask.part_id, |a, b, k| {
        sum += alpha[k] * l1_norm(&(pos[b] - pos[a]));
    });
    Ok(sum)
}

fn joint_indices(model: &BodyModel, subset: &[usize]) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Ok((0..model.n_joints()).collect());
    }
    if let Some(&bad) = subset.iter().find(|&&j| j >= model.n_joints()) {
        return Err(Error::InvalidArgument(format!(
            "joint {bad} out of range ({} joints)",
            model.n_joints()
        )));
    }
    Ok(subset.to_vec())
}

/// Mean distance between joints regressed from the resampled map and `gt_joints`.
/// An empty `subset` is rejected.
pub fn joint_loss(p: &PositionMap, model: &BodyModel, gt_joints: &Joints, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("joint subset is empty".into()));
    }
    let sampler = Resampler::for_map(model.uv_layout(), model.n_vertices(), p)?;
    joint_loss_with(&sampler, p, model, gt_joints, &joint_indices(model, subset)?)
}

fn joint_loss_with(
    sampler: &Resampler,
    p: &PositionMap,
    model: &BodyModel,
    gt_joints: &Joints,
    subset: &[usize],
) -> Result<f64> {
    if gt_joints.len() != model.n_joints() {
        return Err(Error::Dimension(format!(
            "{} ground-truth joints for a {}-joint model",
            gt_joints.len(),
            model.n_joints()
        )));
    }
    let joints = model.regress(&sampler.apply(p)?.vertices)?;
    let sum: f64 = subset
        .iter()
        .map(|&j| (joints.positions[j] - gt_joints.positions[j]).norm())
        .sum();
    Ok(sum / subset.len() as f64)
}

fn joint_grad_with(
    sampler: &Resampler,
    p: &PositionMap,
    model: &BodyModel,
    gt_joints: &Joints,
    subset: &[usize],
) -> Result<Vec<Vector3<f64>>> {
    let joints = model.regress(&sampler.apply(p)?.vertices)?;
    let scale = 1.0 / subset.len() as f64;
    let mut vertex_grad = vec![Vector3::zeros(); model.n_vertices()];
    for &j in subset {
        let d = joints.positions[j] - gt_joints.positions[j];
        let n = d.norm();
        if n == 0.0 {
            continue;
        }
        let g = d * (scale / n);
        for &(v, w) in &model.regressor_rows()[j] {
            vertex_grad[v] += g * w;
        }
    }
    Ok(sampler.adjoint(&vertex_grad))
}

/// Loss evaluator: the ground truth, mask and optional joint context are
/// prepared once and reused across evaluations.
pub struct Objective<'a> {
    cfg: LossConfig,
    alpha: Vec<f64>,
    gt: &'a PositionMap,
    mask: &'a WeightMask,
    joint: Option<JointContext<'a>>,
}

struct JointContext<'a> {
    model: &'a BodyModel,
    sampler: Resampler,
    gt_joints: Joints,
    subset: Vec<usize>,
    weight: f64,
}

impl<'a> Objective<'a> {
    /// `model` is required when `cfg.joint` is set; ground-truth joints are
    /// regressed from the resampled `gt` map.
    pub fn new(
        cfg: &LossConfig,
        gt: &'a PositionMap,
        mask: &'a WeightMask,
        model: Option<&'a BodyModel>,
    ) -> Result<Self> {
        cfg.validate()?;
        check_mask(gt, mask)?;
        let alpha = cfg.alpha_for(mask.n_parts)?;
        let joint = match &cfg.joint {
            None => None,
            Some(term) => {
                let model = model.ok_or_else(|| {
                    Error::InvalidArgument("the joint loss term needs a body model".into())
                })?;
                let sampler = Resampler::for_map(model.uv_layout(), model.n_vertices(), gt)?;
                let gt_joints = model.regress(&sampler.apply(gt)?.vertices)?;
                Some(JointContext {
                    model,
                    sampler,
                    gt_joints,
                    subset: joint_indices(model, &term.subset)?,
                    weight: term.weight,
                })
            }
        };
        Ok(Objective {
            cfg: cfg.clone(),
            alpha,
            gt,
            mask,
            joint,
        })
    }

    pub fn evaluate(&self, p: &PositionMap) -> Result<LossBreakdown> {
        let l1 = weighted_l1(p, self.gt, self.mask)?;
        let tv = tv(p, self.mask, &self.alpha)?;
        let mut total = l1 + self.cfg.lambda * tv;
        let joint = match &self.joint {
            Some(ctx) => {
                let j = joint_loss_with(&ctx.sampler, p, ctx.model, &ctx.gt_joints, &ctx.subset)?;
                total += ctx.weight * j;
                Some(j)
            }
            None => None,
        };
        Ok(LossBreakdown { l1, tv, joint, total })
    }

    /// Subgradient of the total loss with respect to every texel position;
    /// zero on invalid texels.
    pub fn gradient(&self, p: &PositionMap) -> Result<Vec<Vector3<f64>>> {
        check_pair(p, self.gt)?;
        let pos = p.positions();
        let gt = self.gt.positions();
        let mut grad = vec![Vector3::zeros(); p.texels()];
        for t in 0..p.texels() {
            if p.valid()[t] {
                grad[t] = sign(&(pos[t] - gt[t])) * self.mask.weights[t];
            }
        }
        let lambda = self.cfg.lambda;
        if lambda != 0.0 {
            for_each_tv_pair(p, &self.mask.part_id, |a, b, k| {
                let s = sign(&(pos[b] - pos[a])) * (lambda * self.alpha[k]);
                grad[b] += s;
                grad[a] -= s;
            });
        }
        if let Some(ctx) = &self.joint {
            if ctx.weight != 0.0 {
                let jg = joint_grad_with(&ctx.sampler, p, ctx.model, &ctx.gt_joints, &ctx.subset)?;
                for (g, j) in grad.iter_mut().zip(jg) {
                    *g += j * ctx.weight;
                }
            }
        }
        Ok(grad)
    }
}

/// Part-balanced mask of `model` at `resolution`, with gain around the rest-pose joints.
pub fn model_weight_mask(model: &BodyModel, resolution: usize, cfg: &WeightMaskConfig) -> Result<WeightMask> {
    let coverage = Coverage::new(model.uv_layout(), resolution)?;
    let uvs = joint_uvs(model.uv_layout(), model.template(), model.rest_joints());
    build_weight_mask(&coverage, model.part_labels(), model.n_parts(), &uvs, cfg)
}

pub fn total_loss(
    p: &PositionMap,
    gt: &PositionMap,
    cfg: &LossConfig,
    mask: &WeightMask,
    model: Option<&BodyModel>,
) -> Result<LossBreakdown> {
    Objective::new(cfg, gt, mask, model)?.evaluate(p)
}

pub fn loss_grad(
    p: &PositionMap,
    gt: &PositionMap,
    cfg: &LossConfig,
    mask: &WeightMask,
    model: Option<&BodyModel>,
) -> Result<Vec<Vector3<f64>>> {
    Objective::new(cfg, gt, mask, model)?.gradient(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(res: usize, vals: Vec<Vector3<f64>>, valid: Vec<bool>) -> PositionMap {
        PositionMap::new(res, vals, valid).unwrap()
    }

    fn flat_mask(res: usize, parts: Vec<u32>) -> WeightMask {
        WeightMask {
            resolution: res,
            n_parts: 2,
            weights: parts.iter().map(|&p| if p < 2 { 1.0 } else { 0.0 }).collect(),
            part_id: parts,
        }
    }

    #[test]
    fn single_texel_difference_of_ones_gives_three() {
        let res = 8;
        let mut valid = vec![false; 64];
        valid[9] = true;
        let gt = map(res, vec![Vector3::zeros(); 64], valid.clone());
        let mut vals = vec![Vector3::zeros(); 64];
        vals[9] = Vector3::repeat(1.0);
        let p = map(res, vals, valid.clone());
        let parts = valid.iter().map(|&v| if v { 0 } else { 2 }).collect();
        assert_eq!(weighted_l1(&p, &gt, &flat_mask(res, parts)).unwrap(), 3.0);
    }

    #[test]
    fn tv_counts_only_same_part_valid_pairs() {
        let res = 8;
        let valid = vec![true; 64];
        let mut vals = vec![Vector3::zeros(); 64];
        vals[1] = Vector3::new(1.0, 0.0, 0.0);
        let p = map(res, vals, valid);
        let mut parts = vec![0u32; 64];
        // texel 1 is alone in part 1 except for its right neighbor
        parts[1] = 1;
        parts[2] = 1;
        let mask = flat_mask(res, parts);
        // pairs with texel 1: (0,1) cross-part, (1,2) same part, (1,9) cross-part
        assert_eq!(tv(&p, &mask, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv(&p, &mask, &[1.0, 3.0]).unwrap(), 3.0);
        assert!(tv(&p, &mask, &[1.0]).is_err());
    }

    #[test]
    fn gradient_at_equality_is_zero_without_tv() {
        let res = 8;
        let vals: Vec<_> = (0..64).map(|i| Vector3::repeat(i as f64)).collect();
        let p = map(res, vals, vec![true; 64]);
        let mask = flat_mask(res, vec![0; 64]);
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let g = loss_grad(&p, &p, &cfg, &mask, None).unwrap();
        assert!(g.iter().all(|v| *v == Vector3::zeros()));
    }

    #[test]
    fn mismatched_validity_is_rejected() {
        let a = map(8, vec![Vector3::zeros(); 64], vec![true; 64]);
        let mut valid = vec![true; 64];
        valid[0] = false;
        let b = map(8, vec![Vector3::zeros(); 64], valid);
        assert!(weighted_l1(&a, &b, &flat_mask(8, vec![0; 64])).is_err());
    }

    #[test]
    fn joint_term_needs_a_model() {
        let a = map(8, vec![Vector3::zeros(); 64], vec![true; 64]);
        let cfg = LossConfig {
            joint: Some(JointTerm {
                weight: 1.0,
                subset: vec![],
            }),
            ..LossConfig::default()
        };
        assert!(total_loss(&a, &a, &cfg, &flat_mask(8, vec![0; 64]), None).is_err());
    }
}
