//! Per-texel loss weights: inverse part area, boosted around joints.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::layout::UvLayout;
use super::raster::Coverage;
use crate::error::{Error, Result};

pub const DEFAULT_JOINT_RADIUS_AT_256: f64 = 8.0;
pub const DEFAULT_JOINT_GAIN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightMaskConfig {
    pub joint_radius_texels: f64,
    pub joint_gain: f64,
}

impl WeightMaskConfig {
    /// Default radius scaled from 8 texels at resolution 256.
    pub fn for_resolution(resolution: usize) -> Self {
        WeightMaskConfig {
            joint_radius_texels: DEFAULT_JOINT_RADIUS_AT_256 * resolution as f64 / 256.0,
            joint_gain: DEFAULT_JOINT_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    pub resolution: usize,
    pub n_parts: usize,
    /// Zero on invalid texels, mean one over valid texels.
    pub weights: Vec<f64>,
    /// Part of each texel; `n_parts` marks background.
    pub part_id: Vec<u32>,
}

impl WeightMask {
    /// Texel count of each part.
    pub fn part_areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.n_parts];
        for &p in &self.part_id {
            if (p as usize) < self.n_parts {
                areas[p as usize] += 1;
            }
        }
        areas
    }

    /// All-ones weights on valid texels, zero elsewhere.
    pub fn uniform(coverage: &Coverage) -> Self {
        let valid = coverage.valid_mask();
        WeightMask {
            resolution: coverage.resolution(),
            n_parts: 1,
            weights: valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
            part_id: valid.iter().map(|&v| if v { 0 } else { 1 }).collect(),
        }
    }
}

pub fn build_weight_mask(
    coverage: &Coverage,
    part_labels: &[u32],
    n_parts: usize,
    joint_uvs: &[[f64; 2]],
    cfg: &WeightMaskConfig,
) -> Result<WeightMask> {
    if !(cfg.joint_radius_texels >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "joint_radius_texels must be >= 0, got {}",
            cfg.joint_radius_texels
        )));
    }
    if !(cfg.joint_gain >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "joint_gain must be >= 1, got {}",
            cfg.joint_gain
        )));
    }
    let res = coverage.resolution();
    let sentinel = n_parts as u32;
    let mut part_id = Vec::with_capacity(res * res);
    for hit in coverage.hits() {
        part_id.push(match hit {
            Some(h) => {
                let p = *part_labels.get(h.face as usize).ok_or_else(|| {
                    Error::Dimension(format!("no part label for face {}", h.face))
                })?;
                if p >= sentinel {
                    return Err(Error::InvalidArgument(format!(
                        "face {} has part {p} >= {n_parts}",
                        h.face
                    )));
                }
                p
            }
            None => sentinel,
        });
    }
    let mut mask = WeightMask {
        resolution: res,
        n_parts,
        weights: Vec::new(),
        part_id,
    };
    let areas = mask.part_areas();
    if let Some(part) = areas.iter().position(|&a| a == 0) {
        return Err(Error::EmptyPart {
            part,
            resolution: res,
        });
    }
    let valid: usize = areas.iter().sum();
    let share = valid as f64 / n_parts as f64;
    let r = res as f64;
    let joints: Vec<[f64; 2]> = joint_uvs.iter().map(|uv| [uv[0] * r, uv[1] * r]).collect();
    let radius2 = cfg.joint_radius_texels * cfg.joint_radius_texels;
    mask.weights = mask
        .part_id
        .iter()
        .enumerate()
        .map(|(t, &p)| {
            if p == sentinel {
                return 0.0;
            }
            let mut w = share / areas[p as usize] as f64;
            if cfg.joint_gain != 1.0 {
                let (x, y) = ((t % res) as f64 + 0.5, (t / res) as f64 + 0.5);
                if joints
                    .iter()
                    .any(|j| (j[0] - x).powi(2) + (j[1] - y).powi(2) <= radius2)
                {
                    w *= cfg.joint_gain;
                }
            }
            w
        })
        .collect();
    let mean = mask.weights.iter().sum::<f64>() / valid as f64;
    mask.weights.iter_mut().for_each(|w| *w /= mean);
    Ok(mask)
}

/// UV location of each joint: the uv-vertex whose 3D vertex is nearest to the
/// joint (lowest index on ties).
pub fn joint_uvs(layout: &UvLayout, vertices: &[Vector3<f64>], joints: &[Vector3<f64>]) -> Vec<[f64; 2]> {
    let mut first_uv = vec![usize::MAX; vertices.len()];
    for (u, &v) in layout.uv_to_vertex.iter().enumerate() {
        let slot = &mut first_uv[v as usize];
        *slot = (*slot).min(u);
    }
    joints
        .iter()
        .map(|j| {
            let nearest = vertices
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - j).norm_squared().total_cmp(&(b.1 - j).norm_squared()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            layout.uv_coords[first_uv[nearest]]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Left half of the square is part 0, the right quarter strips are part 1
    /// and part 1 has half the area.
    fn two_parts() -> (UvLayout, Vec<u32>) {
        let layout = UvLayout {
            uv_coords: vec![
                [0.0, 0.0],
                [0.5, 0.0],
                [0.5, 1.0],
                [0.0, 1.0],
                [0.5, 0.0],
                [0.75, 0.0],
                [0.75, 1.0],
                [0.5, 1.0],
            ],
            uv_faces: vec![[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]],
            uv_to_vertex: (0..8).collect(),
        };
        (layout, vec![0, 0, 1, 1])
    }

    #[test]
    fn weights_are_inverse_to_part_area() {
        let (layout, labels) = two_parts();
        let cov = Coverage::new(&layout, 16).unwrap();
        let cfg = WeightMaskConfig {
            joint_radius_texels: 0.0,
            joint_gain: 1.0,
        };
        let mask = build_weight_mask(&cov, &labels, 2, &[], &cfg).unwrap();
        let areas = mask.part_areas();
        assert_eq!(areas, vec![128, 64]);
        let w0 = mask.weights[mask.part_id.iter().position(|&p| p == 0).unwrap()];
        let w1 = mask.weights[mask.part_id.iter().position(|&p| p == 1).unwrap()];
        assert!((w1 / w0 - 2.0).abs() < 1e-12);
        let mean = mask.weights.iter().sum::<f64>() / 192.0;
        assert!((mean - 1.0).abs() < 1e-12);
        for (w, p) in mask.weights.iter().zip(&mask.part_id) {
            assert_eq!(*p == 2, *w == 0.0);
        }
    }

    #[test]
    fn joint_gain_boosts_nearby_texels() {
        let (layout, labels) = two_parts();
        let cov = Coverage::new(&layout, 16).unwrap();
        let cfg = WeightMaskConfig {
            joint_radius_texels: 1.0,
            joint_gain: 4.0,
        };
        let mask = build_weight_mask(&cov, &labels, 2, &[[0.25, 0.5]], &cfg).unwrap();
        let near = mask.weights[8 * 16 + 4];
        let far = mask.weights[2 * 16 + 2];
        assert!((near / far - 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_part_is_named() {
        let (layout, _) = two_parts();
        let cov = Coverage::new(&layout, 16).unwrap();
        let err = build_weight_mask(&cov, &[0, 0, 0, 0], 2, &[], &WeightMaskConfig::for_resolution(16))
            .unwrap_err();
        assert!(matches!(err, Error::EmptyPart { part: 1, resolution: 16 }));
    }

    #[test]
    fn bad_config_is_rejected() {
        let (layout, labels) = two_parts();
        let cov = Coverage::new(&layout, 16).unwrap();
        let cfg = WeightMaskConfig {
            joint_radius_texels: 1.0,
            joint_gain: 0.5,
        };
        assert!(build_weight_mask(&cov, &labels, 2, &[], &cfg).is_err());
    }
}
