//! Vertex resampling from a position map.
//!
//! Each uv-vertex reads the map bilinearly, using only valid texels and
//! renormalizing over them. A 3D vertex takes the mean over its uv-vertices.
//! The whole operation is linear in the map, so it is stored as sparse taps and
//! also provides its adjoint.

use nalgebra::Vector3;

use super::layout::UvLayout;
use super::map::PositionMap;
use super::raster::MIN_RESOLUTION;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Resampler {
    resolution: usize,
    /// Per 3D vertex: (texel, weight), weights summing to one.
    taps: Vec<Vec<(u32, f64)>>,
    unreachable_uv: Vec<usize>,
    unreachable_vertices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub vertices: Vec<Vector3<f64>>,
    /// uv-vertices with no valid bilinear neighbor; they fall back to the
    /// nearest valid texel.
    pub unreachable_uv: Vec<usize>,
    /// 3D vertices with at least one unreachable uv-vertex.
    pub unreachable_vertices: Vec<usize>,
}

fn bilinear_taps(uv: [f64; 2], resolution: usize, valid: &[bool]) -> Vec<(u32, f64)> {
    let r = resolution as f64;
    let x = uv[0] * r - 0.5;
    let y = uv[1] * r - 0.5;
    let (j0, i0) = (x.floor(), y.floor());
    let (fx, fy) = (x - j0, y - i0);
    let mut taps = Vec::with_capacity(4);
    for (di, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dj, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (i, j) = (i0 + di, j0 + dj);
            let w = wx * wy;
            if w <= 0.0 || i < 0.0 || j < 0.0 || i >= r || j >= r {
                continue;
            }
            let t = i as usize * resolution + j as usize;
            if valid[t] {
                taps.push((t as u32, w));
            }
        }
    }
    let total: f64 = taps.iter().map(|t| t.1).sum();
    taps.iter_mut().for_each(|t| t.1 /= total);
    taps
}

fn nearest_valid(uv: [f64; 2], resolution: usize, valid: &[bool]) -> Option<u32> {
    let r = resolution as f64;
    let (x, y) = (uv[0] * r - 0.5, uv[1] * r - 0.5);
    valid
        .iter()
        .enumerate()
        .filter(|(_, v)| **v)
        .map(|(t, _)| {
            let (i, j) = ((t / resolution) as f64, (t % resolution) as f64);
            (t, (i - y).powi(2) + (j - x).powi(2))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(t, _)| t as u32)
}

impl Resampler {
    /// Builds the sampling taps for a layout and a validity mask.
    pub fn new(layout: &UvLayout, n_vertices: usize, resolution: usize, valid: &[bool]) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "resolution {resolution} is below the minimum of {MIN_RESOLUTION}"
            )));
        }
        if valid.len() != resolution * resolution {
            return Err(Error::ShapeMismatch {
                what: "validity mask".into(),
                expected: resolution * resolution,
                found: valid.len(),
            });
        }
        if !valid.iter().any(|v| *v) {
            return Err(Error::Degenerate("position map has no valid texels".into()));
        }
        let mut per_vertex: Vec<Vec<Vec<(u32, f64)>>> = vec![Vec::new(); n_vertices];
        let mut unreachable_uv = Vec::new();
        for (u, uv) in layout.uv_coords.iter().enumerate() {
            let mut taps = bilinear_taps(*uv, resolution, valid);
            if taps.is_empty() {
                unreachable_uv.push(u);
                let t = nearest_valid(*uv, resolution, valid).expect("map has a valid texel");
                taps.push((t, 1.0));
            }
            let v = layout.uv_to_vertex[u] as usize;
            if v >= n_vertices {
                return Err(Error::Dimension(format!(
                    "uv-vertex {u} maps to vertex {v} >= {n_vertices}"
                )));
            }
            per_vertex[v].push(taps);
        }
        let mut unreachable_vertices: Vec<usize> = unreachable_uv
            .iter()
            .map(|&u| layout.uv_to_vertex[u] as usize)
            .collect();
        unreachable_vertices.sort_unstable();
        unreachable_vertices.dedup();
        let taps = per_vertex
            .into_iter()
            .enumerate()
            .map(|(v, copies)| {
                if copies.is_empty() {
                    return Err(Error::InvalidLayout(format!("vertex {v} has no uv-vertex")));
                }
                let share = 1.0 / copies.len() as f64;
                Ok(copies
                    .into_iter()
                    .flatten()
                    .map(|(t, w)| (t, w * share))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Resampler {
            resolution,
            taps,
            unreachable_uv,
            unreachable_vertices,
        })
    }

    pub fn for_map(layout: &UvLayout, n_vertices: usize, map: &PositionMap) -> Result<Self> {
        Self::new(layout, n_vertices, map.resolution(), map.valid())
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn taps(&self) -> &[Vec<(u32, f64)>] {
        &self.taps
    }

    pub fn unreachable_vertices(&self) -> &[usize] {
        &self.unreachable_vertices
    }

    pub fn apply(&self, map: &PositionMap) -> Result<Resampled> {
        if map.resolution() != self.resolution {
            return Err(Error::Dimension(format!(
                "map resolution {} does not match sampler resolution {}",
                map.resolution(),
                self.resolution
            )));
        }
        let pos = map.positions();
        let vertices = self
            .taps
            .iter()
            .map(|taps| taps.iter().map(|&(t, w)| pos[t as usize] * w).sum())
            .collect();
        Ok(Resampled {
            vertices,
            unreachable_uv: self.unreachable_uv.clone(),
            unreachable_vertices: self.unreachable_vertices.clone(),
        })
    }

    /// Transpose of [`Resampler::apply`]: pulls per-vertex gradients back to texels.
    pub fn adjoint(&self, vertex_grad: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.resolution * self.resolution];
        for (taps, g) in self.taps.iter().zip(vertex_grad) {
            for &(t, w) in taps {
                out[t as usize] += g * w;
            }
        }
        out
    }
}

/// Resamples the vertices of `layout` from `map`.
pub fn resample_vertices(layout: &UvLayout, n_vertices: usize, map: &PositionMap) -> Result<Resampled> {
    Resampler::for_map(layout, n_vertices, map)?.apply(map)
}
