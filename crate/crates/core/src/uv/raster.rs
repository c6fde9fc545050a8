//! Rasterization of a UV layout into texel coverage.
//!
//! Coverage depends only on the layout and the resolution, so it is computed
//! once and rendering any vertex set is a fixed linear map. A texel center on
//! an edge shared by two faces belongs to the lower face index; edge functions
//! are evaluated in a canonical endpoint order so shared edges agree exactly.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::layout::{signed_area, UvLayout, MIN_UV_AREA};
use super::map::PositionMap;
use crate::error::{Error, Result};

pub const MIN_RESOLUTION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelHit {
    pub face: u32,
    /// 3D vertex of each face corner.
    pub corners: [u32; 3],
    pub bary: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    resolution: usize,
    hits: Vec<Option<TexelHit>>,
}

pub fn texel_center(resolution: usize, i: usize, j: usize) -> [f64; 2] {
    let r = resolution as f64;
    [(j as f64 + 0.5) / r, (i as f64 + 0.5) / r]
}

fn edge(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let raw = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if (a[0], a[1]) <= (b[0], b[1]) {
        raw(a, b)
    } else {
        -raw(b, a)
    }
}

/// Barycentric coordinates of `p` if it lies inside or on the triangle.
fn barycentric(tri: &[[f64; 2]; 3], p: [f64; 2]) -> Option<[f64; 3]> {
    let mut w = [
        edge(p, tri[1], tri[2]),
        edge(p, tri[2], tri[0]),
        edge(p, tri[0], tri[1]),
    ];
    if signed_area(tri) < 0.0 {
        w.iter_mut().for_each(|x| *x = -*x);
    }
    if w.iter().any(|&x| x < 0.0) {
        return None;
    }
    let sum = w[0] + w[1] + w[2];
    Some([w[0] / sum, w[1] / sum, w[2] / sum])
}

impl Coverage {
    pub fn new(layout: &UvLayout, resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "resolution {resolution} is below the minimum of {MIN_RESOLUTION}"
            )));
        }
        let r = resolution as f64;
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); resolution];
        for f in 0..layout.n_faces() {
            let tri = layout.triangle(f);
            if signed_area(&tri).abs() <= MIN_UV_AREA {
                return Err(Error::InvalidLayout(format!("uv face {f} is degenerate")));
            }
            let (lo, hi) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[1]), hi.max(p[1]))
            });
            // rows whose centers fall in [lo, hi]
            let first = ((lo * r - 0.5).ceil().max(0.0)) as usize;
            let last = ((hi * r - 0.5).floor()).min(r - 1.0);
            if last < 0.0 {
                continue;
            }
            for row in rows.iter_mut().take(last as usize + 1).skip(first) {
                row.push(f as u32);
            }
        }
        let hits: Vec<Option<TexelHit>> = rows
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, faces)| {
                let mut line: Vec<Option<TexelHit>> = vec![None; resolution];
                for &f in faces {
                    let tri = layout.triangle(f as usize);
                    let (lo, hi) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        (lo.min(p[0]), hi.max(p[0]))
                    });
                    let first = ((lo * r - 0.5).ceil().max(0.0)) as usize;
                    let last = (hi * r - 0.5).floor().min(r - 1.0);
                    if last < 0.0 {
                        continue;
                    }
                    for (j, slot) in line.iter_mut().enumerate().take(last as usize + 1).skip(first) {
                        if slot.is_some() {
                            continue;
                        }
                        if let Some(bary) = barycentric(&tri, texel_center(resolution, i, j)) {
                            let uvf = layout.uv_faces[f as usize];
                            *slot = Some(TexelHit {
                                face: f,
                                corners: uvf.map(|u| layout.uv_to_vertex[u as usize]),
                                bary,
                            });
                        }
                    }
                }
                line
            })
            .collect();
        Ok(Coverage { resolution, hits })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn hits(&self) -> &[Option<TexelHit>] {
        &self.hits
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.hits.iter().map(Option::is_some).collect()
    }

    /// Face index covering each texel, `None` for background.
    pub fn face_of(&self, texel: usize) -> Option<u32> {
        self.hits[texel].map(|h| h.face)
    }

    pub fn render(&self, vertices: &[Vector3<f64>]) -> Result<PositionMap> {
        if let Some((i, _)) = vertices
            .iter()
            .enumerate()
            .find(|(_, v)| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidArgument(format!("vertex {i} is not finite")));
        }
        let max_corner = self
            .hits
            .iter()
            .flatten()
            .flat_map(|h| h.corners)
            .max()
            .map_or(0, |m| m as usize + 1);
        if max_corner > vertices.len() {
            return Err(Error::Dimension(format!(
                "layout references vertex {} but only {} were given",
                max_corner - 1,
                vertices.len()
            )));
        }
        let positions = self
            .hits
            .iter()
            .map(|hit| match hit {
                Some(h) => {
                    vertices[h.corners[0] as usize] * h.bary[0]
                        + vertices[h.corners[1] as usize] * h.bary[1]
                        + vertices[h.corners[2] as usize] * h.bary[2]
                }
                None => Vector3::zeros(),
            })
            .collect();
        PositionMap::new(self.resolution, positions, self.valid_mask())
    }
}

/// Renders `vertices` through `layout` at `resolution`.
pub fn render_position_map(
    layout: &UvLayout,
    vertices: &[Vector3<f64>],
    resolution: usize,
) -> Result<PositionMap> {
    Coverage::new(layout, resolution)?.render(vertices)
}
