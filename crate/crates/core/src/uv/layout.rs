use crate::error::{Error, Result};

/// Minimum UV-space triangle area.
pub const MIN_UV_AREA: f64 = 1e-12;

/// Overlap slack for the pairwise triangle test, in UV units.
const OVERLAP_EPS: f64 = 1e-9;

/// Texture-space layout of a body mesh.
///
/// Seam vertices appear several times in `uv_coords`; `uv_to_vertex` maps each
/// uv-vertex back to its 3D vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct UvLayout {
    pub uv_coords: Vec<[f64; 2]>,
    pub uv_faces: Vec<[u32; 3]>,
    pub uv_to_vertex: Vec<u32>,
}

impl UvLayout {
    pub fn new(
        uv_coords: Vec<[f64; 2]>,
        uv_faces: Vec<[u32; 3]>,
        uv_to_vertex: Vec<u32>,
        n_vertices: usize,
    ) -> Result<Self> {
        let layout = UvLayout {
            uv_coords,
            uv_faces,
            uv_to_vertex,
        };
        layout.validate(n_vertices)?;
        Ok(layout)
    }

    pub fn n_uv(&self) -> usize {
        self.uv_coords.len()
    }

    pub fn n_faces(&self) -> usize {
        self.uv_faces.len()
    }

    pub fn triangle(&self, face: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.uv_faces[face];
        [
            self.uv_coords[a as usize],
            self.uv_coords[b as usize],
            self.uv_coords[c as usize],
        ]
    }

    /// Checks index ranges, coverage of every 3D vertex, triangle areas, and
    /// pairwise non-overlap.
    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        let m = self.uv_coords.len();
        if self.uv_to_vertex.len() != m {
            return Err(Error::ShapeMismatch {
                what: "uv_to_vertex".into(),
                expected: m,
                found: self.uv_to_vertex.len(),
            });
        }
        if m < n_vertices {
            return Err(Error::InvalidLayout(format!(
                "{m} uv-vertices cannot cover {n_vertices} vertices"
            )));
        }
        for (i, uv) in self.uv_coords.iter().enumerate() {
            if !uv.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)) {
                return Err(Error::InvalidLayout(format!(
                    "uv-vertex {i} at {uv:?} lies outside [0,1]^2"
                )));
            }
        }
        let mut covered = vec![false; n_vertices];
        for (i, &v) in self.uv_to_vertex.iter().enumerate() {
            let v = v as usize;
            if v >= n_vertices {
                return Err(Error::InvalidLayout(format!(
                    "uv-vertex {i} maps to vertex {v} >= {n_vertices}"
                )));
            }
            covered[v] = true;
        }
        if let Some(v) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidLayout(format!(
                "vertex {v} has no uv-vertex"
            )));
        }
        for (f, face) in self.uv_faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i as usize >= m) {
                return Err(Error::InvalidLayout(format!(
                    "uv face {f} references uv-vertex {bad} >= {m}"
                )));
            }
            let area = signed_area(&self.triangle(f)).abs();
            if area <= MIN_UV_AREA {
                return Err(Error::InvalidLayout(format!(
                    "uv face {f} is degenerate (area {area:e})"
                )));
            }
        }
        self.check_overlaps()
    }

    fn check_overlaps(&self) -> Result<()> {
        let n = self.uv_faces.len();
        if n < 2 {
            return Ok(());
        }
        let cells = ((n as f64).sqrt().ceil() as usize).clamp(1, 512);
        let bboxes: Vec<[f64; 4]> = (0..n).map(|f| bbox(&self.triangle(f))).collect();
        let cell_of = |x: f64| ((x * cells as f64) as usize).min(cells - 1);
        let mut grid: Vec<Vec<u32>> = vec![Vec::new(); cells * cells];
        for (f, b) in bboxes.iter().enumerate() {
            for cy in cell_of(b[1])..=cell_of(b[3]) {
                for cx in cell_of(b[0])..=cell_of(b[2]) {
                    grid[cy * cells + cx].push(f as u32);
                }
            }
        }
        for (cell, members) in grid.iter().enumerate() {
            let (cx, cy) = (cell % cells, cell / cells);
            for (k, &fa) in members.iter().enumerate() {
                for &fb in &members[k + 1..] {
                    let (ba, bb) = (&bboxes[fa as usize], &bboxes[fb as usize]);
                    let lo_x = ba[0].max(bb[0]);
                    let lo_y = ba[1].max(bb[1]);
                    if lo_x > ba[2].min(bb[2]) || lo_y > ba[3].min(bb[3]) {
                        continue;
                    }
                    // Test each pair once, in the cell holding the bbox intersection corner.
                    if cell_of(lo_x) != cx || cell_of(lo_y) != cy {
                        continue;
                    }
                    if triangles_overlap(
                        &self.triangle(fa as usize),
                        &self.triangle(fb as usize),
                    ) {
                        return Err(Error::InvalidLayout(format!(
                            "uv faces {fa} and {fb} overlap"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn signed_area(t: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[1][1] - t[0][1]) * (t[2][0] - t[0][0]))
}

fn bbox(t: &[[f64; 2]; 3]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in t {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].min(p[1]);
        b[2] = b[2].max(p[0]);
        b[3] = b[3].max(p[1]);
    }
    b
}

/// Separating-axis test; triangles that only touch along an edge or at a
/// vertex do not overlap.
fn triangles_overlap(a: &[[f64; 2]; 3], b: &[[f64; 2]; 3]) -> bool {
    for tri in [a, b] {
        for e in 0..3 {
            let p = tri[e];
            let q = tri[(e + 1) % 3];
            let (nx, ny) = (q[1] - p[1], p[0] - q[0]);
            let len = nx.hypot(ny);
            let (nx, ny) = (nx / len, ny / len);
            let proj = |t: &[[f64; 2]; 3]| {
                t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v[0] * nx + v[1] * ny;
                    (lo.min(d), hi.max(d))
                })
            };
            let (alo, ahi) = proj(a);
            let (blo, bhi) = proj(b);
            if ahi <= blo + OVERLAP_EPS || bhi <= alo + OVERLAP_EPS {
                return false;
            }
        }
    }
    true
}
