//! Position maps and the UVPM file format.
//!
//! UVPM layout (little-endian): `b"UVPM"`, u32 version, 8 reserved zero bytes,
//! u32 H, u32 W, `H*W*3` f32 positions, `H*W` u8 validity flags.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UVPM_MAGIC: &[u8; 4] = b"UVPM";
pub const UVPM_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// `H x W` grid of 3D positions, row-major, `H == W == resolution`.
/// Texel `(i, j)` samples UV point `((j + 0.5) / W, (i + 0.5) / H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMap {
    resolution: usize,
    positions: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl PositionMap {
    /// Invalid texels are forced to zero.
    pub fn new(resolution: usize, mut positions: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self> {
        let texels = resolution * resolution;
        if positions.len() != texels || valid.len() != texels {
            return Err(Error::ShapeMismatch {
                what: "position map".into(),
                expected: texels,
                found: positions.len().min(valid.len()),
            });
        }
        for (p, &ok) in positions.iter_mut().zip(&valid) {
            if !ok {
                *p = Vector3::zeros();
            }
        }
        Ok(PositionMap {
            resolution,
            positions,
            valid,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn texels(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    /// Mutable access for optimizers; writes to invalid texels are ignored by
    /// every consumer and dropped on save.
    pub fn positions_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.positions
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.resolution + j]
    }

    pub fn at(&self, i: usize, j: usize) -> Vector3<f64> {
        self.positions[i * self.resolution + j]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = self.texels();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 + t * 13);
        out.extend_from_slice(UVPM_MAGIC);
        out.extend_from_slice(&UVPM_VERSION.to_le_bytes());
        out.extend_from_slice(&[0u8; 8]);
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        for (p, &ok) in self.positions.iter().zip(&self.valid) {
            for c in 0..3 {
                let v = if ok { p[c] as f32 } else { 0.0 };
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend(self.valid.iter().map(|&v| v as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 8 || &bytes[..4] != UVPM_MAGIC {
            return Err(Error::format("UVPM", "missing magic header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let version = u32_at(4);
        if version != UVPM_VERSION {
            return Err(Error::format("UVPM", format!("unsupported version {version}")));
        }
        let h = u32_at(HEADER_LEN) as usize;
        let w = u32_at(HEADER_LEN + 4) as usize;
        if h != w {
            return Err(Error::format("UVPM", format!("non-square map {h}x{w}")));
        }
        let t = h * w;
        let body = &bytes[HEADER_LEN + 8..];
        if body.len() != t * 13 {
            return Err(Error::ShapeMismatch {
                what: "UVPM payload bytes".into(),
                expected: t * 13,
                found: body.len(),
            });
        }
        let positions = body[..t * 12]
            .chunks_exact(12)
            .map(|c| {
                let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]) as f64;
                Vector3::new(f(0), f(4), f(8))
            })
            .collect();
        let valid = body[t * 12..]
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::format("UVPM", format!("validity byte {b}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        PositionMap::new(h, positions, valid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// 16-bit-per-channel visualization. Each channel is scaled from its
    /// min/max over valid texels; the returned range is needed to undo it.
    pub fn save_png(&self, path: &Path) -> Result<PngRange> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for (p, _) in self.positions.iter().zip(&self.valid).filter(|(_, v)| **v) {
            for c in 0..3 {
                min[c] = min[c].min(p[c]);
                max[c] = max[c].max(p[c]);
            }
        }
        if self.valid_count() == 0 {
            min = [0.0; 3];
            max = [0.0; 3];
        }
        let r = self.resolution as u32;
        let img = ImageBuffer::<Rgb<u16>, Vec<u16>>::from_fn(r, r, |x, y| {
            let idx = y as usize * self.resolution + x as usize;
            if !self.valid[idx] {
                return Rgb([0, 0, 0]);
            }
            let p = self.positions[idx];
            Rgb(std::array::from_fn(|c| {
                let span = max[c] - min[c];
                let t = if span > 0.0 { (p[c] - min[c]) / span } else { 0.0 };
                (t * 65535.0).round() as u16
            }))
        });
        img.save(path)?;
        Ok(PngRange { min, max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PngRange {
    pub min: [f64; 3],
    pub max: [f64; 3],
}
