//! Raw little-endian array files (`*.f32`, `*.u32`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn read_f32_file(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path.display().to_string(),
            format!("{} bytes is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn read_u32_file(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path.display().to_string(),
            format!("{} bytes is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values
        .into_iter()
        .flat_map(|v| (v as f32).to_le_bytes())
        .collect()
}

pub fn u32_bytes(values: impl IntoIterator<Item = u32>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an `N x 3` vertex file of little-endian f32 triples.
pub fn read_vertices(path: &Path) -> Result<Vec<nalgebra::Vector3<f64>>> {
    let flat = read_f32_file(path)?;
    if flat.len() % 3 != 0 {
        return Err(Error::format(
            path.display().to_string(),
            "vertex file length is not a multiple of 3 floats",
        ));
    }
    Ok(flat
        .chunks_exact(3)
        .map(|c| nalgebra::Vector3::new(c[0], c[1], c[2]))
        .collect())
}

pub fn write_vertices(path: &Path, vertices: &[nalgebra::Vector3<f64>]) -> Result<()> {
    write_bytes(
        path,
        &f32_bytes(vertices.iter().flat_map(|v| [v.x, v.y, v.z])),
    )
}

/// Rounds a value to the nearest `f32`, the storage precision of all model files.
pub fn to_storage(v: f64) -> f64 {
    v as f32 as f64
}
