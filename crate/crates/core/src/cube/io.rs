//! On-disk cube container.
//!
//! ```text
//! <dir>/header.json   CubeHeader as UTF-8 JSON
//! <dir>/<var>.f32     IEEE-754 float32, little-endian, row-major [time][lat][lon]
//! <dir>/mask.u8       one byte per cell, row-major [lat][lon]
//! ```
//!
//! When `mask.u8` is absent the mask is derived from `mask_variable` (finite and
//! positive at the first time step), or defaults to all-valid.

use std::fs;
use std::path::Path;

use super::{binarize_value, CubeHeader, Datacube};
use crate::error::{Error, Result};

pub const HEADER_FILE: &str = "header.json";
pub const MASK_FILE: &str = "mask.u8";

pub fn encode_f32_le(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f32_le(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn write_cube(cube: &Datacube, dir: &Path) -> Result<()> {
    // Re-validate so a hand-assembled cube cannot produce an unreadable directory.
    let cube = Datacube::new(cube.header.clone(), cube.data.clone(), cube.mask.clone())?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let header_path = dir.join(HEADER_FILE);
    let json = serde_json::to_string_pretty(&cube.header)
        .map_err(|e| Error::Header { path: header_path.clone(), message: e.to_string() })?;
    fs::write(&header_path, json).map_err(|e| Error::io(&header_path, e))?;

    for (spec, values) in cube.header.variables.iter().zip(&cube.data) {
        let path = dir.join(format!("{}.f32", spec.name));
        fs::write(&path, encode_f32_le(values)).map_err(|e| Error::io(&path, e))?;
    }
    let mask_path = dir.join(MASK_FILE);
    fs::write(&mask_path, &cube.mask).map_err(|e| Error::io(&mask_path, e))?;
    Ok(())
}

pub fn read_header(dir: &Path) -> Result<CubeHeader> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: CubeHeader =
        serde_json::from_str(&text).map_err(|e| Error::Header { path: path.clone(), message: e.to_string() })?;
    header.validate().map_err(|e| Error::Header { path, message: e.to_string() })?;
    Ok(header)
}

fn read_exact_len(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected, found: bytes.len() as u64 });
    }
    Ok(bytes)
}

pub fn read_cube(dir: &Path) -> Result<Datacube> {
    let header = read_header(dir)?;
    let n = header.len() as u64;
    let mut data = Vec::with_capacity(header.variables.len());
    for spec in &header.variables {
        let path = dir.join(format!("{}.f32", spec.name));
        let bytes = read_exact_len(&path, n * 4)?;
        data.push(decode_f32_le(&bytes));
    }

    let cells = header.cells_per_step();
    let mask_path = dir.join(MASK_FILE);
    let mask = if mask_path.exists() {
        read_exact_len(&mask_path, cells as u64)?
    } else if let Some(name) = &header.mask_variable {
        let idx = header.variable_index(name).ok_or_else(|| Error::Header {
            path: dir.join(HEADER_FILE),
            message: format!("mask variable {name} is not a cube variable"),
        })?;
        data[idx][..cells].iter().map(|&v| binarize_value(v)).collect()
    } else {
        vec![1; cells]
    };
    Datacube::new(header, data, mask)
}
