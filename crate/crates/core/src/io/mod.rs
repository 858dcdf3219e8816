//! File formats, configuration and the run manifest.
//!
//! All binary formats are little-endian with 4-byte magics. Grids and
//! waveforms store float32 (waveform `dt` is float64); variational state is
//! float64 throughout so that reruns reproduce bit-identical files.

pub mod config;
pub mod grid;
pub mod manifest;
pub mod state;
pub mod waveform;

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn format_err(path: &std::path::Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), message: message.into() }
}

pub(crate) fn read_exact_into(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<()> {
    r.read_exact(buf)
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f32(w: &mut impl Write, v: f32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Writes a vector of floats as one value per line.
pub fn write_vector_csv(path: &std::path::Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        out.push_str(&format!("{v:.17e}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a one-value-per-line float file (blank lines and `#` comments
/// skipped).
pub fn read_vector_csv(path: &std::path::Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse::<f64>().map_err(|e| {
            format_err(path, format!("bad float on line {}: {e}", i + 1))
        })?);
    }
    Ok(out)
}

/// Writes a dense matrix as comma-separated rows.
pub fn write_matrix_csv(path: &std::path::Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a comma-separated float matrix.
pub fn read_matrix_csv(path: &std::path::Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| format_err(path, format!("bad row on line {}: {e}", i + 1)))?);
    }
    Ok(rows)
}
