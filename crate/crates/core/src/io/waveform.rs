//! Waveform file format: magic `VPRD`, u32 LE n_src, n_rec, nt, f64 LE dt,
//! float32 LE samples ordered `[src][rec][t]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{format_err, read_exact_into, read_f32, read_f64, read_u32, write_f32, write_f64, write_u32};
use crate::error::Result;
use crate::forward::WaveformData;

const MAGIC: &[u8; 4] = b"VPRD";
const MAX_SAMPLES: u64 = 1 << 30;

pub fn write_waveform(path: &Path, data: &WaveformData, dt: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, data.n_src as u32)?;
    write_u32(&mut w, data.n_rec as u32)?;
    write_u32(&mut w, data.nt as u32)?;
    write_f64(&mut w, dt)?;
    for &v in &data.samples {
        write_f32(&mut w, v as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a waveform file; `sigma_d` is not stored on disk, so the returned
/// data carries the placeholder 1.0 for the caller to overwrite.
pub fn read_waveform(path: &Path) -> Result<(WaveformData, f64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_into(&mut r, &mut magic).map_err(|_| format_err(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(format_err(path, format!("bad magic {magic:?}, expected \"VPRD\"")));
    }
    let n_src = read_u32(&mut r).map_err(|_| format_err(path, "truncated header"))? as u64;
    let n_rec = read_u32(&mut r).map_err(|_| format_err(path, "truncated header"))? as u64;
    let nt = read_u32(&mut r).map_err(|_| format_err(path, "truncated header"))? as u64;
    let dt = read_f64(&mut r).map_err(|_| format_err(path, "truncated header"))?;
    let total = n_src * n_rec * nt;
    if total == 0 || total > MAX_SAMPLES {
        return Err(format_err(path, format!("unreasonable shape {n_src} x {n_rec} x {nt}")));
    }
    let mut data = WaveformData::zeros(n_src as usize, n_rec as usize, nt as usize, 1.0);
    for v in data.samples.iter_mut() {
        *v = read_f32(&mut r).map_err(|_| format_err(path, "truncated samples"))? as f64;
    }
    Ok((data, dt))
}
