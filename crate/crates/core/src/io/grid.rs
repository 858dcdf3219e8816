//! Grid file format: magic `VPRG`, u32 LE nx, u32 LE nz, float32 LE values
//! row-major (row = constant depth).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{format_err, read_exact_into, read_f32, read_u32, write_f32, write_u32};
use crate::error::Result;
use crate::field::Field2;

const MAGIC: &[u8; 4] = b"VPRG";
const MAX_CELLS: u64 = 1 << 28;

pub fn write_grid(path: &Path, field: &Field2) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, field.nx() as u32)?;
    write_u32(&mut w, field.nz() as u32)?;
    for &v in field.values() {
        write_f32(&mut w, v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Field2> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_into(&mut r, &mut magic)
        .map_err(|_| format_err(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(format_err(path, format!("bad magic {magic:?}, expected \"VPRG\"")));
    }
    let nx = read_u32(&mut r).map_err(|_| format_err(path, "truncated header"))? as u64;
    let nz = read_u32(&mut r).map_err(|_| format_err(path, "truncated header"))? as u64;
    if nx == 0 || nz == 0 || nx * nz > MAX_CELLS {
        return Err(format_err(path, format!("unreasonable dimensions {nx} x {nz}")));
    }
    let n = (nx * nz) as usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(read_f32(&mut r).map_err(|_| format_err(path, "truncated data"))? as f64);
    }
    Field2::new(nx as usize, nz as usize, data)
}
