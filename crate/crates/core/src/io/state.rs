//! Variational state file: magic `VPRQ`, u32 LE n, u32 offset count, the u32
//! offsets, then float64 LE mean, raw log-diagonal, and off-diagonal blocks
//! in offset order. Float64 end to end: rerunning with the same seed must
//! reproduce the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{format_err, read_exact_into, read_f64, read_u32, write_f64, write_u32};
use crate::error::Result;
use crate::gaussian::{GaussianVariational, SparsityPattern, StructuredCholesky};

const MAGIC: &[u8; 4] = b"VPRQ";

pub fn write_state(path: &Path, q: &GaussianVariational) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let n = q.dim();
    let offsets = q.chol.pattern.offsets();
    write_u32(&mut w, n as u32)?;
    write_u32(&mut w, offsets.len() as u32)?;
    for &o in offsets {
        write_u32(&mut w, o as u32)?;
    }
    for &v in &q.mu {
        write_f64(&mut w, v)?;
    }
    for &v in &q.chol.raw_diag {
        write_f64(&mut w, v)?;
    }
    for block in &q.chol.offdiag {
        for &v in block {
            write_f64(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_state(path: &Path) -> Result<GaussianVariational> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_into(&mut r, &mut magic).map_err(|_| format_err(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(format_err(path, format!("bad magic {magic:?}, expected \"VPRQ\"")));
    }
    let n = read_u32(&mut r).map_err(|_| format_err(path, "truncated header"))? as usize;
    let n_offsets = read_u32(&mut r).map_err(|_| format_err(path, "truncated header"))? as usize;
    if n == 0 || n_offsets == 0 || n_offsets > n {
        return Err(format_err(path, format!("unreasonable sizes n={n}, offsets={n_offsets}")));
    }
    let mut offsets = Vec::with_capacity(n_offsets);
    for _ in 0..n_offsets {
        offsets.push(read_u32(&mut r).map_err(|_| format_err(path, "truncated offsets"))? as usize);
    }
    let pattern = SparsityPattern::new(n, offsets)?;
    let mut mu = vec![0.0; n];
    for v in mu.iter_mut() {
        *v = read_f64(&mut r).map_err(|_| format_err(path, "truncated mean"))?;
    }
    let mut raw_diag = vec![0.0; n];
    for v in raw_diag.iter_mut() {
        *v = read_f64(&mut r).map_err(|_| format_err(path, "truncated diagonal"))?;
    }
    let mut offdiag = Vec::with_capacity(pattern.offsets().len() - 1);
    for &o in &pattern.offsets()[1..] {
        let mut block = vec![0.0; n - o];
        for v in block.iter_mut() {
            *v = read_f64(&mut r).map_err(|_| format_err(path, "truncated block"))?;
        }
        offdiag.push(block);
    }
    let chol = StructuredCholesky::from_parts(pattern, raw_diag, offdiag)?;
    Ok(GaussianVariational { mu, chol })
}
