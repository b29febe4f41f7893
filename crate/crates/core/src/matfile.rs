//! `APLMAT1` matrix container for features, embeddings and posteriors.
//!
//! Layout: the 7 magic bytes `APLMAT1`, row count and column count (u64
//! little-endian), then row-major f32 little-endian values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 7] = b"APLMAT1";

pub fn write_to<W: Write>(mut w: W, m: &Tensor<f32>) -> std::io::Result<()> {
    let (rows, cols) = dims(m);
    w.write_all(MAGIC)?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

fn dims(m: &Tensor<f32>) -> (usize, usize) {
    match m.shape() {
        [r, c] => (*r, *c),
        _ => (1, m.len()),
    }
}

pub fn read_from<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let bad = |msg: String| Error::Data(format!("APLMAT1: {msg}"));
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    let rows = u64::from_le_bytes(b);
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    let cols = u64::from_le_bytes(b);
    let implausible = || bad(format!("implausible size {rows}x{cols}"));
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n < 1 << 32)
        .and_then(|n| usize::try_from(n).ok())
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(implausible)?;
    let (rows, cols) = (rows as usize, cols as usize);
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(|e| bad(format!("truncated payload: {e}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}

pub fn save(path: &Path, m: &Tensor<f32>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_to(std::io::BufWriter::new(file), m).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor<f32>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
