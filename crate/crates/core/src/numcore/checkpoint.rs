//! Binary checkpoint container.
//!
//! Layout (all integers u64 little-endian, values f32 little-endian):
//! `"APLCKPT1"`, entry count, then per entry: name length, name bytes
//! (UTF-8), rank, extents, row-major values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Tensor;

pub const MAGIC: &[u8; 8] = b"APLCKPT1";

pub type Entry = (String, Tensor<f32>);

pub fn write_to<W: Write>(mut w: W, entries: &[Entry]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Data(format!("checkpoint: {}", msg.into()))
}

pub fn read_from<R: Read>(mut r: R) -> Result<Vec<Entry>> {
    let io = |e: std::io::Error| corrupt(e.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let count = read_u64(&mut r).map_err(io)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u64(&mut r).map_err(io)? as usize;
        if len > 1 << 16 {
            return Err(corrupt(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| corrupt("name is not UTF-8"))?;
        let rank = read_u64(&mut r).map_err(io)? as usize;
        if rank > 8 {
            return Err(corrupt(format!("implausible rank {rank} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r).map_err(io)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(io)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

pub fn save(path: &Path, entries: &[Entry]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_to(std::io::BufWriter::new(file), entries).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(std::io::BufReader::new(file))
}
