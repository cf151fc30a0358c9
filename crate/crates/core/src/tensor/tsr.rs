//! `TSR1` binary tensor files.
//!
//! Layout: the four magic bytes `TSR1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` extents, then the row-major payload as little-endian
//! IEEE-754 `f64`.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TSR_MAGIC: &[u8; 4] = b"TSR1";

pub fn encode_tsr(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(TSR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format("truncated TSR1 stream".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<u32> {
    let b = take(bytes, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn decode_tsr(mut bytes: &[u8]) -> Result<Tensor> {
    if take(&mut bytes, 4)? != TSR_MAGIC {
        return Err(Error::Format("missing TSR1 magic".into()));
    }
    let rank = take_u32(&mut bytes)? as usize;
    if rank == 0 {
        return Err(Error::Format("TSR1 rank must be positive".into()));
    }
    let shape = (0..rank)
        .map(|_| take_u32(&mut bytes).map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::Format(format!(
            "TSR1 payload holds {} bytes, shape {shape:?} needs {}",
            bytes.len(),
            n * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tsr(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &encode_tsr(t))
}

pub fn read_tsr(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tsr(&fs::read(path)?)
}
