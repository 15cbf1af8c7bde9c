//! Binary tensor dump used by checkpoints and test fixtures.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic[8] | precision u8 (32 or 64) | rank u8 | dims: rank × u64 | data: numel × f32/f64
//! ```

use super::{numel, Precision, Real, Tensor};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: [u8; 8] = *b"AFMTENS1";

const HEADER: usize = 8 + 1 + 1;

pub fn write_tensor<T: Real>(tensor: &Tensor<T>) -> Vec<u8> {
    let bytes_per = (T::PRECISION.bits() / 8) as usize;
    let mut out = Vec::with_capacity(HEADER + 8 * tensor.rank() + bytes_per * tensor.numel());
    out.extend_from_slice(&DUMP_MAGIC);
    out.push(T::PRECISION.bits());
    out.push(u8::try_from(tensor.rank()).expect("rank fits in one byte"));
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in tensor.data() {
        x.write_le(&mut out);
    }
    out
}

/// Decodes a dump; `what` names the blob in error messages.
pub fn read_tensor<T: Real>(bytes: &[u8], what: &str) -> Result<Tensor<T>> {
    let bad = |msg: String| Error::Integrity(format!("{what}: {msg}"));
    if bytes.len() < HEADER {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if bytes[..8] != DUMP_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let precision =
        Precision::from_bits(bytes[8]).ok_or_else(|| bad(format!("unknown precision byte {}", bytes[8])))?;
    if precision != T::PRECISION {
        return Err(bad(format!("stored as {precision:?}, requested {:?}", T::PRECISION)));
    }
    let rank = bytes[9] as usize;
    let dims_end = HEADER + 8 * rank;
    if bytes.len() < dims_end {
        return Err(bad("truncated dimension list".into()));
    }
    let shape: Vec<usize> = bytes[HEADER..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
        .collect();
    if shape.contains(&0) {
        return Err(bad(format!("zero-sized dimension in {shape:?}")));
    }
    let bytes_per = (precision.bits() / 8) as usize;
    let expected = numel(&shape) * bytes_per;
    let payload = &bytes[dims_end..];
    if payload.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, shape {shape:?} needs {expected}",
            payload.len()
        )));
    }
    let data = payload.chunks_exact(bytes_per).map(T::read_le).collect();
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}
