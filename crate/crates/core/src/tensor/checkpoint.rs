//! Parameter checkpoint encoding: framed header, then for each tensor its
//! name, rank, dimensions and little-endian `f64` payload.

use super::Tensor;
use crate::binio::{open_versioned, Writer};
use crate::error::FormatError;

pub(crate) const MAGIC: &[u8; 8] = b"HINTTNSR";
pub(crate) const VERSION: u32 = 1;

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let items: Vec<_> = tensors.into_iter().collect();
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(items.len() as u32);
    for (name, t) in items {
        w.str(name);
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        w.f64s(t.data());
    }
    w.finish()
}

pub fn decode_tensors(data: &[u8]) -> Result<Vec<(String, Tensor)>, FormatError> {
    let mut r = open_versioned(data, MAGIC, "tensor checkpoint", VERSION)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.usize()?);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| FormatError::Malformed("shape overflow".into()))?;
        let payload = r.f64s(n)?;
        let t = Tensor::new(&shape, payload).map_err(|e| FormatError::Malformed(e.to_string()))?;
        out.push((name, t));
    }
    r.expect_end()?;
    Ok(out)
}
