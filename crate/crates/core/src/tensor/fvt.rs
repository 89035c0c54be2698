//! Raw `.fvt` tensor files: `FVT1`, four little-endian `u32` extents
//! `(n, c, h, w)`, then the data as little-endian `f32`.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

pub const FVT_MAGIC: &[u8; 4] = b"FVT1";

pub fn write_fvt(tensor: &Tensor) -> Result<Vec<u8>> {
    let shape = tensor.shape();
    let mut out = Vec::with_capacity(20 + 4 * tensor.len());
    out.extend_from_slice(FVT_MAGIC);
    for extent in shape.as_array() {
        let extent = u32::try_from(extent)
            .map_err(|_| Error::Config(format!("extent {extent} does not fit in u32")))?;
        out.extend_from_slice(&extent.to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_fvt(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != FVT_MAGIC {
        return Err(Error::BadMagic { expected: "FVT1" });
    }
    if bytes.len() < 20 {
        return Err(Error::Truncated {
            what: "fvt header".into(),
        });
    }
    let mut extents = [0usize; 4];
    for (i, e) in extents.iter_mut().enumerate() {
        let at = 4 + 4 * i;
        *e = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    }
    let shape = Shape::new(extents[0], extents[1], extents[2], extents[3]);
    let payload = &bytes[20..];
    let expected = shape
        .len()
        .checked_mul(4)
        .ok_or_else(|| Error::Format(format!("fvt shape {shape} too large")))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            what: format!("fvt payload for {shape}"),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after fvt payload",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}
