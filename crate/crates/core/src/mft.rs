//! MFT1 binary tensor files.
//!
//! Layout: magic `MFT1`, one `u8` rank, `rank` little-endian `u32`
//! dimensions, then the row-major little-endian `f32` payload. No padding.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MFT1";

pub fn encode(tensor: &Tensor) -> Result<Vec<u8>> {
    let rank = u8::try_from(tensor.rank())
        .map_err(|_| Error::InvalidTensor(format!("rank {} exceeds 255", tensor.rank())))?;
    let mut out = Vec::with_capacity(5 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.push(rank);
    for &d in tensor.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidTensor(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a complete MFT1 buffer; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut cursor = bytes;
    let mut magic = [0u8; 4];
    cursor
        .read_exact(&mut magic)
        .map_err(|_| "truncated header".to_string())?;
    if &magic != MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let mut rank = [0u8; 1];
    cursor
        .read_exact(&mut rank)
        .map_err(|_| "truncated header".to_string())?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 4];
        cursor
            .read_exact(&mut d)
            .map_err(|_| "truncated shape".to_string())?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("shape overflows")?;
    if cursor.len() != numel * 4 {
        return Err(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            cursor.len(),
            numel * 4
        ));
    }
    let data = cursor
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

pub fn write_tensor(mut w: impl Write, tensor: &Tensor) -> std::io::Result<()> {
    let bytes = encode(tensor).map_err(|e| std::io::Error::other(e.to_string()))?;
    w.write_all(&bytes)
}

pub fn save(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::format(path, msg))
}
