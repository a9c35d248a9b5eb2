//! Binary checkpoint files for named tensors.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  b"HMCKPT01"
//! u32    entry count
//! entry: u32 name length, name bytes (utf-8),
//!        u32 rank, u64 per dimension, f64 per value
//! ```
//!
//! Writes go through a temp file in the target directory and a rename, so a
//! crash never leaves a half-written checkpoint behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{NumericError, Tensor};

const MAGIC: &[u8; 8] = b"HMCKPT01";

pub fn save_checkpoint(path: &Path, entries: &[(&str, &Tensor)]) -> Result<(), NumericError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &buf)?;
    Ok(())
}

/// Writes `bytes` to a sibling temp file, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, NumericError> {
    let data = fs::read(path)?;
    let bad = |reason: &str| NumericError::BadCheckpoint {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], NumericError> {
        if *pos + n > data.len() {
            return Err(bad("truncated"));
        }
        let s = &data[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| bad("name is not utf-8"))?
            .to_string();
        let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut total = 1usize;
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            total = total
                .checked_mul(d)
                .ok_or_else(|| bad("dimension overflow"))?;
            shape.push(d);
        }
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        out.push((name, Tensor::from_vec(&shape, values)?));
    }
    if pos != data.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}
