//! Versioned binary container shared by the model checkpoints:
//!
//! ```text
//! magic[8] | version u32 LE | header_len u64 LE | header (JSON) | count u64 LE | count × f64 LE
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

pub fn encode(magic: &[u8; 8], header: &serde_json::Value, payload: &[f64]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 + payload.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn decode(magic: &[u8; 8], bytes: &[u8]) -> Result<(serde_json::Value, Vec<f64>)> {
    let mut at = 0;
    if take(bytes, &mut at, 8)? != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("version {version}, expected {VERSION}")));
    }
    let header_len = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(take(bytes, &mut at, header_len)?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let count = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap()) as usize;
    let raw = take(bytes, &mut at, count.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad count".into()))?)?;
    if at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    let payload = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

pub fn write(path: &Path, magic: &[u8; 8], header: &serde_json::Value, payload: &[f64]) -> Result<()> {
    let bytes = encode(magic, header, payload)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, magic: &[u8; 8]) -> Result<(serde_json::Value, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(magic, &bytes)
}
