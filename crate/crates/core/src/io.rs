//! Shared binary layout helpers: a single JSON header line followed by raw
//! little-endian `f32` arrays.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn push_f32<I: IntoIterator<Item = f64>>(buf: &mut Vec<u8>, values: I) {
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn push_f32_raw(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decode `count` floats starting at float index `offset`.
pub fn read_f32(payload: &[u8], offset: usize, count: usize) -> Result<Vec<f32>> {
    let start = offset * 4;
    let end = start + count * 4;
    if end > payload.len() {
        return Err(Error::format(format!(
            "payload truncated: need {end} bytes, have {}",
            payload.len()
        )));
    }
    Ok(payload[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_header_file<H: Serialize>(header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode_header_file<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("missing header line"))?;
    let header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::format(format!("bad header: {e}")))?;
    Ok((header, &bytes[nl + 1..]))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload_split() {
        let mut payload = Vec::new();
        push_f32(&mut payload, [1.5, -2.0]);
        let bytes = encode_header_file(&serde_json::json!({"n": 2}), &payload).unwrap();
        let (h, p): (serde_json::Value, _) = decode_header_file(&bytes).unwrap();
        assert_eq!(h["n"], 2);
        assert_eq!(read_f32(p, 0, 2).unwrap(), vec![1.5, -2.0]);
        assert!(read_f32(p, 1, 2).is_err());
    }
}
