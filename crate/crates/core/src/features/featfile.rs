//! Binary feature files: `FEAT`, version, rows, cols, frame period (all u32
//! little-endian), then row-major little-endian f32 data.

use std::path::Path;

use super::pipeline::{FeatureSequence, Modality};
use crate::error::{Error, Result};
use crate::substrate::Tensor;

pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub const FEAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.frames.len());
    out.extend_from_slice(FEAT_MAGIC);
    for v in [
        FEAT_VERSION,
        seq.len() as u32,
        seq.width() as u32,
        seq.frame_period_ms,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in seq.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != FEAT_MAGIC {
        return Err(Error::format(path, "bad magic (expected FEAT)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, rows, cols, period) = (word(0), word(1) as usize, word(2) as usize, word(3));
    if version != FEAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version} (this build reads {FEAT_VERSION})"),
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "header says {rows}x{cols} ({expected} bytes) but payload has {} bytes",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let frames = Tensor::from_vec(&[rows, cols], data)?;
    Ok(FeatureSequence::new(frames, period, Modality::Speech))
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    std::fs::write(path, encode_features(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}
