//! Binary sample files: a 16-byte header (`SCMM`, version, C, F as u32 LE)
//! followed by C*F little-endian f32 values, channel-major.

use std::fs;
use std::path::Path;

use scmm_core::signal::FeatureMatrix;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SCMM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Serializes a matrix. Values are narrowed to f32; non-finite values are refused.
pub fn encode_sample(m: &FeatureMatrix) -> std::result::Result<Vec<u8>, String> {
    if !m.is_finite() {
        return Err("matrix contains non-finite values".into());
    }
    let c = u32::try_from(m.channels()).map_err(|_| "channel count exceeds u32".to_string())?;
    let f = u32::try_from(m.bands()).map_err(|_| "band count exceeds u32".to_string())?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.values().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    out.extend_from_slice(&f.to_le_bytes());
    for &v in m.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_sample(bytes: &[u8]) -> std::result::Result<FeatureMatrix, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!(
            "truncated header: expected {HEADER_LEN} bytes, found {}",
            bytes.len()
        ));
    }
    if bytes[..4] != MAGIC {
        return Err(format!("bad magic {:?}, expected \"SCMM\"", &bytes[..4]));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(format!("unsupported version {version}, expected {VERSION}"));
    }
    let (c, f) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    let expected = c
        .checked_mul(f)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| format!("shape {c}x{f} overflows"))?;
    if bytes.len() != expected {
        return Err(format!(
            "payload length mismatch: expected {expected} bytes for {c}x{f}, found {}",
            bytes.len()
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    FeatureMatrix::new(c, f, values).map_err(|e| e.to_string())
}

pub fn store_sample(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let bytes = encode_sample(m).map_err(|d| Error::format(path, d))?;
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn load_sample(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_sample(&bytes).map_err(|d| Error::format(path, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let b = encode_sample(&m).unwrap();
        assert_eq!(&b[..4], b"SCMM");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 24);
        assert_eq!(&b[36..40], &6.5f32.to_le_bytes());
    }

    #[test]
    fn shape_overflow_is_rejected() {
        let mut b = b"SCMM".to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        let e = decode_sample(&b).unwrap_err();
        assert!(e.contains("mismatch") || e.contains("overflow"), "{e}");
    }
}
