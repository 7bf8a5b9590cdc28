//! `FSEQ` feature files: magic, then little-endian `u32` version, frames and
//! dimension, then `frames * dim` little-endian `f32` values, frame-major.

use std::path::Path;

use ndarray::Array2;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSEQ";
pub const VERSION: u32 = 1;
const HEADER: usize = 16;

pub fn encode_features(features: &Array2<f32>) -> Result<Vec<u8>> {
    let (t, d) = features.dim();
    let (t32, d32) = match (u32::try_from(t), u32::try_from(d)) {
        (Ok(t), Ok(d)) if t > 0 && d > 0 => (t, d),
        _ => return Err(Error::Shape(format!("cannot encode a {t}x{d} feature sequence"))),
    };
    let mut out = Vec::with_capacity(HEADER + 4 * t * d);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, t32, d32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    // iter() walks logical row-major order whatever the memory layout
    for v in features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses an in-memory `FSEQ` image; `path` only labels errors.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Array2<f32>> {
    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "FSEQ",
        });
    }
    if bytes.len() < HEADER {
        return Err(truncated(HEADER as u64));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let version = word(1);
    if version != VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let (t, d) = (word(2) as usize, word(3) as usize);
    if t == 0 || d == 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("empty {t}x{d} feature sequence"),
        });
    }
    let payload = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::Overflow {
            path: path.to_path_buf(),
            detail: format!("{t} frames x {d} dims does not fit in memory"),
        })?;
    if bytes.len() < payload {
        return Err(truncated(payload as u64));
    }
    if bytes.len() > payload {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes after payload", bytes.len() - payload),
        });
    }
    let values = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((t, d), values).expect("length checked"))
}

pub fn write_features(path: &Path, features: &Array2<f32>) -> Result<()> {
    let bytes = encode_features(features)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Array2<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.fseq")
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f32 - 2.3) * (j as f32 + 0.7).sin() * 1e-3);
        let mut y = x.clone();
        y[[0, 0]] = f32::MIN_POSITIVE / 3.0;
        y[[1, 1]] = -0.0;
        let back = decode_features(&encode_features(&y).unwrap(), p()).unwrap();
        assert!(back.iter().zip(y.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        // transposed (column-major) storage encodes in logical order
        let t = x.t().to_owned().reversed_axes();
        assert_eq!(encode_features(&t).unwrap(), encode_features(&x).unwrap());
    }

    #[test]
    fn header_errors_are_distinct() {
        let good = encode_features(&Array2::ones((2, 2))).unwrap();
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_features(&bad, p()), Err(Error::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_features(&bad, p()), Err(Error::BadVersion { found: 2, .. })));
        let short = &good[..good.len() - 4];
        assert!(matches!(decode_features(short, p()), Err(Error::Truncated { .. })));
        let mut huge = good[..HEADER].to_vec();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_features(&huge, p()), Err(Error::Overflow { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_features(&long, p()), Err(Error::Malformed { .. })));
    }
}
