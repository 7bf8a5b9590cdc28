//! Binary checkpoints: magic `SSTC`, little-endian `u32` version, the model
//! configuration as length-prefixed JSON, then every parameter as a
//! length-prefixed UTF-8 name, `u32` rows and columns, and `f32` values.

use std::path::Path;

use ndarray::Array2;

use crate::model::{Model, ModelConfig};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSTC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in a checkpoint")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config()).expect("plain struct");
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(&config);
    put_u32(&mut out, model.params().len())?;
    for p in model.params().iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.nrows())?;
        put_u32(&mut out, p.value.ncols())?;
        for v in p.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Truncated {
            path: self.path.to_path_buf(),
            expected: self.pos as u64 + n as u64,
            found: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn malformed(&self, detail: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Model<f32>> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SSTC",
        });
    }
    let mut r = Reader { bytes, pos: 4, path };
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let n = r.u32()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)
        .map_err(|e| r.malformed(format!("bad configuration: {e}")))?;
    config.validate().map_err(|e| r.malformed(e.to_string()))?;
    // refuse absurd architectures before sizing or allocating them
    let st = &config.stage;
    let widths = [st.filters, st.num_classes, st.kernel, config.input_dim];
    if widths.iter().any(|&w| w > 1 << 20) || st.layers > 30 || config.num_stages > 1024 {
        return Err(r.malformed("architecture is implausibly large"));
    }
    let declared = config.parameter_count();
    if declared.saturating_mul(4) > bytes.len() {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: declared as u64 * 4,
            found: bytes.len() as u64,
        });
    }
    let mut model = Model::<f32>::new(config, 0)?;
    let count = r.u32()?;
    if count != model.params().len() {
        return Err(r.malformed(format!(
            "{count} parameters stored, architecture has {}",
            model.params().len()
        )));
    }
    for p in model.params_mut().iter_mut() {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| r.malformed("parameter name is not UTF-8"))?;
        if name != p.name {
            return Err(r.malformed(format!("expected parameter {}, found {name}", p.name)));
        }
        let (rows, cols) = (r.u32()?, r.u32()?);
        if (rows, cols) != p.value.dim() {
            return Err(r.malformed(format!("parameter {name} is {rows}x{cols}, expected {:?}", p.value.dim())));
        }
        let raw = r.take(rows * cols * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(r.malformed(format!("parameter {name} has non-finite values")));
        }
        p.value = Array2::from_shape_vec((rows, cols), values).expect("length checked");
    }
    if r.pos != bytes.len() {
        return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StageConfig;

    fn small() -> Model<f32> {
        let cfg = ModelConfig {
            num_stages: 2,
            da_stages: vec![2],
            stage: StageConfig {
                layers: 2,
                filters: 4,
                kernel: 3,
                num_classes: 3,
            },
            input_dim: 5,
            segment_count: 2,
        };
        Model::new(cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small();
        let bytes = encode_checkpoint(&m).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("c")).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = encode_checkpoint(&small()).unwrap();
        let p = Path::new("c");
        assert!(matches!(decode_checkpoint(b"NOPE", p), Err(Error::BadMagic { .. })));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(decode_checkpoint(&v, p), Err(Error::BadVersion { .. })));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1], p), Err(Error::Truncated { .. })));
        let mut v = bytes.clone();
        v.push(0);
        assert!(matches!(decode_checkpoint(&v, p), Err(Error::Malformed { .. })));
    }
}
