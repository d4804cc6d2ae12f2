//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor's raw little-endian data in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"VOXFACE\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    dtype: String,
    arch: Value,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

/// Checkpoint contents with tensors widened to `f64` (lossless for `f32`).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub dtype: String,
    pub arch: Value,
    pub meta: Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let (_, shape, data) = self
            .tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))?;
        Tensor::from_f64(shape, data)
    }

    pub fn named<T: Scalar>(&self) -> Result<Vec<(String, Tensor<T>)>> {
        self.tensors
            .iter()
            .map(|(n, s, d)| Ok((n.clone(), Tensor::from_f64(s, d)?)))
            .collect()
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(NnError::ArchMismatch(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)))
        }
    }
}

/// Writes `tensors` (which must be `f32` or `f64`) with JSON metadata.
pub fn save<T: Scalar>(
    path: &Path,
    kind: &str,
    arch: &Value,
    meta: &Value,
    tensors: &[(String, &Tensor<T>)],
) -> Result<()> {
    let width = match T::DTYPE {
        "f32" => 4,
        "f64" => 8,
        other => return Err(NnError::Malformed(format!("cannot store dtype {other}"))),
    };
    let header = Header {
        kind: kind.to_string(),
        dtype: T::DTYPE.to_string(),
        arch: arch.clone(),
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in tensors {
        for &v in t.data() {
            if width == 4 {
                w.write_all(&(v.re() as f32).to_le_bytes())?;
            } else {
                w.write_all(&v.re().to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| NnError::Malformed("file too short".into()))?;
    if &magic != MAGIC {
        return Err(NnError::Malformed("bad magic bytes".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hlen = u64::from_le_bytes(b8) as usize;
    if hlen > 1 << 28 {
        return Err(NnError::Malformed("header length out of range".into()));
    }
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)
        .map_err(|_| NnError::Malformed("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&hbuf)?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(NnError::Malformed(format!("unknown dtype {other}"))),
    };
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw)
            .map_err(|_| NnError::Malformed(format!("truncated data for `{}`", e.name)))?;
        let data = if width == 4 {
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        tensors.push((e.name, e.shape, data));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NnError::Malformed("trailing bytes".into()));
    }
    Ok(Checkpoint {
        kind: header.kind,
        dtype: header.dtype,
        arch: header.arch,
        meta: header.meta,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let a = Tensor::<f32>::new(&[2, 3], vec![0.1, -2.5, 3.0e-8, 1e30, -0.0, 7.0]);
        let b = Tensor::<f32>::new(&[1], vec![f32::MIN_POSITIVE]);
        save(&path, "toy", &json!({"w": 3}), &json!({}), &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let ck = load(&path).unwrap();
        assert_eq!(ck.kind, "toy");
        assert_eq!(ck.arch["w"], 3);
        let a2: Tensor<f32> = ck.tensor("a").unwrap();
        let b2: Tensor<f32> = ck.tensor("b").unwrap();
        assert!(a.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(b, b2);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let t = Tensor::<f64>::zeros(&[1]);
        save(&path, "toy", &json!(null), &json!(null), &[("t".into(), &t)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(NnError::VersionMismatch { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let t = Tensor::<f64>::zeros(&[4]);
        save(&path, "toy", &json!(null), &json!(null), &[("t".into(), &t)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(&path), Err(NnError::Malformed(_))));
    }
}
