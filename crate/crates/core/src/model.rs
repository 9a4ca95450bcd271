//! Named-tensor weight files.
//!
//! ```text
//! "GNNW" | version u8 = 1 | count u32
//! per tensor: name_len u16 | name (utf-8) | rank u8 | dims u32 x rank | f32 x prod(dims)
//! ```
//!
//! All integers and floats are little-endian; data is row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MODEL_MAGIC: [u8; 4] = *b"GNNW";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u8),
    #[error("tensor name {0:?} appears twice")]
    DuplicateName(String),
    #[error("model file size mismatch: {0}")]
    SizeMismatch(String),
    #[error("tensor name is not valid utf-8")]
    BadName,
    #[error("required tensor {0:?} is missing")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor {0:?} cannot be encoded")]
    Unencodable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn from_f64(shape: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Self {
        Self::new(shape, data.into_iter().map(|v| v as f32).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub type TensorMap = BTreeMap<String, Tensor>;

/// Looks up `name` and checks its shape.
pub fn require<'a>(map: &'a TensorMap, name: &str, shape: &[usize]) -> Result<&'a Tensor, ModelError> {
    let t = map
        .get(name)
        .ok_or_else(|| ModelError::MissingTensor(name.to_owned()))?;
    if t.shape != shape {
        return Err(ModelError::ShapeMismatch {
            name: name.to_owned(),
            expected: shape.to_vec(),
            actual: t.shape.clone(),
        });
    }
    Ok(t)
}

pub fn encode_model(tensors: &TensorMap) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(MODEL_VERSION);
    let count = u32::try_from(tensors.len()).map_err(|_| ModelError::Unencodable("<count>".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let bad = || ModelError::Unencodable(name.clone());
        let len = u16::try_from(name.len()).map_err(|_| bad())?;
        let rank = u8::try_from(t.shape.len()).map_err(|_| bad())?;
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(bad());
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in &t.shape {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| bad())?.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::SizeMismatch(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.at,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ModelError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<TensorMap, ModelError> {
    if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let mut c = Cursor { bytes, at: 4 };
    let version = c.u8("version")?;
    if version != MODEL_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let count = c.u32("tensor count")?;
    let mut map = TensorMap::new();
    for _ in 0..count {
        let len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "tensor name")?)
            .map_err(|_| ModelError::BadName)?
            .to_owned();
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let elems = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ModelError::SizeMismatch(format!("tensor {name:?} is too large")))?;
        let raw = c.take(elems, &format!("data of {name:?}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if map.contains_key(&name) {
            return Err(ModelError::DuplicateName(name));
        }
        map.insert(name, Tensor { shape, data });
    }
    if c.at != bytes.len() {
        return Err(ModelError::SizeMismatch(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - c.at
        )));
    }
    Ok(map)
}

pub fn write_model_file(path: &Path, tensors: &TensorMap) -> Result<(), ModelError> {
    fs::write(path, encode_model(tensors)?)?;
    Ok(())
}

pub fn load_model_file(path: &Path) -> Result<TensorMap, ModelError> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> TensorMap {
        TensorMap::from([(
            "mlp.out.b".to_owned(),
            Tensor::new(vec![2], vec![1.5, -0.25]),
        )])
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gnnw");
        write_model_file(&path, &one()).unwrap();
        assert_eq!(load_model_file(&path).unwrap(), one());
    }

    #[test]
    fn layout_of_single_tensor() {
        let bytes = encode_model(&one()).unwrap();
        let mut expect = b"GNNW".to_vec();
        expect.push(1);
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&9u16.to_le_bytes());
        expect.extend_from_slice(b"mlp.out.b");
        expect.push(1);
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.5f32.to_le_bytes());
        expect.extend_from_slice(&(-0.25f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn truncation_is_size_mismatch() {
        let bytes = encode_model(&one()).unwrap();
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 1]),
            Err(ModelError::SizeMismatch(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_model(&long), Err(ModelError::SizeMismatch(_))));
    }

    #[test]
    fn bad_magic_and_duplicates() {
        let mut bytes = encode_model(&one()).unwrap();
        bytes[1] = b'x';
        assert!(matches!(decode_model(&bytes), Err(ModelError::BadMagic)));

        let single = encode_model(&one()).unwrap();
        let body = &single[9..];
        let mut dup = single[..5].to_vec();
        dup.extend_from_slice(&2u32.to_le_bytes());
        dup.extend_from_slice(body);
        dup.extend_from_slice(body);
        assert!(matches!(decode_model(&dup), Err(ModelError::DuplicateName(n)) if n == "mlp.out.b"));
    }

    #[test]
    fn require_reports_missing_and_shape() {
        let m = one();
        assert!(matches!(require(&m, "gnn.l1.k0.H", &[1]), Err(ModelError::MissingTensor(n)) if n == "gnn.l1.k0.H"));
        assert!(matches!(require(&m, "mlp.out.b", &[3]), Err(ModelError::ShapeMismatch { .. })));
        assert!(require(&m, "mlp.out.b", &[2]).is_ok());
    }
}
