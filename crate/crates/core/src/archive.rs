//! Self-describing binary container shared by trajectory records and
//! checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic      8 bytes   b"SALARCH\0"
//! header_len u32 LE
//! header     JSON: format tag, kind, free-form meta, field table
//! payload    raw little-endian arrays, in field-table order
//! digest     32 bytes  SHA-256 over everything before it
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::FORMAT_VERSION;

const MAGIC: &[u8; 8] = b"SALARCH\0";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    F32,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    meta: serde_json::Value,
    fields: Vec<FieldSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: FieldData,
}

impl Field {
    pub fn u8(name: impl Into<String>, shape: Vec<usize>, data: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: FieldData::U8(data),
        }
    }

    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: FieldData::F32(data),
        }
    }

    fn dtype(&self) -> DType {
        match self.data {
            FieldData::U8(_) => DType::U8,
            FieldData::F32(_) => DType::F32,
        }
    }

    fn len(&self) -> usize {
        match &self.data {
            FieldData::U8(v) => v.len(),
            FieldData::F32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: serde_json::Value,
    pub fields: Vec<Field>,
}

impl Archive {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            fields: Vec::new(),
        }
    }

    pub fn push(&mut self, field: Field) {
        self.fields.push(field);
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for f in &self.fields {
            let n: usize = f.shape.iter().product();
            if n != f.len() {
                return Err(Error::shape(
                    format!("{} elements for field {}", n, f.name),
                    f.len().to_string(),
                ));
            }
        }
        let header = Header {
            format: FORMAT_VERSION.to_string(),
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            fields: self
                .fields
                .iter()
                .map(|f| FieldSpec {
                    name: f.name.clone(),
                    dtype: f.dtype(),
                    shape: f.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(header.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for f in &self.fields {
            match &f.data {
                FieldData::U8(v) => out.extend_from_slice(v),
                FieldData::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses an archive, checking magic, format tag, sizes and digest.
    /// `path` is used only for error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |d: String| Error::format(path, d);
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(err("bad magic or truncated preamble".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12 + hlen;
        if body_start + DIGEST_LEN > bytes.len() {
            return Err(err(format!("truncated header ({hlen} bytes declared)")));
        }
        let header: Header = serde_json::from_slice(&bytes[12..body_start])
            .map_err(|e| err(format!("header parse error: {e}")))?;
        if header.format != FORMAT_VERSION {
            return Err(err(format!(
                "version mismatch: found `{}`, expected `{FORMAT_VERSION}`",
                header.format
            )));
        }
        let payload_len: usize = header
            .fields
            .iter()
            .map(|f| f.shape.iter().product::<usize>() * f.dtype.size())
            .sum();
        let expected = body_start + payload_len + DIGEST_LEN;
        if bytes.len() != expected {
            return Err(err(format!(
                "truncated or oversized file: {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let digest_at = bytes.len() - DIGEST_LEN;
        if Sha256::digest(&bytes[..digest_at]).as_slice() != &bytes[digest_at..] {
            return Err(err("checksum failure".into()));
        }
        let mut at = body_start;
        let mut fields = Vec::with_capacity(header.fields.len());
        for spec in header.fields {
            let n: usize = spec.shape.iter().product();
            let raw = &bytes[at..at + n * spec.dtype.size()];
            at += raw.len();
            let data = match spec.dtype {
                DType::U8 => FieldData::U8(raw.to_vec()),
                DType::F32 => FieldData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            fields.push(Field {
                name: spec.name,
                shape: spec.shape,
                data,
            });
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            fields,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Writes to a sibling temp file, then renames over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new("test", serde_json::json!({"k": 1}));
        a.push(Field::f32("x", vec![2, 2], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE]));
        a.push(Field::u8("img", vec![3], vec![0, 128, 255]));
        a
    }

    #[test]
    fn round_trip() {
        let a = sample();
        let bytes = a.to_bytes().unwrap();
        assert_eq!(Archive::from_bytes(&bytes, Path::new("mem")).unwrap(), a);
    }

    #[test]
    fn every_corrupted_byte_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        for i in 0..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x5a;
            assert!(Archive::from_bytes(&b, Path::new("mem")).is_err(), "byte {i}");
        }
    }

    #[test]
    fn truncation_and_version_errors() {
        let bytes = sample().to_bytes().unwrap();
        let err = Archive::from_bytes(&bytes[..bytes.len() - 5], Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        let mut b = bytes.clone();
        let at = b.windows(6).position(|w| w == b"sal-v1").unwrap();
        b[at + 5] = b'9';
        let err = Archive::from_bytes(&b, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("version mismatch"), "{err}");
    }

    #[test]
    fn shape_mismatch_rejected_on_write() {
        let mut a = Archive::new("t", serde_json::Value::Null);
        a.push(Field::f32("x", vec![3], vec![1.0]));
        assert!(a.to_bytes().is_err());
    }
}
