//! Directory container: one `manifest.json` plus little-endian binary blobs
//! holding named, shaped arrays.
//!
//! Each blob starts with a 16-byte header (`b"HOIB"`, `u32` schema version,
//! `u64` payload length) followed by the arrays in manifest order. The
//! manifest records every array's dtype, shape, byte offset and the SHA-256
//! of each payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const MAGIC: &[u8; 4] = b"HOIB";
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest is not valid: {0}")]
    Manifest(String),
    #[error("schema version mismatch in {location}: found {found}, expected {expected}")]
    SchemaVersion {
        location: String,
        found: u32,
        expected: u32,
    },
    #[error("blob `{blob}` has a corrupted header field `{field}`")]
    Header { blob: String, field: &'static str },
    #[error("blob `{blob}` is truncated: expected {expected} payload bytes, found {found}")]
    Truncated {
        blob: String,
        expected: usize,
        found: usize,
    },
    #[error("array `{array}` shape {shape:?} does not match its {nbytes} stored bytes")]
    ShapeMismatch {
        array: String,
        shape: Vec<usize>,
        nbytes: usize,
    },
    #[error("blob `{blob}` payload checksum mismatch")]
    Checksum { blob: String },
    #[error("missing array `{0}`")]
    MissingArray(String),
    #[error("array `{array}`: {reason}")]
    Content { array: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    I32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
            ArrayData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => ArrayData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => ArrayData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I32 => ArrayData::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: ArrayData) -> Self {
        let a = Self {
            name: name.into(),
            shape,
            data,
        };
        assert_eq!(
            a.shape.iter().product::<usize>(),
            a.data.len(),
            "array `{}` shape does not match data length",
            a.name
        );
        a
    }

    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self::new(name, shape, ArrayData::F32(data))
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self::new(name, shape, ArrayData::F64(data))
    }

    pub fn i32(name: impl Into<String>, shape: Vec<usize>, data: Vec<i32>) -> Self {
        Self::new(name, shape, ArrayData::I32(data))
    }

    /// Values widened to `f64` (exact for every stored dtype).
    pub fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
            ArrayData::I32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32], LoadError> {
        match &self.data {
            ArrayData::I32(v) => Ok(v),
            _ => Err(LoadError::Content {
                array: self.name.clone(),
                reason: "expected int32 data".into(),
            }),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ArraySpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BlobSpec {
    pub file: String,
    pub payload_bytes: usize,
    pub sha256: String,
    pub arrays: Vec<ArraySpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub blobs: BTreeMap<String, BlobSpec>,
}

/// In-memory form of a container: metadata plus named blobs of arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blobs: BTreeMap<String, Vec<NamedArray>>,
}

impl Archive {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            blobs: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, blob: &str, array: NamedArray) {
        self.blobs.entry(blob.to_string()).or_default().push(array);
    }

    pub fn blob(&self, blob: &str) -> Option<&[NamedArray]> {
        self.blobs.get(blob).map(Vec::as_slice)
    }

    pub fn array(&self, blob: &str, name: &str) -> Result<&NamedArray, LoadError> {
        self.blobs
            .get(blob)
            .and_then(|arrays| arrays.iter().find(|a| a.name == name))
            .ok_or_else(|| LoadError::MissingArray(format!("{blob}/{name}")))
    }

    fn encode(&self) -> (Manifest, BTreeMap<String, Vec<u8>>) {
        let mut specs = BTreeMap::new();
        let mut files = BTreeMap::new();
        for (blob, arrays) in &self.blobs {
            let mut payload = Vec::new();
            let mut array_specs = Vec::with_capacity(arrays.len());
            for a in arrays {
                let offset = payload.len();
                a.data.write_le(&mut payload);
                array_specs.push(ArraySpec {
                    name: a.name.clone(),
                    dtype: a.data.dtype(),
                    shape: a.shape.clone(),
                    offset,
                    nbytes: payload.len() - offset,
                });
            }
            let file = format!("{}.bin", blob.replace('/', "_"));
            let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len());
            bytes.extend_from_slice(MAGIC);
            bytes.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
            bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            bytes.extend_from_slice(&payload);
            specs.insert(
                blob.clone(),
                BlobSpec {
                    file: file.clone(),
                    payload_bytes: payload.len(),
                    sha256: hex::encode(Sha256::digest(&payload)),
                    arrays: array_specs,
                },
            );
            files.insert(file, bytes);
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            blobs: specs,
        };
        (manifest, files)
    }

    /// Manifest text as it would be written; stable for identical content.
    pub fn manifest_json(&self) -> String {
        let (manifest, _) = self.encode();
        serde_json::to_string_pretty(&manifest).expect("manifest serializes")
    }

    pub fn manifest_digest(&self) -> String {
        hex::encode(Sha256::digest(self.manifest_json().as_bytes()))
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let (manifest, files) = self.encode();
        for (file, bytes) in files {
            fs::write(dir.join(file), bytes)?;
        }
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_FILE), text)
    }

    pub fn read(dir: &Path) -> Result<Self, LoadError> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|source| LoadError::Io {
            path: mpath.clone(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| LoadError::Manifest(e.to_string()))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(LoadError::SchemaVersion {
                location: MANIFEST_FILE.into(),
                found: manifest.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut blobs = BTreeMap::new();
        for (blob, spec) in &manifest.blobs {
            let path = dir.join(&spec.file);
            let bytes = fs::read(&path).map_err(|source| LoadError::Io {
                path: path.clone(),
                source,
            })?;
            let payload = decode_header(blob, &bytes, spec.payload_bytes)?;
            if hex::encode(Sha256::digest(payload)) != spec.sha256 {
                return Err(LoadError::Checksum { blob: blob.clone() });
            }
            let mut arrays = Vec::with_capacity(spec.arrays.len());
            for a in &spec.arrays {
                let expected = a.shape.iter().product::<usize>() * a.dtype.size();
                if expected != a.nbytes || a.offset + a.nbytes > payload.len() {
                    return Err(LoadError::ShapeMismatch {
                        array: a.name.clone(),
                        shape: a.shape.clone(),
                        nbytes: a.nbytes,
                    });
                }
                let data = ArrayData::read_le(a.dtype, &payload[a.offset..a.offset + a.nbytes]);
                arrays.push(NamedArray {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    data,
                });
            }
            blobs.insert(blob.clone(), arrays);
        }
        Ok(Self {
            kind: manifest.kind,
            meta: manifest.meta,
            blobs,
        })
    }
}

fn decode_header<'a>(blob: &str, bytes: &'a [u8], declared: usize) -> Result<&'a [u8], LoadError> {
    if bytes.len() < HEADER_LEN {
        return Err(LoadError::Truncated {
            blob: blob.into(),
            expected: HEADER_LEN + declared,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(LoadError::Header {
            blob: blob.into(),
            field: "magic",
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SCHEMA_VERSION {
        return Err(LoadError::SchemaVersion {
            location: format!("blob `{blob}` header"),
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if len != declared {
        return Err(LoadError::Header {
            blob: blob.into(),
            field: "payload_len",
        });
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(LoadError::Truncated {
            blob: blob.into(),
            expected: len,
            found: payload.len(),
        });
    }
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new("test", serde_json::json!({"n": 3}));
        a.push("train", NamedArray::f32("x", vec![2, 2], vec![1.0, -0.5, 3.25, f32::MIN_POSITIVE]));
        a.push("train", NamedArray::i32("ids", vec![3], vec![1, -2, 7]));
        a.push("ckpt", NamedArray::f64("w", vec![1, 2], vec![0.1, 1e-300]));
        a
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = sample();
        a.write(dir.path()).unwrap();
        assert_eq!(Archive::read(dir.path()).unwrap(), a);
    }

    #[test]
    fn corrupted_magic_names_field() {
        let dir = tempfile::tempdir().unwrap();
        sample().write(dir.path()).unwrap();
        let p = dir.path().join("train.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[1] ^= 0xff;
        fs::write(&p, bytes).unwrap();
        let err = Archive::read(dir.path()).unwrap_err();
        assert!(matches!(err, LoadError::Header { field: "magic", .. }), "{err}");
    }

    #[test]
    fn corrupted_length_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        sample().write(dir.path()).unwrap();
        let p = dir.path().join("train.bin");
        let orig = fs::read(&p).unwrap();

        let mut bytes = orig.clone();
        bytes[8] ^= 0x01;
        fs::write(&p, &bytes).unwrap();
        let err = Archive::read(dir.path()).unwrap_err();
        assert!(matches!(err, LoadError::Header { field: "payload_len", .. }), "{err}");

        fs::write(&p, &orig[..orig.len() - 3]).unwrap();
        let err = Archive::read(dir.path()).unwrap_err();
        assert!(matches!(err, LoadError::Truncated { .. }), "{err}");
    }

    #[test]
    fn schema_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        sample().write(dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mp).unwrap().replace(
            &format!("\"schema_version\": {SCHEMA_VERSION}"),
            "\"schema_version\": 99",
        );
        fs::write(&mp, text).unwrap();
        assert!(matches!(
            Archive::read(dir.path()).unwrap_err(),
            LoadError::SchemaVersion { found: 99, .. }
        ));
    }

    #[test]
    fn shape_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        sample().write(dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&mp).unwrap()).unwrap();
        m.blobs.get_mut("train").unwrap().arrays[0].shape = vec![3, 2];
        fs::write(&mp, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(
            Archive::read(dir.path()).unwrap_err(),
            LoadError::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn payload_corruption_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        sample().write(dir.path()).unwrap();
        let p = dir.path().join("train.bin");
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x10;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            Archive::read(dir.path()).unwrap_err(),
            LoadError::Checksum { .. }
        ));
    }
}
