//! Flat named-tensor archive: a JSON header describing dtype/shape/offsets,
//! followed by raw little-endian data. Used for backbone weights and for
//! prompt-state checkpoints.

use crate::BackboneError;
use ndarray::IxDyn;
use rsprompt_tensor::{Arr, Scalar};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"RSWT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: BTreeMap<String, TensorEntry>,
    /// Free-form metadata carried alongside the tensors.
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

/// In-memory named-tensor collection (f32 storage).
#[derive(Debug, Clone, Default)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, Arr<f32>>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Arr<f32>) {
        self.tensors.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Arr<f32>, BackboneError> {
        self.tensors
            .get(name)
            .ok_or_else(|| BackboneError::MissingTensor(name.to_string()))
    }

    /// Fetch and shape-check a tensor.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&Arr<f32>, BackboneError> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(BackboneError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                got: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), BackboneError> {
        let mut entries = BTreeMap::new();
        let mut data: Vec<u8> = Vec::new();
        for (name, tensor) in &self.tensors {
            let offset = data.len() as u64;
            let std = tensor
                .as_standard_layout();
            for v in std.iter() {
                data.extend_from_slice(&v.to_le_bytes());
            }
            entries.insert(
                name.clone(),
                TensorEntry {
                    dtype: "f32".into(),
                    shape: tensor.shape().to_vec(),
                    offset,
                    byte_len: data.len() as u64 - offset,
                },
            );
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            metadata: self.metadata.clone(),
        })?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        out.write_all(&data)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, BackboneError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(BackboneError::Archive(format!(
                "{}: bad magic, not a tensor archive",
                path.display()
            )));
        }
        let mut word = [0u8; 4];
        file.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(BackboneError::Archive(format!(
                "unsupported archive version {version}"
            )));
        }
        let mut len8 = [0u8; 8];
        file.read_exact(&mut len8)?;
        let header_len = u64::from_le_bytes(len8) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;

        let mut tensors = BTreeMap::new();
        for (name, entry) in header.tensors {
            if entry.dtype != "f32" {
                return Err(BackboneError::Archive(format!(
                    "{name}: unsupported dtype {}",
                    entry.dtype
                )));
            }
            let start = entry.offset as usize;
            let end = start + entry.byte_len as usize;
            let slice = data.get(start..end).ok_or_else(|| {
                BackboneError::Archive(format!("{name}: data range out of bounds"))
            })?;
            let count: usize = entry.shape.iter().product();
            if count * 4 != slice.len() {
                return Err(BackboneError::Archive(format!(
                    "{name}: byte length {} does not match shape {:?}",
                    slice.len(),
                    entry.shape
                )));
            }
            let values: Vec<f32> = slice
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(
                name,
                Arr::from_shape_vec(IxDyn(&entry.shape), values)
                    .map_err(|e| BackboneError::Archive(e.to_string()))?,
            );
        }
        Ok(TensorArchive {
            tensors,
            metadata: header.metadata,
        })
    }
}

/// Content digest over named tensors: SHA-256 of `name | shape | le-bytes`
/// in name order. Stable across loads of identical content.
pub fn digest_tensors<T: Scalar>(tensors: impl Iterator<Item = (String, Arr<T>)>) -> String {
    use sha2::{Digest, Sha256};
    let sorted: BTreeMap<String, Arr<T>> = tensors.collect();
    let mut hasher = Sha256::new();
    for (name, tensor) in sorted {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for d in tensor.shape() {
            hasher.update((*d as u64).to_le_bytes());
        }
        let std = tensor.as_standard_layout();
        for v in std.iter() {
            // f32 and f64 hash differently by construction: width differs
            let as64 = v.to_f64().unwrap_or(f64::NAN);
            if std::mem::size_of::<T>() == 4 {
                hasher.update((as64 as f32).to_le_bytes());
            } else {
                hasher.update(as64.to_le_bytes());
            }
        }
    }
    hex(&hasher.finalize())
}

/// SHA-256 of arbitrary bytes as lowercase hex.
pub fn digest_bytes(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
