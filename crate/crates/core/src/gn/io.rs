//! Binary weight files.
//!
//! Layout: magic `BGNW`, format version (u32 LE), manifest length (u32 LE),
//! manifest JSON, then every tensor in manifest order as little-endian
//! values of the manifest dtype.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{GraphNetWeights, ModelConfig};
use super::real::Real;
use crate::error::{Error, Result};
use crate::vocab::{ActionLabel, ObjectClass, RelationKind};

pub const MAGIC: &[u8; 4] = b"BGNW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dtype: String,
    pub config: ModelConfig,
    pub actions: Vec<String>,
    pub objects: Vec<String>,
    pub relations: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn for_config<T: Real>(config: ModelConfig) -> Self {
        Manifest {
            dtype: T::DTYPE.to_string(),
            config,
            actions: ActionLabel::tokens().iter().map(|s| s.to_string()).collect(),
            objects: ObjectClass::tokens().iter().map(|s| s.to_string()).collect(),
            relations: RelationKind::tokens().iter().map(|s| s.to_string()).collect(),
            tensors: config
                .tensor_shapes()
                .into_iter()
                .map(|(name, shape)| TensorEntry { name, shape })
                .collect(),
        }
    }
}

pub fn encode_weights<T: Real>(w: &GraphNetWeights<T>) -> Vec<u8> {
    let manifest = serde_json::to_vec(&Manifest::for_config::<T>(w.config)).expect("manifest serializes");
    let mut out = Vec::with_capacity(12 + manifest.len() + w.parameter_count() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for v in w.to_flat() {
        v.write_le(&mut out);
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Schema("weight file truncated in header".into()))
}

/// Parse the manifest without reading the tensors.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, usize)> {
    if bytes.get(0..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Schema("not a weight file (bad magic)".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != FORMAT_VERSION {
        return Err(Error::ManifestMismatch(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let len = read_u32(bytes, 8)? as usize;
    let body = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Schema("weight file truncated in manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(body).map_err(|e| Error::Schema(format!("weight manifest: {e}")))?;
    Ok((manifest, 12 + len))
}

/// Decode a weight file, refusing any manifest that differs from what this
/// build expects (dtype, orderings, tensor names or shapes, and `expected`
/// when given).
pub fn decode_weights<T: Real>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<GraphNetWeights<T>> {
    let (manifest, offset) = read_manifest(bytes)?;
    manifest.config.validate().map_err(|e| Error::ManifestMismatch(e.to_string()))?;
    if let Some(cfg) = expected {
        if *cfg != manifest.config {
            return Err(Error::ManifestMismatch(format!(
                "model config {:?} differs from expected {:?}",
                manifest.config, cfg
            )));
        }
    }
    let reference = Manifest::for_config::<T>(manifest.config);
    if manifest.dtype != reference.dtype {
        return Err(Error::ManifestMismatch(format!("dtype {} but loading as {}", manifest.dtype, T::DTYPE)));
    }
    for (field, got, want) in [
        ("action", &manifest.actions, &reference.actions),
        ("object", &manifest.objects, &reference.objects),
        ("relation", &manifest.relations, &reference.relations),
    ] {
        if got != want {
            return Err(Error::ManifestMismatch(format!("{field} ordering differs")));
        }
    }
    if manifest.tensors != reference.tensors {
        return Err(Error::ManifestMismatch("tensor names or shapes differ".into()));
    }
    let mut w = GraphNetWeights::<T>::zeros(manifest.config);
    let count = w.parameter_count();
    let data = &bytes[offset..];
    if data.len() != count * T::BYTES {
        return Err(Error::Schema(format!(
            "weight data has {} bytes, expected {}",
            data.len(),
            count * T::BYTES
        )));
    }
    let values: Vec<T> = data.chunks_exact(T::BYTES).map(T::read_le).collect();
    w.set_flat(&values);
    Ok(w)
}

pub fn save_weights<T: Real>(w: &GraphNetWeights<T>, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_weights(w))
}

pub fn load_weights<T: Real>(path: &Path, expected: Option<&ModelConfig>) -> Result<GraphNetWeights<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, expected)
}
