//! On-disk formats and embedding providers.

mod embfile;
mod manifest;
mod providers;
mod tree_json;

use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::VectorError;

pub use embfile::{
    load_embeddings, load_embeddings_with_dim, read_embeddings_from, write_embedding_map,
    write_embeddings, write_embeddings_to, MAGIC, UNIT_TOLERANCE, VERSION,
};
pub use manifest::{load_labels, DatasetManifest, ManifestItem};
pub use providers::{
    http_embedding_provider, synthetic_provider, CenterLayout, CenterSpec, EmbedError,
    EmbeddingProvider, FileEmbeddingProvider, HttpEmbeddingProvider, SyntheticProvider,
    SyntheticSpec,
};
pub use tree_json::{read_tree, tree_from_json, tree_to_json, write_tree, TREE_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("file ends mid-record")]
    TruncatedFile,
    #[error("malformed file: {0}")]
    Format(String),
    #[error("embedding {id:?} has dim {found}, expected {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding {id:?}: {source}")]
    Vector { id: String, source: VectorError },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("json error: {0}")]
    Json(String),
    #[error("invalid tree: {0}")]
    Tree(String),
}

impl DataError {
    pub fn io_at(path: &Path, e: io::Error) -> Self {
        DataError::Io(format!("{}: {e}", path.display()))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io_at(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| DataError::Json(format!("{}: {e}", path.display())))
}

/// Pretty JSON with object keys in sorted order.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String, DataError> {
    // serde_json::Value maps are BTreeMap-backed, so a round trip sorts keys.
    let v = serde_json::to_value(value).map_err(|e| DataError::Json(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| DataError::Json(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_canonical_json<T: Serialize + ?Sized>(
    path: &Path,
    value: &T,
) -> Result<(), DataError> {
    let text = to_canonical_json(value)?;
    fs::write(path, text).map_err(|e| DataError::io_at(path, e))
}
