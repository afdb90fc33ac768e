//! On-disk embedding store: one TSV file per namespace plus a manifest.
//!
//! Vector files hold `orig_user_id TAB base64(row-major little-endian
//! scalars)` — base64 of the raw bytes, so a write/read round trip is exact
//! to the bit. The manifest records the vector dimension, scalar type,
//! count, the data horizon the embeddings reflect, the SHA-256 of the
//! checkpoint they came from, and the full config echo.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::scalar::{Dtype, Scalar};

/// In-memory view of one namespace, keyed by original user id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T: Scalar> {
    pub dim: usize,
    pub vectors: BTreeMap<i64, Vec<T>>,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore { dim, vectors: BTreeMap::new() }
    }

    pub fn insert(&mut self, user: i64, vec: Vec<T>) {
        assert_eq!(vec.len(), self.dim, "vector dimension mismatch");
        self.vectors.insert(user, vec);
    }

    pub fn get(&self, user: i64) -> Option<&[T]> {
        self.vectors.get(&user).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Writes all vectors, ascending by user id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# user\tvector_base64\n");
        for (user, vec) in &self.vectors {
            let mut bytes = Vec::with_capacity(vec.len() * T::BYTES);
            for &v in vec {
                v.write_le(&mut bytes);
            }
            out.push_str(&format!("{user}\t{}\n", B64.encode(&bytes)));
        }
        atomic_write(path, out.as_bytes())
    }

    /// Reads a namespace file; every vector must decode to `dim` scalars.
    pub fn read(path: &Path, dim: usize) -> Result<EmbeddingStore<T>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut store = EmbeddingStore::new(dim);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (user_s, b64) = line
                .split_once('\t')
                .ok_or_else(|| err("expected 'user<TAB>vector'".into()))?;
            let user: i64 =
                user_s.trim().parse().map_err(|_| err(format!("bad user id '{user_s}'")))?;
            let bytes = B64
                .decode(b64.trim())
                .map_err(|e| err(format!("bad base64 payload: {e}")))?;
            if bytes.len() != dim * T::BYTES {
                return Err(err(format!(
                    "vector has {} bytes, expected {} ({} x {})",
                    bytes.len(),
                    dim * T::BYTES,
                    dim,
                    T::BYTES
                )));
            }
            let vec: Vec<T> = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
            store.vectors.insert(user, vec);
        }
        Ok(store)
    }
}

/// Descriptive metadata written next to the namespace files.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreManifest {
    pub dim: usize,
    pub dtype: Dtype,
    pub count: usize,
    /// Largest event timestamp the embeddings reflect.
    pub as_of: i64,
    pub checkpoint_sha256: String,
    /// Config echo of the producing run, key by key.
    pub config: BTreeMap<String, String>,
}

impl StoreManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("dim\t{}\n", self.dim));
        out.push_str(&format!("dtype\t{}\n", self.dtype));
        out.push_str(&format!("count\t{}\n", self.count));
        out.push_str(&format!("as_of\t{}\n", self.as_of));
        out.push_str(&format!("checkpoint_sha256\t{}\n", self.checkpoint_sha256));
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k}\t{v}\n"));
        }
        atomic_write(path, out.as_bytes())
    }

    pub fn read(path: &Path) -> Result<StoreManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        let mut config = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected 'key<TAB>value'".into(),
            })?;
            if let Some(ck) = k.strip_prefix("config.") {
                config.insert(ck.to_string(), v.to_string());
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| {
            fields.get(k).cloned().ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                msg: format!("manifest key '{k}' missing"),
            })
        };
        let bad = |k: &str, v: &str| Error::Format {
            path: path.to_path_buf(),
            msg: format!("manifest key '{k}' has bad value '{v}'"),
        };
        let dim_s = get("dim")?;
        let dtype_s = get("dtype")?;
        let count_s = get("count")?;
        let as_of_s = get("as_of")?;
        Ok(StoreManifest {
            dim: dim_s.parse().map_err(|_| bad("dim", &dim_s))?,
            dtype: Dtype::parse(&dtype_s).ok_or_else(|| bad("dtype", &dtype_s))?,
            count: count_s.parse().map_err(|_| bad("count", &count_s))?,
            as_of: as_of_s.parse().map_err(|_| bad("as_of", &as_of_s))?,
            checkpoint_sha256: get("checkpoint_sha256")?,
            config,
        })
    }
}
