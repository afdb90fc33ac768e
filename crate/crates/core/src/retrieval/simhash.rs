//! Random-hyperplane locality-sensitive hashing over user embeddings.
//!
//! Each of `n_tables` tables hashes a vector to an `n_bits`-bit signature:
//! bit `i` is set when the dot product with the table's `i`-th Gaussian
//! hyperplane is non-negative. Vectors at angle `theta` disagree on each bit
//! with probability `theta / pi`, so close vectors collide in at least one
//! table with high probability. Queries collect the exact buckets of all
//! tables, widen to Hamming radius 1 when that yields fewer than `k`
//! candidates, and rerank the survivors by exact cosine.
//!
//! The all-zero vector has no direction; it hashes to the fixed all-ones
//! signature and its cosine against anything is zero.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::mat::{cosine, dot, Mat};
use crate::rng::{derive_rng, stream};
use crate::scalar::Scalar;

use super::store::EmbeddingStore;

use rand::Rng;
use rand_distr::StandardNormal;

/// Multi-table SimHash index. Hyperplanes are drawn once from seeded
/// streams; buckets are derived state, rebuilt on load rather than stored.
#[derive(Debug, Clone)]
pub struct SimHashIndex<T: Scalar> {
    n_tables: usize,
    n_bits: usize,
    dim: usize,
    /// One `n_bits x dim` hyperplane matrix per table.
    planes: Vec<Mat<T>>,
    vectors: BTreeMap<i64, Vec<T>>,
    buckets: Vec<BTreeMap<u64, Vec<i64>>>,
}

/// Bits on which two signatures disagree.
pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

impl<T: Scalar> SimHashIndex<T> {
    pub fn new(dim: usize, n_tables: usize, n_bits: usize, seed: u64) -> SimHashIndex<T> {
        assert!(dim > 0, "embedding dimension must be positive");
        assert!(n_tables > 0, "need at least one table");
        assert!((1..=64).contains(&n_bits), "signatures are packed into u64");
        let planes = (0..n_tables)
            .map(|t| {
                let mut rng = derive_rng(seed, &[stream::HYPERPLANES, t as u64]);
                let data = (0..n_bits * dim)
                    .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                Mat::from_vec(n_bits, dim, data)
            })
            .collect();
        SimHashIndex {
            n_tables,
            n_bits,
            dim,
            planes,
            vectors: BTreeMap::new(),
            buckets: vec![BTreeMap::new(); n_tables],
        }
    }

    /// Builds an index over every vector in a store.
    pub fn from_store(
        store: &EmbeddingStore<T>,
        n_tables: usize,
        n_bits: usize,
        seed: u64,
    ) -> SimHashIndex<T> {
        let mut index = SimHashIndex::new(store.dim, n_tables, n_bits, seed);
        for (&id, vec) in &store.vectors {
            index.insert(id, vec.clone());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_tables(&self) -> usize {
        self.n_tables
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn vector(&self, id: i64) -> Option<&[T]> {
        self.vectors.get(&id).map(Vec::as_slice)
    }

    pub fn plane(&self, table: usize) -> &Mat<T> {
        &self.planes[table]
    }

    /// Signature of `v` under one table's hyperplanes.
    pub fn signature(&self, table: usize, v: &[T]) -> u64 {
        assert_eq!(v.len(), self.dim, "vector length must match index dimension");
        let planes = &self.planes[table];
        let mut sig = 0u64;
        for bit in 0..self.n_bits {
            if dot(planes.row(bit), v).to_f64() >= 0.0 {
                sig |= 1 << bit;
            }
        }
        sig
    }

    /// Signatures across all tables.
    pub fn signatures(&self, v: &[T]) -> Vec<u64> {
        (0..self.n_tables).map(|t| self.signature(t, v)).collect()
    }

    /// Inserts or replaces a vector. Replacement removes the id from its old
    /// buckets first so the index never holds stale entries.
    pub fn insert(&mut self, id: i64, vec: Vec<T>) {
        assert_eq!(vec.len(), self.dim, "vector length must match index dimension");
        if let Some(old) = self.vectors.get(&id) {
            let old = old.clone();
            for t in 0..self.n_tables {
                let sig = self.signature(t, &old);
                if let Some(ids) = self.buckets[t].get_mut(&sig) {
                    ids.retain(|&x| x != id);
                    if ids.is_empty() {
                        self.buckets[t].remove(&sig);
                    }
                }
            }
        }
        for t in 0..self.n_tables {
            let sig = self.signature(t, &vec);
            self.buckets[t].entry(sig).or_default().push(id);
        }
        self.vectors.insert(id, vec);
    }

    /// Approximate top-`k` by cosine. Candidates come from the query's exact
    /// bucket in every table, widened to Hamming radius 1 when fewer than `k`
    /// distinct ids were found, and degrading to a full scan when even the
    /// widened probe falls short — so a `k` at or above the population always
    /// returns everything, cosine-sorted. Survivors are reranked by exact
    /// cosine, descending, ids ascending on ties.
    pub fn query(&self, v: &[T], k: usize) -> Vec<(i64, f64)> {
        assert_eq!(v.len(), self.dim, "vector length must match index dimension");
        let sigs = self.signatures(v);
        let mut candidates: BTreeSet<i64> = BTreeSet::new();
        for (t, &sig) in sigs.iter().enumerate() {
            if let Some(ids) = self.buckets[t].get(&sig) {
                candidates.extend(ids.iter().copied());
            }
        }
        if candidates.len() < k {
            for (t, &sig) in sigs.iter().enumerate() {
                for bit in 0..self.n_bits {
                    if let Some(ids) = self.buckets[t].get(&(sig ^ (1 << bit))) {
                        candidates.extend(ids.iter().copied());
                    }
                }
            }
        }
        if candidates.len() < k {
            return self.exact_query(v, k);
        }
        let mut scored: Vec<(i64, f64)> = candidates
            .into_iter()
            .map(|id| (id, cosine(v, &self.vectors[&id])))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    /// Exact top-`k` by cosine over every stored vector; the oracle the
    /// bucketed query approximates.
    pub fn exact_query(&self, v: &[T], k: usize) -> Vec<(i64, f64)> {
        assert_eq!(v.len(), self.dim, "vector length must match index dimension");
        let mut scored: Vec<(i64, f64)> = self
            .vectors
            .iter()
            .map(|(&id, vec)| (id, cosine(v, vec)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    /// Persists hyperplanes and vectors; buckets are rebuilt on load.
    pub fn save(&self, path: &Path) -> Result<()> {
        let echo = format!(
            "kind=simhash\ntables={}\nbits={}\ndim={}\n",
            self.n_tables, self.n_bits, self.dim
        );
        let mut tensors: Vec<(String, Mat<T>)> = Vec::new();
        for (t, plane) in self.planes.iter().enumerate() {
            tensors.push((format!("plane/{t}"), plane.clone()));
        }
        for (&id, vec) in &self.vectors {
            tensors.push((format!("vec/{id}"), Mat::from_vec(1, self.dim, vec.clone())));
        }
        let refs: Vec<(&str, &Mat<T>)> =
            tensors.iter().map(|(n, m)| (n.as_str(), m)).collect();
        checkpoint::write_tensors(path, &echo, &refs)
    }

    pub fn load(path: &Path) -> Result<SimHashIndex<T>> {
        let (echo, tensors) = checkpoint::read_tensors::<T>(path)?;
        let fmt = |msg: String| Error::Format { path: path.to_path_buf(), msg };

        let mut meta: BTreeMap<&str, &str> = BTreeMap::new();
        for line in echo.lines() {
            if let Some((k, v)) = line.split_once('=') {
                meta.insert(k, v);
            }
        }
        if meta.get("kind") != Some(&"simhash") {
            return Err(fmt("not a similarity index (missing kind=simhash)".into()));
        }
        let field = |key: &str| -> Result<usize> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| fmt(format!("missing or malformed '{key}' field")))
        };
        let (n_tables, n_bits, dim) = (field("tables")?, field("bits")?, field("dim")?);

        let mut planes: Vec<Option<Mat<T>>> = vec![None; n_tables];
        let mut index = SimHashIndex {
            n_tables,
            n_bits,
            dim,
            planes: Vec::new(),
            vectors: BTreeMap::new(),
            buckets: vec![BTreeMap::new(); n_tables],
        };
        let mut pending: Vec<(i64, Vec<T>)> = Vec::new();
        for (name, mat) in tensors {
            if let Some(t) = name.strip_prefix("plane/") {
                let t: usize = t
                    .parse()
                    .map_err(|_| fmt(format!("bad plane name '{name}'")))?;
                if t >= n_tables {
                    return Err(fmt(format!("plane {t} out of range for {n_tables} tables")));
                }
                if mat.shape() != (n_bits, dim) {
                    return Err(fmt(format!(
                        "plane {t} has shape {}x{}, expected {n_bits}x{dim}",
                        mat.rows(),
                        mat.cols()
                    )));
                }
                planes[t] = Some(mat);
            } else if let Some(id) = name.strip_prefix("vec/") {
                let id: i64 = id
                    .parse()
                    .map_err(|_| fmt(format!("bad vector name '{name}'")))?;
                if mat.shape() != (1, dim) {
                    return Err(fmt(format!(
                        "vector {id} has shape {}x{}, expected 1x{dim}",
                        mat.rows(),
                        mat.cols()
                    )));
                }
                pending.push((id, mat.data().to_vec()));
            } else {
                return Err(fmt(format!("unexpected tensor '{name}'")));
            }
        }
        for (t, plane) in planes.into_iter().enumerate() {
            index
                .planes
                .push(plane.ok_or_else(|| fmt(format!("plane {t} missing")))?);
        }
        for (id, vec) in pending {
            index.insert(id, vec);
        }
        Ok(index)
    }
}
