//! File-based embedding pipeline in three stages:
//!
//! 1. **personal** — encode every user's behavior sequence and write the
//!    `personal` namespace.
//! 2. **subgraphs** — sample every user's receptive field (per replica) into
//!    a cache file, verifying that each referenced node has a personal
//!    embedding on disk. A missing node is a hard error naming the user, not
//!    a silent zero.
//! 3. **social** — run graph attention over the cached subgraphs with the
//!    on-disk personal embeddings as inputs, average the replicas, fuse, and
//!    write the `social` and `fused` namespaces.
//!
//! The stages communicate **only** through files, so each can be rerun or
//! inspected in isolation; [`direct_embeddings`] computes the same three
//! namespaces in memory and must agree bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{RunConfig, Variant};
use crate::data::events::{EventLog, IdMap, UserId};
use crate::data::graph::{EdgeAttr, SocialGraph};
use crate::data::sample::{sample_subgraph, SampledSubgraph};
use crate::data::sequences::sequence_before;
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::mat::Mat;
use crate::model::Model;
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::transformer::{encode_personal, ForwardMode};

use super::store::{EmbeddingStore, StoreManifest};

/// Sampled receptive fields for every user and replica.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphCache {
    pub hops: usize,
    pub replicas: usize,
    /// Keyed by (original root user id, replica index).
    pub subs: BTreeMap<(i64, usize), SampledSubgraph>,
}

impl SubgraphCache {
    /// Samples every user's neighborhood; replica `r` of user `u` draws from
    /// a stream keyed by `(u, r)`, so the cache is order-independent.
    pub fn build(cfg: &RunConfig, graph: &SocialGraph, log: &EventLog) -> SubgraphCache {
        let mut subs = BTreeMap::new();
        for u in 0..log.n_users() as UserId {
            for r in 0..cfg.replicas {
                let seed = derive_seed(cfg.seed, &[stream::EMBED, u as u64, r as u64]);
                let sub = sample_subgraph(graph, u, &cfg.fanouts, cfg.sample_mode, seed);
                subs.insert((log.users.orig(u), r), sub);
            }
        }
        SubgraphCache { hops: cfg.fanouts.len(), replicas: cfg.replicas, subs }
    }

    /// Writes the cache as TSV. Node ids are original ids; a `-` in the
    /// neighbor column marks an unexpanded leaf, while an expanded node with
    /// no neighbors has an empty column.
    pub fn write(&self, path: &Path, users: &IdMap) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# hops={} replicas={}\n", self.hops, self.replicas));
        out.push_str("# root\treplica\tnode\tdepth\tneighbors\n");
        for ((root, replica), sub) in &self.subs {
            for (&node, &depth) in &sub.depth {
                let col = match sub.neighbors_of(node) {
                    None => "-".to_string(),
                    Some(list) => list
                        .iter()
                        .map(|(v, a)| format!("{}:{}:{}", users.orig(*v), a[0], a[1]))
                        .collect::<Vec<_>>()
                        .join(";"),
                };
                out.push_str(&format!(
                    "{root}\t{replica}\t{}\t{depth}\t{col}\n",
                    users.orig(node)
                ));
            }
        }
        atomic_write(path, out.as_bytes())
    }

    /// Reads a cache, mapping original ids back to dense ids and validating
    /// the hop/replica header against expectations.
    pub fn read(
        path: &Path,
        users: &IdMap,
        expected_hops: usize,
        expected_replicas: usize,
    ) -> Result<SubgraphCache> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fmt = |msg: String| Error::Format { path: path.to_path_buf(), msg };
        let parse = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };

        let header = text.lines().next().unwrap_or_default();
        let (hops, replicas) = header
            .strip_prefix("# hops=")
            .and_then(|rest| rest.split_once(" replicas="))
            .and_then(|(h, r)| Some((h.parse().ok()?, r.parse().ok()?)))
            .ok_or_else(|| fmt("missing '# hops=H replicas=R' header".into()))?;
        if hops != expected_hops || replicas != expected_replicas {
            return Err(fmt(format!(
                "cache built for hops={hops} replicas={replicas}, run expects hops={expected_hops} replicas={expected_replicas}"
            )));
        }

        let dense = |orig: i64, ln: usize| {
            users
                .dense(orig)
                .ok_or_else(|| parse(ln, format!("unknown user id {orig}")))
        };

        struct Row {
            node: UserId,
            depth: usize,
            list: Option<Vec<(UserId, EdgeAttr)>>,
        }
        let mut rows: BTreeMap<(i64, usize), Vec<Row>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(parse(ln, format!("expected 5 columns, found {}", cols.len())));
            }
            let root: i64 =
                cols[0].parse().map_err(|_| parse(ln, format!("bad root id '{}'", cols[0])))?;
            let replica: usize = cols[1]
                .parse()
                .map_err(|_| parse(ln, format!("bad replica '{}'", cols[1])))?;
            let node_orig: i64 =
                cols[2].parse().map_err(|_| parse(ln, format!("bad node id '{}'", cols[2])))?;
            let depth: usize =
                cols[3].parse().map_err(|_| parse(ln, format!("bad depth '{}'", cols[3])))?;
            let list = match cols[4] {
                "-" => None,
                "" => Some(Vec::new()),
                s => {
                    let mut list = Vec::new();
                    for entry in s.split(';') {
                        let parts: Vec<&str> = entry.split(':').collect();
                        if parts.len() != 3 {
                            return Err(parse(ln, format!("bad neighbor entry '{entry}'")));
                        }
                        let v: i64 = parts[0]
                            .parse()
                            .map_err(|_| parse(ln, format!("bad neighbor id '{}'", parts[0])))?;
                        let a0: f64 = parts[1]
                            .parse()
                            .map_err(|_| parse(ln, format!("bad attribute '{}'", parts[1])))?;
                        let a1: f64 = parts[2]
                            .parse()
                            .map_err(|_| parse(ln, format!("bad attribute '{}'", parts[2])))?;
                        list.push((dense(v, ln)?, [a0, a1]));
                    }
                    Some(list)
                }
            };
            rows.entry((root, replica)).or_default().push(Row {
                node: dense(node_orig, ln)?,
                depth,
                list,
            });
        }

        let mut subs = BTreeMap::new();
        for ((root_orig, replica), rows) in rows {
            let root = dense(root_orig, 0).map_err(|_| {
                fmt(format!("unknown root user id {root_orig}"))
            })?;
            let mut layers: Vec<BTreeMap<UserId, Vec<(UserId, EdgeAttr)>>> =
                vec![BTreeMap::new(); hops];
            let mut depth = BTreeMap::new();
            for row in rows {
                depth.insert(row.node, row.depth);
                if let Some(list) = row.list {
                    if row.depth >= hops {
                        return Err(fmt(format!(
                            "node {} of root {root_orig} expanded at depth {} beyond {hops} hops",
                            row.node, row.depth
                        )));
                    }
                    layers[row.depth].insert(row.node, list);
                }
            }
            subs.insert((root_orig, replica), SampledSubgraph { root, layers, depth });
        }
        Ok(SubgraphCache { hops, replicas, subs })
    }
}

fn require_full<T: Scalar>(model: &Model<T>) -> Result<()> {
    if model.variant != Variant::Full {
        return Err(Error::Invalid(format!(
            "embedding export needs the full model, this checkpoint is '{}'",
            model.variant
        )));
    }
    Ok(())
}

/// Encodes every user's full history into the personal namespace.
pub fn personal_store<T: Scalar>(
    model: &Model<T>,
    cfg: &RunConfig,
    log: &EventLog,
) -> EmbeddingStore<T> {
    let d = model.dims().d;
    let mut store = EmbeddingStore::new(d);
    for u in 0..log.n_users() as UserId {
        let seq = sequence_before(log, u, i64::MAX, cfg.m);
        let mut tape = Tape::new();
        let (p, _) = encode_personal(&mut tape, &model.params, &seq, &mut ForwardMode::Infer);
        store.insert(log.users.orig(u), tape.value(p).row(0).to_vec());
    }
    store
}

/// Stage 1: write `personal.tsv`.
pub fn stage_personal<T: Scalar>(
    model: &Model<T>,
    cfg: &RunConfig,
    log: &EventLog,
    path: &Path,
) -> Result<()> {
    require_full(model)?;
    personal_store(model, cfg, log).write(path)
}

/// Stage 2: sample all receptive fields, verify the join against the
/// personal namespace on disk, and write the cache.
pub fn stage_subgraphs<T: Scalar>(
    cfg: &RunConfig,
    graph: &SocialGraph,
    log: &EventLog,
    personal_path: &Path,
    cache_path: &Path,
) -> Result<()> {
    let personal = EmbeddingStore::<T>::read(personal_path, cfg.d)?;
    let cache = SubgraphCache::build(cfg, graph, log);
    for ((root, _), sub) in &cache.subs {
        for node in sub.nodes() {
            let orig = log.users.orig(node);
            if personal.get(orig).is_none() {
                return Err(Error::NotFound(format!(
                    "personal embedding for user {orig} missing from {} (needed by user {root}'s neighborhood)",
                    personal_path.display()
                )));
            }
        }
    }
    cache.write(cache_path, &log.users)
}

/// Graph attention over cached subgraphs with file-provided base vectors;
/// returns the social and fused namespaces.
pub fn social_from_parts<T: Scalar>(
    model: &Model<T>,
    users: &IdMap,
    personal: &EmbeddingStore<T>,
    cache: &SubgraphCache,
) -> Result<(EmbeddingStore<T>, EmbeddingStore<T>)> {
    let d = model.dims().d;
    let mut social_store = EmbeddingStore::new(d);
    let mut fused_store = EmbeddingStore::new(d);
    let fusion = model.params.set.value(model.params.fusion);

    // The cache maps (orig, replica); group replicas per user in order.
    let mut by_user: BTreeMap<i64, Vec<&SampledSubgraph>> = BTreeMap::new();
    for ((orig, _replica), sub) in &cache.subs {
        by_user.entry(*orig).or_default().push(sub);
    }

    for (&orig, subs) in &by_user {
        let mut acc = Mat::<T>::zeros(1, d);
        for sub in subs {
            let mut tape = Tape::new();
            let mut base = BTreeMap::new();
            for node in sub.nodes() {
                let node_orig = users.orig(node);
                let vec = personal.get(node_orig).ok_or_else(|| {
                    Error::NotFound(format!(
                        "personal embedding for user {node_orig} missing (needed by user {orig}'s neighborhood)"
                    ))
                })?;
                base.insert(node, tape.constant(Mat::from_vec(1, d, vec.to_vec())));
            }
            let s = crate::gat::encode_social(&mut tape, &model.params, sub, &base);
            acc.add_scaled_assign(tape.value(s), T::ONE);
        }
        acc.scale_assign(T::from_f64(1.0 / subs.len() as f64));

        let p = personal.get(orig).ok_or_else(|| {
            Error::NotFound(format!("personal embedding for user {orig} missing"))
        })?;
        let mut joint = Mat::<T>::zeros(1, 2 * d);
        joint.row_mut(0)[..d].copy_from_slice(p);
        joint.row_mut(0)[d..].copy_from_slice(acc.row(0));
        let fused = joint.matmul(fusion);

        social_store.insert(orig, acc.row(0).to_vec());
        fused_store.insert(orig, fused.row(0).to_vec());
    }
    Ok((social_store, fused_store))
}

/// Stage 3: read `personal.tsv` and the cache, write `social.tsv` and
/// `fused.tsv`.
pub fn stage_social<T: Scalar>(
    model: &Model<T>,
    cfg: &RunConfig,
    log: &EventLog,
    personal_path: &Path,
    cache_path: &Path,
    social_path: &Path,
    fused_path: &Path,
) -> Result<()> {
    require_full(model)?;
    let personal = EmbeddingStore::<T>::read(personal_path, model.dims().d)?;
    let cache = SubgraphCache::read(cache_path, &log.users, cfg.fanouts.len(), cfg.replicas)?;
    let (social, fused) = social_from_parts(model, &log.users, &personal, &cache)?;
    social.write(social_path)?;
    fused.write(fused_path)
}

/// All three namespaces computed in one in-memory pass. Bit-for-bit equal to
/// what the staged pipeline leaves on disk.
pub fn direct_embeddings<T: Scalar>(
    model: &Model<T>,
    cfg: &RunConfig,
    log: &EventLog,
    graph: &SocialGraph,
) -> Result<(EmbeddingStore<T>, EmbeddingStore<T>, EmbeddingStore<T>)> {
    require_full(model)?;
    let personal = personal_store(model, cfg, log);
    let cache = SubgraphCache::build(cfg, graph, log);
    let (social, fused) = social_from_parts(model, &log.users, &personal, &cache)?;
    Ok((personal, social, fused))
}

/// Runs the three stages against `dir` and writes the manifest.
pub fn run_pipeline<T: Scalar>(
    model: &Model<T>,
    cfg: &RunConfig,
    log: &EventLog,
    graph: &SocialGraph,
    dir: &Path,
    checkpoint_sha256: &str,
) -> Result<StoreManifest> {
    require_full(model)?;
    let personal = dir.join("personal.tsv");
    let cache = dir.join("subgraphs.tsv");
    stage_personal(model, cfg, log, &personal)?;
    stage_subgraphs::<T>(cfg, graph, log, &personal, &cache)?;
    stage_social(model, cfg, log, &personal, &cache, &dir.join("social.tsv"), &dir.join("fused.tsv"))?;

    let manifest = StoreManifest {
        dim: model.dims().d,
        dtype: T::DTYPE,
        count: log.n_users(),
        as_of: log.max_ts().unwrap_or(0),
        checkpoint_sha256: checkpoint_sha256.to_string(),
        config: crate::config::parse_kv_text(&cfg.to_kv_text()),
    };
    manifest.write(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}
