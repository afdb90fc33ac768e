//! User-based collaborative filtering on top of the similarity index.
//!
//! "People like you" are the nearest neighbors of a user's fused embedding;
//! "items for you" are the items those neighbors touched recently, each
//! weighted by the neighbor's cosine similarity and filtered against the
//! user's own history. All functions work in dense ids; the index itself is
//! keyed by original ids, so the event log's id maps translate at the
//! boundary.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::events::{EventLog, ItemId, UserId};
use crate::error::{Error, Result};
use crate::eval::EvalInstance;
use crate::scalar::Scalar;

use super::simhash::SimHashIndex;

fn indexed_vector<'a, T: Scalar>(
    index: &'a SimHashIndex<T>,
    log: &EventLog,
    user: UserId,
) -> Result<&'a [T]> {
    let orig = log.users.orig(user);
    index
        .vector(orig)
        .ok_or_else(|| Error::NotFound(format!("user {orig} has no embedding in the index")))
}

/// Top-`k` most similar users by embedding cosine, excluding the user.
pub fn top_similar_users<T: Scalar>(
    index: &SimHashIndex<T>,
    log: &EventLog,
    user: UserId,
    k: usize,
) -> Result<Vec<(UserId, f64)>> {
    let vec = indexed_vector(index, log, user)?;
    let orig = log.users.orig(user);
    let mut out = Vec::with_capacity(k);
    for (hit, score) in index.query(vec, k + 1) {
        if hit == orig {
            continue;
        }
        let dense = log.users.dense(hit).ok_or_else(|| {
            Error::NotFound(format!("index user {hit} does not appear in the event log"))
        })?;
        out.push((dense, score));
        if out.len() == k {
            break;
        }
    }
    Ok(out)
}

/// Recommends up to `n_items` items: each of the user's `k_users` nearest
/// neighbors votes for the last `recent_window` items it touched, each vote
/// weighted by that neighbor's cosine similarity. Items already in the
/// user's own history are excluded; ties break toward the smaller item id.
pub fn user_cf_recommend<T: Scalar>(
    index: &SimHashIndex<T>,
    log: &EventLog,
    user: UserId,
    k_users: usize,
    n_items: usize,
    recent_window: usize,
) -> Result<Vec<(ItemId, f64)>> {
    let neighbors = top_similar_users(index, log, user, k_users)?;
    let own: BTreeSet<ItemId> = log.by_user[user as usize]
        .iter()
        .map(|&i| log.events[i].item)
        .collect();

    let mut scores: BTreeMap<ItemId, f64> = BTreeMap::new();
    for (neighbor, weight) in neighbors {
        let history = &log.by_user[neighbor as usize];
        let start = history.len().saturating_sub(recent_window);
        for &i in &history[start..] {
            let item = log.events[i].item;
            if !own.contains(&item) {
                *scores.entry(item).or_insert(0.0) += weight;
            }
        }
    }

    let mut ranked: Vec<(ItemId, f64)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(n_items);
    Ok(ranked)
}

/// Fraction of held-out instances whose true next item appears in the
/// user's top-`n_items` recommendations. The log must be the training
/// split, so neighbor histories stop at the cut.
pub fn replay_hit_rate<T: Scalar>(
    index: &SimHashIndex<T>,
    train: &EventLog,
    instances: &[EvalInstance],
    k_users: usize,
    n_items: usize,
    recent_window: usize,
) -> Result<f64> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for inst in instances {
        let recs = user_cf_recommend(index, train, inst.user, k_users, n_items, recent_window)?;
        if recs.iter().any(|&(item, _)| item == inst.truth) {
            hits += 1;
        }
    }
    Ok(hits as f64 / instances.len() as f64)
}
