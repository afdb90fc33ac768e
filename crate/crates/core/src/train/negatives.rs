//! Shared negative sampling for the sampled-softmax loss.
//!
//! One candidate set is drawn per minibatch and shared by every instance in
//! it. Items are drawn without replacement with probability proportional to
//! their interaction count in the training log, so popular items show up as
//! negatives more often — scoring against them is where ranking quality is
//! actually decided.

use rand_chacha::ChaCha8Rng;

use crate::data::events::{EventLog, ItemId};
use crate::rng::weighted_indices_without_replacement;

/// Draws `k` distinct negative item ids, count-proportionally.
///
/// Only items that actually occur in the log can be drawn; if `k` covers
/// them all, all of them are returned. Callers drop the positive item per
/// instance.
pub fn sample_shared_negatives(log: &EventLog, k: usize, rng: &mut ChaCha8Rng) -> Vec<ItemId> {
    let counts = log.item_counts();
    // Index i of `weights` is dense item id i + 1 (id 0 is padding).
    let weights: Vec<f64> = counts[1..].iter().map(|&c| c as f64).collect();
    weighted_indices_without_replacement(rng, &weights, k)
        .into_iter()
        .map(|i| (i + 1) as ItemId)
        .collect()
}
