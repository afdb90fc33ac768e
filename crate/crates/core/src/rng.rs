//! Deterministic random stream derivation.
//!
//! Every stochastic choice in the system (parameter init, epoch shuffling,
//! negative sampling, neighbor sampling, dropout, synthetic data, hash
//! hyperplanes) draws from its own ChaCha stream derived from the run seed
//! plus a purpose tag and position indices. Streams are therefore independent
//! of each other and of execution order, which is what makes whole runs
//! byte-reproducible.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams. Values are part of the reproducibility
/// contract: changing them changes every seeded artifact.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NEGATIVES: u64 = 3;
    pub const SUBGRAPH: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const HYPERPLANES: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const EMBED: u64 = 9;
}

/// splitmix64 step; a small, well-mixed integer hash.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a sequence of tags into one 64-bit seed.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(root ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    state
}

/// ChaCha stream for `(root, tags...)`.
pub fn derive_rng(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tags))
}

/// Uniform draw in `[lo, hi)` as f64.
pub fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Fisher-Yates selection of `k` distinct indices from `0..n`, returned in
/// ascending order. `k >= n` returns all indices.
pub fn sample_indices_without_replacement(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Weighted sampling of `k` distinct indices without replacement
/// (Efraimidis-Spirakis). Only entries with positive finite weight can be
/// drawn — when fewer than `k` exist, all of them are returned and the
/// result is short. Ties break on the lower index. Indices are returned
/// ascending.
pub fn weighted_indices_without_replacement(
    rng: &mut ChaCha8Rng,
    weights: &[f64],
    k: usize,
) -> Vec<usize> {
    // Strictly proportional: an entry with no weight has probability zero
    // and is never drawn, so fewer than `k` indices come back when fewer
    // than `k` entries have positive weight.
    let candidates: Vec<usize> = (0..weights.len())
        .filter(|&i| weights[i].is_finite() && weights[i] > 0.0)
        .collect();
    if k >= candidates.len() {
        return candidates;
    }
    // Exponential race: the k largest ln(u)/w win, which draws without
    // replacement with probability proportional to weight.
    let mut keyed: Vec<(f64, usize)> = candidates
        .into_iter()
        .map(|i| {
            let u: f64 = rng.random();
            (u.ln() / weights[i], i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed[..k].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}
