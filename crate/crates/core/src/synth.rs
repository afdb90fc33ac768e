//! Synthetic interaction data with a tunable social signal.
//!
//! Users sit on a friendship ring (plus optional random extra edges) and
//! take turns acting in global round-robin order, so timestamps are strictly
//! increasing and every earlier event is visible to every later one. At each
//! turn a user either advances their own deterministic item permutation, or
//! — with probability `rho` — copies a recent item from a uniformly chosen
//! friend. `rho = 0` makes users socially independent; larger values make a
//! friend's history genuinely predictive of the next item, which is exactly
//! the signal the social half of the model is meant to pick up.
//!
//! The copy/own decision of every event is kept, so the strength of the
//! planted signal can be summarized as the mutual information between that
//! indicator and the chosen item.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::fsutil::atomic_write;
use crate::rng::{derive_rng, stream};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub events_per_user: usize,
    /// Probability that an event copies a friend instead of following the
    /// user's own permutation.
    pub rho: f64,
    /// Random edges added on top of the friendship ring.
    pub extra_edges: usize,
    /// How many of a friend's most recent items are copy candidates.
    pub recent_window: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 100,
            events_per_user: 30,
            rho: 0.0,
            extra_edges: 50,
            recent_window: 10,
            seed: 42,
        }
    }
}

/// Generated data in original (file-level) ids: users `0..n_users`, items
/// `1..=n_items`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// `(user, item, ts)`, strictly increasing in `ts`.
    pub events: Vec<(i64, i64, i64)>,
    pub edges: Vec<(i64, i64)>,
    /// Per event: did it copy a friend?
    pub copied: Vec<bool>,
}

/// Deterministically generates events and edges for `cfg`.
pub fn generate(cfg: &SynthConfig) -> SynthData {
    assert!(cfg.n_users >= 1 && cfg.n_items >= 1);
    assert!((0.0..=1.0).contains(&cfg.rho));

    // Friendship ring plus extra random edges.
    let mut edge_set: BTreeSet<(i64, i64)> = BTreeSet::new();
    let n = cfg.n_users as i64;
    if n == 2 {
        edge_set.insert((0, 1));
    } else if n >= 3 {
        for u in 0..n {
            let v = (u + 1) % n;
            edge_set.insert((u.min(v), u.max(v)));
        }
    }
    let mut edge_rng = derive_rng(cfg.seed, &[stream::SYNTH, 1]);
    let mut attempts = 0;
    let mut added = 0;
    while added < cfg.extra_edges && attempts < 20 * cfg.extra_edges + 100 {
        attempts += 1;
        if cfg.n_users < 2 {
            break;
        }
        let a = edge_rng.random_range(0..n);
        let b = edge_rng.random_range(0..n);
        if a != b && edge_set.insert((a.min(b), a.max(b))) {
            added += 1;
        }
    }
    let edges: Vec<(i64, i64)> = edge_set.iter().copied().collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_users];
    for &(a, b) in &edges {
        adj[a as usize].push(b as usize);
        adj[b as usize].push(a as usize);
    }
    for l in &mut adj {
        l.sort_unstable();
    }

    // One private item permutation per user.
    let perms: Vec<Vec<i64>> = (0..cfg.n_users)
        .map(|u| {
            let mut items: Vec<i64> = (1..=cfg.n_items as i64).collect();
            items.shuffle(&mut derive_rng(cfg.seed, &[stream::SYNTH, 2, u as u64]));
            items
        })
        .collect();

    let mut event_rng = derive_rng(cfg.seed, &[stream::SYNTH, 3]);
    let mut histories: Vec<Vec<i64>> = vec![Vec::new(); cfg.n_users];
    let mut own_step = vec![0usize; cfg.n_users];
    let mut events = Vec::with_capacity(cfg.n_users * cfg.events_per_user);
    let mut copied = Vec::with_capacity(events.capacity());

    for round in 0..cfg.events_per_user {
        for u in 0..cfg.n_users {
            let ts = (round * cfg.n_users + u) as i64;
            let mut item = None;
            let mut was_copy = false;
            if cfg.rho > 0.0 && event_rng.random::<f64>() < cfg.rho && !adj[u].is_empty() {
                let friend = adj[u][event_rng.random_range(0..adj[u].len())];
                let hist = &histories[friend];
                if !hist.is_empty() {
                    let window = hist.len().min(cfg.recent_window);
                    let recent = &hist[hist.len() - window..];
                    item = Some(recent[event_rng.random_range(0..recent.len())]);
                    was_copy = true;
                }
            }
            let item = item.unwrap_or_else(|| {
                let it = perms[u][own_step[u] % cfg.n_items];
                own_step[u] += 1;
                it
            });
            histories[u].push(item);
            events.push((u as i64, item, ts));
            copied.push(was_copy);
        }
    }
    SynthData { events, edges, copied }
}

/// Mutual information (nats) between the copy indicator and the item id.
/// Zero when no event copied; grows with the planted social signal.
pub fn social_mutual_information(data: &SynthData) -> f64 {
    let n = data.events.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    use std::collections::HashMap;
    let mut joint: HashMap<(bool, i64), f64> = HashMap::new();
    let mut p_item: HashMap<i64, f64> = HashMap::new();
    let mut p_copy = [0.0f64; 2];
    for (e, &c) in data.events.iter().zip(&data.copied) {
        *joint.entry((c, e.1)).or_default() += 1.0;
        *p_item.entry(e.1).or_default() += 1.0;
        p_copy[usize::from(c)] += 1.0;
    }
    let mut mi = 0.0;
    for (&(c, item), &cnt) in &joint {
        let pxy = cnt / n;
        let px = p_copy[usize::from(c)] / n;
        let py = p_item[&item] / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    mi.max(0.0)
}

/// Writes events as `user TAB item TAB ts` with a leading comment.
pub fn write_events(path: &Path, data: &SynthData) -> Result<()> {
    let mut out = String::from("# user\titem\tts\n");
    for &(u, i, ts) in &data.events {
        out.push_str(&format!("{u}\t{i}\t{ts}\n"));
    }
    atomic_write(path, out.as_bytes())
}

/// Writes edges as `user_a TAB user_b` with a leading comment.
pub fn write_edges(path: &Path, data: &SynthData) -> Result<()> {
    let mut out = String::from("# user_a\tuser_b\n");
    for &(a, b) in &data.edges {
        out.push_str(&format!("{a}\t{b}\n"));
    }
    atomic_write(path, out.as_bytes())
}

/// Writes the generation knobs and summary statistics of a generated set.
pub fn write_manifest(path: &Path, cfg: &SynthConfig, data: &SynthData) -> Result<()> {
    let copied_n = data.copied.iter().filter(|&&c| c).count();
    let frac = if data.copied.is_empty() { 0.0 } else { copied_n as f64 / data.copied.len() as f64 };
    let mut out = String::new();
    out.push_str(&format!("n_users\t{}\n", cfg.n_users));
    out.push_str(&format!("n_items\t{}\n", cfg.n_items));
    out.push_str(&format!("events_per_user\t{}\n", cfg.events_per_user));
    out.push_str(&format!("rho\t{}\n", cfg.rho));
    out.push_str(&format!("extra_edges\t{}\n", cfg.extra_edges));
    out.push_str(&format!("recent_window\t{}\n", cfg.recent_window));
    out.push_str(&format!("seed\t{}\n", cfg.seed));
    out.push_str(&format!("n_events\t{}\n", data.events.len()));
    out.push_str(&format!("n_edges\t{}\n", data.edges.len()));
    out.push_str(&format!("copied_fraction\t{frac:.6}\n"));
    out.push_str(&format!("social_mi_nats\t{:.6}\n", social_mutual_information(data)));
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::load_events;
    use crate::data::graph::SocialGraph;

    fn small(rho: f64) -> SynthConfig {
        SynthConfig {
            n_users: 20,
            n_items: 12,
            events_per_user: 15,
            rho,
            extra_edges: 5,
            recent_window: 4,
            seed: 7,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small(0.5));
        let b = generate(&small(0.5));
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 8, ..small(0.5) });
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn shapes_and_ranges_hold() {
        let cfg = small(0.3);
        let d = generate(&cfg);
        assert_eq!(d.events.len(), cfg.n_users * cfg.events_per_user);
        assert_eq!(d.copied.len(), d.events.len());
        let mut last_ts = -1;
        for &(u, i, ts) in &d.events {
            assert!(ts > last_ts, "timestamps strictly increase");
            last_ts = ts;
            assert!((0..cfg.n_users as i64).contains(&u));
            assert!((1..=cfg.n_items as i64).contains(&i));
        }
        // Ring edges are all present.
        for u in 0..cfg.n_users as i64 {
            let v = (u + 1) % cfg.n_users as i64;
            assert!(d.edges.contains(&(u.min(v), u.max(v))));
        }
        assert_eq!(d.edges.len(), cfg.n_users + cfg.extra_edges);
    }

    #[test]
    fn rho_zero_means_private_permutations() {
        let cfg = small(0.0);
        let d = generate(&cfg);
        assert!(d.copied.iter().all(|&c| !c));
        // The first n_items events of user 0 enumerate a permutation.
        let items: Vec<i64> = d
            .events
            .iter()
            .filter(|e| e.0 == 0)
            .take(cfg.n_items)
            .map(|e| e.1)
            .collect();
        let mut sorted = items.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (1..=cfg.n_items as i64).collect::<Vec<_>>());
    }

    #[test]
    fn rho_drives_the_copy_fraction() {
        let high = generate(&small(0.9));
        let copied = high.copied.iter().filter(|&&c| c).count() as f64;
        let frac = copied / high.copied.len() as f64;
        assert!(frac > 0.6, "most events should copy at rho=0.9, got {frac}");

        let low = generate(&small(0.1));
        let copied = low.copied.iter().filter(|&&c| c).count() as f64;
        let frac_low = copied / low.copied.len() as f64;
        assert!(frac_low < frac / 2.0);
    }

    #[test]
    fn mutual_information_tracks_the_planted_signal() {
        assert_eq!(social_mutual_information(&generate(&small(0.0))), 0.0);
        let mi = social_mutual_information(&generate(&SynthConfig {
            n_users: 50,
            events_per_user: 30,
            ..small(0.8)
        }));
        assert!(mi > 0.01, "rho=0.8 should plant measurable information, got {mi}");
    }

    #[test]
    fn written_files_load_back() {
        let cfg = small(0.4);
        let d = generate(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let events_path = dir.path().join("events.tsv");
        let edges_path = dir.path().join("edges.tsv");
        write_events(&events_path, &d).unwrap();
        write_edges(&edges_path, &d).unwrap();
        write_manifest(&dir.path().join("manifest.tsv"), &cfg, &d).unwrap();

        let mut log = load_events(&events_path).unwrap();
        assert_eq!(log.events.len(), d.events.len());
        assert_eq!(log.n_users(), cfg.n_users);
        assert_eq!(log.n_items(), cfg.n_items);
        let graph = SocialGraph::load(&edges_path, &mut log).unwrap();
        assert_eq!(graph.n_edges(), d.edges.len());

        let manifest = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
        assert!(manifest.contains("rho\t0.4"));
        assert!(manifest.contains("social_mi_nats\t"));
    }
}
