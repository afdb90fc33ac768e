//! Undirected social graph with per-edge attribute vectors.
//!
//! Edges come from a TSV of `user_a \t user_b` rows. The graph is symmetric,
//! self-loops are dropped, duplicate edges collapse to one. Every edge
//! carries a 2-dim attribute `[ln(1 + shared), ln(1 + min_degree)]` where
//! `shared` counts distinct items both endpoints interacted with in the
//! provided (training) log — attributes must never see test data.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::events::{EventLog, UserId};
use crate::error::{Error, Result};
use crate::params::EDGE_ATTR_DIM;

/// Edge attribute vector.
pub type EdgeAttr = [f64; EDGE_ATTR_DIM];

#[derive(Debug, Clone)]
pub struct SocialGraph {
    /// Sorted, deduplicated neighbor lists per dense user id.
    adj: Vec<Vec<UserId>>,
    /// Attributes keyed by `(min, max)` endpoint pair.
    attrs: HashMap<(UserId, UserId), EdgeAttr>,
}

impl SocialGraph {
    /// Builds the graph from dense edge pairs. `train` supplies the item
    /// overlap statistic; degrees are computed on the deduplicated graph.
    pub fn build(edges: &[(UserId, UserId)], n_users: usize, train: &EventLog) -> SocialGraph {
        let mut unique: BTreeSet<(UserId, UserId)> = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                continue; // self-loops carry no social information
            }
            unique.insert((a.min(b), a.max(b)));
        }

        let mut adj = vec![Vec::new(); n_users];
        for &(a, b) in &unique {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }

        // Distinct train items per user, only for users that have edges.
        let mut item_sets: HashMap<UserId, BTreeSet<u32>> = HashMap::new();
        for &(a, b) in &unique {
            for u in [a, b] {
                item_sets
                    .entry(u)
                    .or_insert_with(|| train.user_items(u).collect::<BTreeSet<_>>());
            }
        }

        let mut attrs = HashMap::with_capacity(unique.len());
        for &(a, b) in &unique {
            let sa = &item_sets[&a];
            let sb = &item_sets[&b];
            let shared = sa.intersection(sb).count() as f64;
            let min_deg = adj[a as usize].len().min(adj[b as usize].len()) as f64;
            attrs.insert((a, b), [(1.0 + shared).ln(), (1.0 + min_deg).ln()]);
        }
        SocialGraph { adj, attrs }
    }

    /// Loads an edge TSV, interning users unseen in the event log (they get
    /// empty histories) and building attributes from `log`.
    pub fn load(path: &Path, log: &mut EventLog) -> Result<SocialGraph> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut raw: Vec<(i64, i64)> = Vec::new();
        for (lineno, rawline) in text.lines().enumerate() {
            let line = rawline.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let mut field = |what: &str| -> Result<i64> {
                let f = parts.next().ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("missing {what} column"),
                })?;
                f.trim().parse::<i64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("bad {what} '{f}'"),
                })
            };
            let a = field("user_a")?;
            let b = field("user_b")?;
            raw.push((a, b));
        }

        // New users are appended in ascending original-id order so densification
        // stays a pure function of the inputs.
        let mut new_origs: Vec<i64> = raw
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .filter(|&o| log.users.dense(o).is_none())
            .collect();
        new_origs.sort_unstable();
        new_origs.dedup();
        for o in new_origs {
            log.add_user(o);
        }

        let dense: Vec<(UserId, UserId)> = raw
            .into_iter()
            .map(|(a, b)| (log.users.dense(a).expect("interned"), log.users.dense(b).expect("interned")))
            .collect();
        Ok(SocialGraph::build(&dense, log.n_users(), log))
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, u: UserId) -> &[UserId] {
        &self.adj[u as usize]
    }

    pub fn degree(&self, u: UserId) -> usize {
        self.adj[u as usize].len()
    }

    pub fn n_edges(&self) -> usize {
        self.attrs.len()
    }

    /// Attribute vector of edge `(u, v)`; panics if the edge does not exist.
    pub fn attr(&self, u: UserId, v: UserId) -> &EdgeAttr {
        &self.attrs[&(u.min(v), u.max(v))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::{Event, IdMap};

    fn log_with_items(histories: &[&[u32]]) -> EventLog {
        let mut users = IdMap::with_base(0);
        let mut items = IdMap::with_base(1);
        let mut events = Vec::new();
        let mut max_item = 0;
        for (u, hist) in histories.iter().enumerate() {
            users.intern(u as i64);
            for (t, &item) in hist.iter().enumerate() {
                max_item = max_item.max(item);
                events.push(Event { user: u as UserId, item, ts: t as i64 });
            }
        }
        for i in 1..=max_item {
            items.intern(i as i64);
        }
        EventLog::from_dense(events, users, items)
    }

    #[test]
    fn graph_is_symmetric_deduped_and_loop_free() {
        let log = log_with_items(&[&[1], &[1], &[2]]);
        let g = SocialGraph::build(&[(0, 1), (1, 0), (1, 1), (1, 2)], 3, &log);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
        assert_eq!(g.n_edges(), 2);
    }

    #[test]
    fn shared_item_attribute_counts_distinct_overlap() {
        // Users 0 and 1 share items {1,2,3,4} (4 distinct); user 0 clicked
        // item 1 twice, which must not inflate the count.
        let log = log_with_items(&[&[1, 1, 2, 3, 4, 5], &[1, 2, 3, 4, 9]]);
        let g = SocialGraph::build(&[(0, 1)], 2, &log);
        let attr = g.attr(0, 1);
        assert!((attr[0] - 5.0f64.ln()).abs() < 1e-12, "got {}", attr[0]);
        // Both endpoints have degree 1.
        assert!((attr[1] - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_histories_give_zero_shared_signal() {
        let log = log_with_items(&[&[1, 2], &[3, 4]]);
        let g = SocialGraph::build(&[(0, 1)], 2, &log);
        assert_eq!(g.attr(0, 1)[0], 0.0); // ln(1 + 0)
    }

    #[test]
    fn min_degree_attribute_uses_deduplicated_degrees() {
        // Star: center 0 with leaves 1..=3. Edge (0,1): min(3, 1) = 1.
        let log = log_with_items(&[&[1], &[1], &[1], &[1]]);
        let g = SocialGraph::build(&[(0, 1), (0, 2), (0, 3)], 4, &log);
        assert!((g.attr(0, 1)[1] - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn load_interns_edge_only_users() {
        let dir = tempfile::tempdir().unwrap();
        let events_path = dir.path().join("events.tsv");
        std::fs::write(&events_path, "10\t1\t0\n20\t1\t1\n").unwrap();
        let edges_path = dir.path().join("edges.tsv");
        std::fs::write(&edges_path, "10\t20\n10\t99\n").unwrap();
        let mut log = crate::data::events::load_events(&events_path).unwrap();
        let g = SocialGraph::load(&edges_path, &mut log).unwrap();
        assert_eq!(log.n_users(), 3);
        let dense99 = log.users.dense(99).unwrap();
        assert_eq!(g.neighbors(dense99), &[0]);
        assert!(log.user_events(dense99).next().is_none());
    }
}
