//! Interaction log loading and id densification.
//!
//! Input is a TSV of `user_id \t item_id \t timestamp` rows (`#` comments
//! allowed). Users and items keep arbitrary integer ids on disk; in memory
//! they are densified: users to `0..n_users`, items to `1..=n_items` with
//! item id `0` reserved for sequence padding. Dense ids are assigned in
//! ascending order of the original ids, so the mapping is a pure function of
//! the data.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

/// One interaction. Timestamps are arbitrary integer clocks (seconds in
/// real data); only their order matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub user: UserId,
    pub item: ItemId,
    pub ts: i64,
}

/// Bidirectional original-id <-> dense-id map. `base` is the first dense id
/// handed out (0 for users, 1 for items so 0 stays free for padding).
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    base: u32,
    to_dense: HashMap<i64, u32>,
    to_orig: Vec<i64>,
}

impl IdMap {
    pub fn with_base(base: u32) -> IdMap {
        IdMap { base, to_dense: HashMap::new(), to_orig: Vec::new() }
    }

    pub fn intern(&mut self, orig: i64) -> u32 {
        if let Some(&d) = self.to_dense.get(&orig) {
            return d;
        }
        let dense = self.base + self.to_orig.len() as u32;
        self.to_dense.insert(orig, dense);
        self.to_orig.push(orig);
        dense
    }

    pub fn dense(&self, orig: i64) -> Option<u32> {
        self.to_dense.get(&orig).copied()
    }

    pub fn orig(&self, dense: u32) -> i64 {
        self.to_orig[(dense - self.base) as usize]
    }

    pub fn len(&self) -> usize {
        self.to_orig.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_orig.is_empty()
    }

    /// All dense ids in ascending order.
    pub fn dense_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.to_orig.len() as u32).map(move |i| self.base + i)
    }
}

/// The full interaction log with dense ids and per-user time-ordered views.
#[derive(Debug, Clone)]
pub struct EventLog {
    /// All events sorted by `(ts, user, item)`.
    pub events: Vec<Event>,
    /// Per dense user: indices into `events`, ascending in time.
    pub by_user: Vec<Vec<usize>>,
    pub users: IdMap,
    pub items: IdMap,
}

impl EventLog {
    /// Builds a log from already-densified events (synthetic data, splits).
    pub fn from_dense(mut events: Vec<Event>, users: IdMap, items: IdMap) -> EventLog {
        events.sort_by(|a, b| (a.ts, a.user, a.item).cmp(&(b.ts, b.user, b.item)));
        let mut by_user = vec![Vec::new(); users.len()];
        for (i, e) in events.iter().enumerate() {
            by_user[e.user as usize].push(i);
        }
        EventLog { events, by_user, users, items }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn min_ts(&self) -> Option<i64> {
        self.events.first().map(|e| e.ts)
    }

    pub fn max_ts(&self) -> Option<i64> {
        self.events.last().map(|e| e.ts)
    }

    /// Items of `user`'s events in time order.
    pub fn user_items(&self, user: UserId) -> impl Iterator<Item = ItemId> + '_ {
        self.by_user[user as usize].iter().map(move |&i| self.events[i].item)
    }

    /// Events of `user` in time order.
    pub fn user_events(&self, user: UserId) -> impl Iterator<Item = &Event> + '_ {
        self.by_user[user as usize].iter().map(move |&i| &self.events[i])
    }

    /// Per-item interaction counts, indexed by dense item id (index 0 unused).
    pub fn item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_items() + 1];
        for e in &self.events {
            counts[e.item as usize] += 1;
        }
        counts
    }

    /// Registers a user that has no events (e.g. seen only in the edge file).
    pub fn add_user(&mut self, orig: i64) -> UserId {
        let before = self.users.len();
        let dense = self.users.intern(orig);
        if self.users.len() > before {
            self.by_user.push(Vec::new());
        }
        dense
    }

    /// Writes `user_map.tsv` and `item_map.tsv` (`original \t dense`) to `dir`.
    pub fn write_id_maps(&self, dir: &Path) -> Result<()> {
        write_map(&dir.join("user_map.tsv"), &self.users)?;
        write_map(&dir.join("item_map.tsv"), &self.items)
    }
}

fn write_map(path: &Path, map: &IdMap) -> Result<()> {
    let mut out = Vec::new();
    for dense in map.dense_ids() {
        writeln!(out, "{}\t{}", map.orig(dense), dense).expect("write to vec");
    }
    crate::fsutil::atomic_write(path, &out)
}

/// Loads and densifies an interaction TSV. Rows must be
/// `user \t item \t timestamp`; item id 0 is reserved and rejected.
pub fn load_events(path: &Path) -> Result<EventLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut raw: Vec<(i64, i64, i64)> = Vec::new();
    for (lineno, rawline) in text.lines().enumerate() {
        let line = rawline.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let parse_field = |field: Option<&str>, what: &str| -> Result<i64> {
            let f = field.ok_or_else(|| Error::Parse {
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
        let user = parse_field(parts.next(), "user")?;
        let item = parse_field(parts.next(), "item")?;
        let ts = parse_field(parts.next(), "timestamp")?;
        if item == 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "item id 0 is reserved for padding".to_string(),
            });
        }
        raw.push((user, item, ts));
    }

    // Dense ids ascend with original ids: collect, sort, intern.
    let mut user_origs: Vec<i64> = raw.iter().map(|r| r.0).collect();
    user_origs.sort_unstable();
    user_origs.dedup();
    let mut item_origs: Vec<i64> = raw.iter().map(|r| r.1).collect();
    item_origs.sort_unstable();
    item_origs.dedup();

    let mut users = IdMap::with_base(0);
    for o in user_origs {
        users.intern(o);
    }
    let mut items = IdMap::with_base(1);
    for o in item_origs {
        items.intern(o);
    }

    let events = raw
        .into_iter()
        .map(|(u, i, ts)| Event {
            user: users.dense(u).expect("interned"),
            item: items.dense(i).expect("interned"),
            ts,
        })
        .collect();
    Ok(EventLog::from_dense(events, users, items))
}
