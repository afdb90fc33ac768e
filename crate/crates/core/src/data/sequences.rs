//! Behavior sequences: fixed-length windows over a user's click history.

use super::events::{EventLog, ItemId, UserId};

/// A fixed-length window of the most recent items, oldest first, left-padded
/// with item id 0. `true_length` counts the real (non-padding) items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorSequence {
    pub items: Vec<ItemId>,
    pub true_length: usize,
}

impl BehaviorSequence {
    /// Builds a window of length `m` from `history`, taking the last `m`
    /// entries. `m` must be at least 1.
    pub fn from_history(history: &[ItemId], m: usize) -> BehaviorSequence {
        assert!(m >= 1, "window length m must be >= 1");
        let take = history.len().min(m);
        let mut items = vec![0; m - take];
        items.extend_from_slice(&history[history.len() - take..]);
        BehaviorSequence { items, true_length: take }
    }

    pub fn m(&self) -> usize {
        self.items.len()
    }

    pub fn is_all_padding(&self) -> bool {
        self.true_length == 0
    }
}

/// One training example: predict `target` from the `m` items before it.
/// `cut_time` is the target's timestamp; any context outside the user's own
/// window (friend histories) must stay strictly before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainInstance {
    pub user: UserId,
    pub target: ItemId,
    pub cut_time: i64,
    pub seq: BehaviorSequence,
}

/// Slides a window over every user's history. Target positions start at the
/// final event and step backwards by `stride`, stopping before position 0
/// (the first event can never be a target). Instances are returned grouped
/// by user in ascending user id, targets in time order.
pub fn build_sequences(log: &EventLog, m: usize, stride: usize) -> Vec<TrainInstance> {
    assert!(m >= 1, "window length m must be >= 1");
    assert!(stride >= 1, "stride must be >= 1");
    let mut out = Vec::new();
    for user in 0..log.n_users() as UserId {
        let events: Vec<_> = log.user_events(user).collect();
        if events.len() < 2 {
            continue;
        }
        let mut positions = Vec::new();
        let mut p = events.len() - 1;
        loop {
            positions.push(p);
            if p < 1 + stride {
                break;
            }
            p -= stride;
        }
        positions.reverse();
        for p in positions {
            let history: Vec<ItemId> = events[..p].iter().map(|e| e.item).collect();
            out.push(TrainInstance {
                user,
                target: events[p].item,
                cut_time: events[p].ts,
                seq: BehaviorSequence::from_history(&history, m),
            });
        }
    }
    out
}

/// The user's window as of `cut`: last `m` items with timestamp strictly
/// before `cut`. Used for friend context during training and for test-time
/// encoding, where anything at or after the cut would leak the future.
pub fn sequence_before(log: &EventLog, user: UserId, cut: i64, m: usize) -> BehaviorSequence {
    let history: Vec<ItemId> =
        log.user_events(user).take_while(|e| e.ts < cut).map(|e| e.item).collect();
    BehaviorSequence::from_history(&history, m)
}
