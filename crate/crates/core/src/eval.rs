//! Temporal evaluation: hold out the trailing time window, predict each
//! user's first held-out item, and report ranking metrics.
//!
//! The cut is `max_ts - test_window`. Events at or before the cut form the
//! training split; for every user whose first post-cut event targets an item
//! that was interacted with inside the training split, one evaluation
//! instance is created. The context for that instance is everything the user
//! did strictly before the held-out event — which, because the truth is the
//! user's *first* post-cut event, is exactly their training history.
//!
//! Ranking is over the train-present vocabulary (items with at least one
//! training interaction): descending score, ascending item id on ties. The
//! reported metrics are Recall@K for the configured K values and NDCG with
//! gain `1 / log2(1 + rank)`. A popularity baseline (rank by training
//! interaction count) is computed alongside for every report.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::data::events::{EventLog, ItemId, UserId};
use crate::data::graph::SocialGraph;
use crate::data::sample::sample_subgraph;
use crate::data::sequences::sequence_before;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::transformer::ForwardMode;

/// One held-out prediction task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalInstance {
    pub user: UserId,
    /// Timestamp of the held-out event; context is strictly earlier.
    pub cut_time: i64,
    pub truth: ItemId,
}

/// Splits a log at `max_ts - test_window`.
///
/// Returns the training split (same id maps, filtered events) and the
/// evaluation instances. Instances whose truth item never occurs in the
/// training split are dropped — their embeddings would be untrained noise.
pub fn temporal_split(log: &EventLog, test_window: i64) -> Result<(EventLog, Vec<EvalInstance>)> {
    if test_window <= 0 {
        return Err(Error::Invalid(
            "test_window must be positive to hold out an evaluation span".into(),
        ));
    }
    let max_ts = log
        .max_ts()
        .ok_or_else(|| Error::Invalid("cannot split an empty event log".into()))?;
    let cut = max_ts - test_window;

    let train_events: Vec<_> = log.events.iter().filter(|e| e.ts <= cut).copied().collect();
    if train_events.is_empty() {
        return Err(Error::Invalid(format!(
            "test_window {test_window} swallows the whole log (cut {cut} is before every event)"
        )));
    }
    let train = EventLog::from_dense(train_events, log.users.clone(), log.items.clone());
    let counts = train.item_counts();

    let mut instances = Vec::new();
    for user in 0..log.n_users() as u32 {
        let first_heldout = log.user_events(user).find(|e| e.ts > cut);
        let trained_before = train.user_events(user).next().is_some();
        if let Some(e) = first_heldout {
            if trained_before && counts[e.item as usize] > 0 {
                instances.push(EvalInstance { user, cut_time: e.ts, truth: e.item });
            }
        }
    }
    Ok((train, instances))
}

/// 1-based rank of `truth` among the items marked present, ordering by
/// descending score with ascending-id tie-breaks.
pub fn rank_among_present(scores: &[f64], present: &[bool], truth: ItemId) -> usize {
    let t = truth as usize;
    assert!(present[t], "truth must be rankable");
    let st = scores[t];
    let mut rank = 1;
    for id in 1..scores.len() {
        if id == t || !present[id] {
            continue;
        }
        if scores[id] > st || (scores[id] == st && id < t) {
            rank += 1;
        }
    }
    rank
}

/// Ranks of every instance under the model, plus the user's friend count.
pub struct Evaluation {
    /// `(instance, model rank, popularity rank, degree)` per instance.
    pub rows: Vec<(EvalInstance, usize, usize, usize)>,
    pub ks: Vec<usize>,
}

fn recall(ranks: impl Iterator<Item = usize> + Clone, k: usize) -> f64 {
    let mut n = 0usize;
    let mut hit = 0usize;
    for r in ranks {
        n += 1;
        if r <= k {
            hit += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        hit as f64 / n as f64
    }
}

fn ndcg(ranks: impl Iterator<Item = usize>) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    for r in ranks {
        n += 1;
        sum += 1.0 / (1.0 + r as f64).log2();
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Friend-count bucket label used in reports.
pub fn degree_bucket(degree: usize) -> &'static str {
    match degree {
        0 => "0",
        1..=4 => "1-4",
        5..=9 => "5-9",
        _ => "10+",
    }
}

impl Evaluation {
    pub fn recall_at(&self, k: usize) -> f64 {
        recall(self.rows.iter().map(|r| r.1), k)
    }

    pub fn ndcg(&self) -> f64 {
        ndcg(self.rows.iter().map(|r| r.1))
    }

    pub fn pop_recall_at(&self, k: usize) -> f64 {
        recall(self.rows.iter().map(|r| r.2), k)
    }

    pub fn pop_ndcg(&self) -> f64 {
        ndcg(self.rows.iter().map(|r| r.2))
    }

    /// Flat TSV report: all-instance metrics, the popularity baseline, and
    /// per-friend-count-bucket metrics. Deterministic for identical inputs.
    pub fn report_tsv(&self, cfg: &RunConfig) -> String {
        let mut out = String::new();
        for line in cfg.to_kv_text().lines() {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str("source\tmetric\tbucket\tk\tvalue\n");

        let mut push = |source: &str, metric: &str, bucket: &str, k: Option<usize>, v: f64| {
            let kcol = k.map(|k| k.to_string()).unwrap_or_default();
            out.push_str(&format!("{source}\t{metric}\t{bucket}\t{kcol}\t{v:.6}\n"));
        };

        push("model", "n", "all", None, self.rows.len() as f64);
        for &k in &self.ks {
            push("model", "recall", "all", Some(k), self.recall_at(k));
        }
        push("model", "ndcg", "all", None, self.ndcg());
        for &k in &self.ks {
            push("pop", "recall", "all", Some(k), self.pop_recall_at(k));
        }
        push("pop", "ndcg", "all", None, self.pop_ndcg());

        let mut buckets: BTreeMap<&'static str, Vec<usize>> = BTreeMap::new();
        for (_, rank, _, degree) in &self.rows {
            buckets.entry(degree_bucket(*degree)).or_default().push(*rank);
        }
        // Fixed display order, skipping empty buckets.
        for bucket in ["0", "1-4", "5-9", "10+"] {
            if let Some(ranks) = buckets.get(bucket) {
                push("model", "n", bucket, None, ranks.len() as f64);
                for &k in &self.ks {
                    push("model", "recall", bucket, Some(k), recall(ranks.iter().copied(), k));
                }
                push("model", "ndcg", bucket, None, ndcg(ranks.iter().copied()));
            }
        }
        out
    }
}

/// Scores every instance under the model and the popularity baseline.
///
/// Evaluation subgraphs are seeded from `(user, cut_time)` so repeated runs
/// see the same neighborhoods regardless of instance order.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    cfg: &RunConfig,
    train: &EventLog,
    graph: Option<&SocialGraph>,
    instances: &[EvalInstance],
) -> Result<Evaluation> {
    model.check_variant(cfg.variant)?;
    if cfg.variant != crate::config::Variant::TransformerOnly && graph.is_none() {
        return Err(Error::Invalid(format!(
            "variant '{}' needs a social graph for evaluation",
            cfg.variant
        )));
    }
    let counts = train.item_counts();
    let present: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let pop_scores: Vec<f64> = counts.iter().map(|&c| c as f64).collect();

    let mut rows = Vec::with_capacity(instances.len());
    for inst in instances {
        let seq = sequence_before(train, inst.user, inst.cut_time, cfg.m);
        let sub = match cfg.variant {
            crate::config::Variant::TransformerOnly => None,
            _ => {
                let seed = derive_seed(
                    cfg.seed,
                    &[stream::EVAL, inst.user as u64, inst.cut_time as u64],
                );
                Some(sample_subgraph(
                    graph.unwrap(),
                    inst.user,
                    &cfg.fanouts,
                    cfg.sample_mode,
                    seed,
                ))
            }
        };
        let mut tape = Tape::new();
        let rep = model
            .representation(&mut tape, train, sub.as_ref(), &seq, inst.cut_time, &mut ForwardMode::Infer)
            .rep;
        let scores = model.score_all(tape.value(rep));
        let rank = rank_among_present(&scores, &present, inst.truth);
        let pop_rank = rank_among_present(&pop_scores, &present, inst.truth);
        let degree = graph.map(|g| g.degree(inst.user)).unwrap_or(0);
        rows.push((inst.clone(), rank, pop_rank, degree));
    }
    Ok(Evaluation { rows, ks: cfg.eval_ks.clone() })
}
