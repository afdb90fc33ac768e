//! End-to-end finite-difference validation of the whole differentiable
//! path: item/position embedding, causal attention stack, graph attention
//! over a sampled neighborhood, fusion, and the negative-sampled loss.
//!
//! Every parameter element is perturbed centrally (`h = 1e-5`, f64) and the
//! quotient compared against the backward pass with relative error
//! `|fd - grad| / (|fd| + |grad| + 1e-6) < 1e-4`.

use std::collections::BTreeSet;

use socrec_core::data::events::{Event, EventLog, IdMap};
use socrec_core::data::graph::SocialGraph;
use socrec_core::data::sample::sample_subgraph;
use socrec_core::data::sequences::build_sequences;
use socrec_core::rng::derive_rng;
use socrec_core::tape::Tape;
use socrec_core::transformer::ForwardMode;
use socrec_core::{Model, RunConfig, Variant};

/// Four users on a path graph, six real items, interleaved histories so
/// every user has co-engagement with its neighbors.
fn fixture() -> (EventLog, SocialGraph) {
    let mut users = IdMap::with_base(0);
    let mut items = IdMap::with_base(1);
    for u in 0..4 {
        users.intern(u);
    }
    let hist: [&[i64]; 4] = [
        &[0, 1, 2, 3, 4, 0, 2],
        &[1, 2, 3, 0, 5, 1],
        &[2, 3, 4, 5, 0, 3],
        &[3, 4, 5, 1, 2],
    ];
    let mut events = Vec::new();
    let mut ts = 0;
    for (u, h) in hist.iter().enumerate() {
        for &it in *h {
            events.push(Event {
                user: u as u32,
                item: items.intern(it),
                ts,
            });
            ts += 1;
        }
    }
    let log = EventLog::from_dense(events, users, items);
    let graph = SocialGraph::build(&[(0, 1), (1, 2), (2, 3), (0, 2)], 4, &log);
    (log, graph)
}

fn small_config(variant: Variant) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.d = 8;
    cfg.heads = 2;
    cfg.m = 5;
    cfg.l_t = 2;
    cfg.l_g = 2;
    cfg.fanouts = vec![2, 2];
    cfg.dropout = 0.1;
    cfg.variant = variant;
    cfg.precision = socrec_core::scalar::Dtype::F64;
    cfg
}

/// Compares the backward pass to central differences for every element of
/// every parameter. Dropout is active; each forward re-derives the same
/// stream so all three evaluations (center, +h, -h) see identical masks.
fn check_variant(variant: Variant, seed: u64) {
    let (log, graph) = fixture();
    let cfg = small_config(variant);
    let mut model: Model<f64> = Model::init(&cfg, log.n_items());

    let inst = build_sequences(&log, cfg.m, 1)
        .into_iter()
        .find(|i| i.user == 1 && !i.seq.is_all_padding())
        .expect("fixture has a usable instance");
    let negatives = vec![
        log.items.dense(4).unwrap(),
        log.items.dense(5).unwrap(),
        inst.target, // duplicate of the target: must be dropped, |J| = 3
    ];
    let sub = if variant == Variant::TransformerOnly {
        None
    } else {
        Some(sample_subgraph(&graph, inst.user, &cfg.fanouts, cfg.sample_mode, seed))
    };

    let loss_of = |model: &Model<f64>| -> f64 {
        let mut tape = Tape::new();
        let mut mode = ForwardMode::Train { rng: derive_rng(seed, &[17]), dropout: cfg.dropout };
        let loss = model.instance_loss(&mut tape, &log, sub.as_ref(), &inst, &negatives, &mut mode);
        tape.value(loss).get(0, 0)
    };

    // Analytic gradients from one backward pass.
    let mut tape = Tape::new();
    let mut mode = ForwardMode::Train { rng: derive_rng(seed, &[17]), dropout: cfg.dropout };
    let loss = model.instance_loss(&mut tape, &log, sub.as_ref(), &inst, &negatives, &mut mode);
    let grads = tape.backward(loss);

    let h = 1e-5;
    let mut checked = 0usize;
    let mut touched_slots = BTreeSet::new();
    for slot in 0..model.params.set.len() {
        let (rows, cols) = model.params.set.value(slot).shape();
        for r in 0..rows {
            for c in 0..cols {
                let analytic = grads
                    .dense
                    .get(&slot)
                    .map(|m| m.get(r, c))
                    .or_else(|| {
                        grads.sparse.get(&slot).and_then(|rows| rows.get(&r)).map(|v| v[c])
                    })
                    .unwrap_or(0.0);

                let orig = model.params.set.value(slot).get(r, c);
                model.params.set.value_mut(slot).set(r, c, orig + h);
                let up = loss_of(&model);
                model.params.set.value_mut(slot).set(r, c, orig - h);
                let down = loss_of(&model);
                model.params.set.value_mut(slot).set(r, c, orig);

                let fd = (up - down) / (2.0 * h);
                let rel = (fd - analytic).abs() / (fd.abs() + analytic.abs() + 1e-6);
                assert!(
                    rel < 1e-4,
                    "{} [{r},{c}] ({variant}): finite diff {fd:.3e} vs backward {analytic:.3e} (rel {rel:.3e})",
                    model.params.set.name(slot),
                );
                if analytic != 0.0 {
                    touched_slots.insert(slot);
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 1000, "expected to sweep every element, got {checked}");

    // The sweep must actually exercise the paths the variant wires up.
    let touched_names: BTreeSet<&str> =
        touched_slots.iter().map(|&s| model.params.set.name(s)).collect();
    assert!(touched_names.contains("items"), "item table never moved: {touched_names:?}");
    let expects_gat = variant != Variant::TransformerOnly;
    let expects_transformer = variant != Variant::GatOnly;
    assert_eq!(
        touched_names.iter().any(|n| n.starts_with("gat/")),
        expects_gat,
        "graph attention gradient presence is wrong for {variant}: {touched_names:?}"
    );
    assert_eq!(
        touched_names.iter().any(|n| n.starts_with("tf/")),
        expects_transformer,
        "transformer gradient presence is wrong for {variant}: {touched_names:?}"
    );
    assert_eq!(
        touched_names.contains("fusion"),
        variant == Variant::Full,
        "fusion gradient presence is wrong for {variant}"
    );
}

#[test]
fn full_model_gradients_match_finite_differences() {
    check_variant(Variant::Full, 2024);
}

#[test]
fn transformer_only_gradients_match_finite_differences() {
    check_variant(Variant::TransformerOnly, 77);
}

#[test]
fn gat_only_gradients_match_finite_differences() {
    check_variant(Variant::GatOnly, 41);
}
