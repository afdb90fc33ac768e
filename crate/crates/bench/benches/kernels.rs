//! Criterion benchmarks for the hot paths: sequence encoding, fused
//! user representations, the training step (loss + backward + update),
//! and candidate retrieval over the signature index.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use socrec_core::data::events::{Event, EventLog, IdMap};
use socrec_core::data::graph::SocialGraph;
use socrec_core::data::sample::{sample_subgraph, SampledSubgraph};
use socrec_core::data::sequences::{build_sequences, TrainInstance};
use socrec_core::retrieval::SimHashIndex;
use socrec_core::synth::{generate, SynthConfig};
use socrec_core::tape::{GradBuffer, Tape};
use socrec_core::train::AdamState;
use socrec_core::transformer::ForwardMode;
use socrec_core::{Model, RunConfig, SampleMode, Variant};

struct Fixture {
    log: EventLog,
    cfg: RunConfig,
    model: Model<f32>,
    inst: TrainInstance,
    sub: SampledSubgraph,
    negatives: Vec<u32>,
}

fn fixture(variant: Variant) -> Fixture {
    let data = generate(&SynthConfig {
        n_users: 300,
        n_items: 1000,
        events_per_user: 40,
        rho: 0.3,
        extra_edges: 300,
        recent_window: 5,
        seed: 9,
    });
    let mut users = IdMap::with_base(0);
    let mut items = IdMap::with_base(1);
    let events: Vec<Event> = data
        .events
        .iter()
        .map(|&(u, i, ts)| Event { user: users.intern(u), item: items.intern(i), ts })
        .collect();
    let log = EventLog::from_dense(events, users, items);
    let edges: Vec<(u32, u32)> = data
        .edges
        .iter()
        .map(|&(a, b)| (log.users.dense(a).unwrap(), log.users.dense(b).unwrap()))
        .collect();
    let graph = SocialGraph::build(&edges, log.n_users(), &log);

    let mut cfg = RunConfig::default();
    cfg.d = 64;
    cfg.heads = 4;
    cfg.m = 50;
    cfg.l_t = 2;
    cfg.l_g = 2;
    cfg.fanouts = vec![10, 5];
    cfg.dropout = 0.0;
    cfg.seed = 9;
    cfg.variant = variant;

    let model: Model<f32> = Model::init(&cfg, log.n_items());
    let inst = build_sequences(&log, cfg.m, cfg.m)
        .into_iter()
        .max_by_key(|i| i.seq.true_length)
        .expect("non-empty log");
    let sub = sample_subgraph(&graph, inst.user, &cfg.fanouts, SampleMode::Uniform, 7);
    let negatives: Vec<u32> = (1..=100).filter(|&v| v != inst.target).collect();

    Fixture { log, cfg, model, inst, sub, negatives }
}

fn bench_representation(c: &mut Criterion) {
    let mut group = c.benchmark_group("representation");
    group.sample_size(30);

    let fx = fixture(Variant::TransformerOnly);
    group.bench_function("transformer_only_d64_m50", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let rep = fx.model.representation(
                &mut tape,
                &fx.log,
                None,
                &fx.inst.seq,
                fx.inst.cut_time,
                &mut ForwardMode::Infer,
            );
            black_box(tape.value(rep.rep).data()[0])
        })
    });

    let fx = fixture(Variant::Full);
    group.bench_function("fused_d64_m50_fanout10x5", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let rep = fx.model.representation(
                &mut tape,
                &fx.log,
                Some(&fx.sub),
                &fx.inst.seq,
                fx.inst.cut_time,
                &mut ForwardMode::Infer,
            );
            black_box(tape.value(rep.rep).data()[0])
        })
    });

    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let mut group = c.benchmark_group("training");
    group.sample_size(30);

    let fx = fixture(Variant::Full);
    group.bench_function("loss_backward_99neg", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let mut mode = ForwardMode::Train {
                rng: ChaCha8Rng::seed_from_u64(3),
                dropout: fx.cfg.dropout,
            };
            let loss = fx.model.instance_loss(
                &mut tape,
                &fx.log,
                Some(&fx.sub),
                &fx.inst,
                &fx.negatives,
                &mut mode,
            );
            let mut buf = GradBuffer::new();
            tape.backward_into(loss, &mut buf);
            black_box(buf.is_empty())
        })
    });

    let mut fx = fixture(Variant::Full);
    let grads = {
        let mut tape = Tape::new();
        let loss = fx.model.instance_loss(
            &mut tape,
            &fx.log,
            Some(&fx.sub),
            &fx.inst,
            &fx.negatives,
            &mut ForwardMode::Infer,
        );
        tape.backward(loss)
    };
    let mut opt = AdamState::new(&fx.model.params.set);
    group.bench_function("adam_sparse_apply", |b| {
        b.iter(|| {
            opt.apply(&mut fx.model.params.set, &grads, 1e-3);
            black_box(opt.step)
        })
    });

    group.finish();
}

fn bench_retrieval(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieval");
    group.sample_size(30);

    let dim = 64;
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut index = SimHashIndex::new(dim, 8, 16, 4);
    for id in 0..n {
        let v: Vec<f32> = (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        index.insert(id as i64, v);
    }
    let query: Vec<f32> = (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();

    group.bench_function("simhash_top10_of_10k", |b| {
        b.iter(|| black_box(index.query(&query, 10).len()))
    });
    group.bench_function("exact_top10_of_10k", |b| {
        b.iter(|| black_box(index.exact_query(&query, 10).len()))
    });

    group.finish();
}

criterion_group!(benches, bench_representation, bench_training, bench_retrieval);
criterion_main!(benches);
