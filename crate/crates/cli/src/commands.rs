//! One function per subcommand. Every function resolves paths against the
//! working directory, takes the directory lock when it writes, and returns
//! `socrec_core::Error` — the binary maps configuration errors to exit code
//! 2 and everything else to 1.

use std::path::Path;

use clap::Args;

use socrec_core::checkpoint;
use socrec_core::config::Variant;
use socrec_core::data::events::{load_events, EventLog};
use socrec_core::data::graph::SocialGraph;
use socrec_core::eval::{evaluate, temporal_split};
use socrec_core::fsutil::atomic_write;
use socrec_core::retrieval::{
    run_pipeline, top_similar_users, user_cf_recommend, EmbeddingStore, SimHashIndex,
    StoreManifest,
};
use socrec_core::scalar::Scalar;
use socrec_core::synth::{generate, write_edges, write_events, write_manifest, SynthConfig};
use socrec_core::train::{EpochStats, Trainer};
use socrec_core::{Dtype, Error, Model, Result, RunConfig};

use crate::lock::WorkdirLock;

/// Knobs for the synthetic-data generator. Defaults mirror
/// [`SynthConfig::default`].
#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub n_items: Option<usize>,
    #[arg(long)]
    pub events_per_user: Option<usize>,
    /// Probability that a user's next click copies a friend's recent item.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Random friendships added on top of the base ring.
    #[arg(long)]
    pub extra_edges: Option<usize>,
    /// How far back "recent" reaches when copying from a friend.
    #[arg(long)]
    pub recent_window: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn reject_config(config: Option<&Path>, command: &str, hint: &str) -> Result<()> {
    if config.is_some() {
        return Err(Error::Config(vec![format!(
            "--config is not accepted by '{command}': {hint}"
        )]));
    }
    Ok(())
}

fn reject_sets(sets: &[String], command: &str) -> Result<()> {
    if !sets.is_empty() {
        return Err(Error::Config(vec![format!(
            "--set is not accepted by '{command}'; it is configured by its own flags"
        )]));
    }
    Ok(())
}

pub fn synth(workdir: &Path, config: Option<&Path>, sets: &[String], args: &SynthArgs) -> Result<()> {
    reject_config(config, "synth", "the generator is configured by its own flags")?;
    reject_sets(sets, "synth")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_users: args.n_users.unwrap_or(d.n_users),
        n_items: args.n_items.unwrap_or(d.n_items),
        events_per_user: args.events_per_user.unwrap_or(d.events_per_user),
        rho: args.rho.unwrap_or(d.rho),
        extra_edges: args.extra_edges.unwrap_or(d.extra_edges),
        recent_window: args.recent_window.unwrap_or(d.recent_window),
        seed: args.seed.unwrap_or(d.seed),
    };
    if !(0.0..=1.0).contains(&cfg.rho) {
        return Err(Error::Config(vec![format!(
            "rho = {} must lie within [0, 1]",
            cfg.rho
        )]));
    }
    if cfg.n_users < 2 || cfg.n_items == 0 || cfg.events_per_user == 0 {
        return Err(Error::Config(vec![
            "synth needs at least 2 users, 1 item, and 1 event per user".into(),
        ]));
    }

    let _lock = WorkdirLock::acquire(workdir)?;
    let data = generate(&cfg);
    write_events(&workdir.join("events.tsv"), &data)?;
    write_edges(&workdir.join("edges.tsv"), &data)?;
    write_manifest(&workdir.join("synth_manifest.tsv"), &cfg, &data)?;
    let copied = data.copied.iter().filter(|&&c| c).count();
    println!(
        "wrote {} events for {} users over {} items, {} edges; {}/{} events copied from friends",
        data.events.len(),
        cfg.n_users,
        cfg.n_items,
        data.edges.len(),
        copied,
        data.copied.len()
    );
    Ok(())
}

/// Loads the event log and, when present or required, the friendship graph.
fn load_data(workdir: &Path, cfg: &RunConfig) -> Result<(EventLog, Option<SocialGraph>)> {
    let events = workdir.join(cfg.events.as_deref().unwrap_or("events.tsv"));
    let mut log = load_events(&events)?;
    let edges = workdir.join(cfg.edges.as_deref().unwrap_or("edges.tsv"));
    let graph = if edges.exists() {
        Some(SocialGraph::load(&edges, &mut log)?)
    } else if cfg.variant == Variant::TransformerOnly {
        None
    } else {
        return Err(Error::NotFound(format!(
            "edge file {} not found (variant '{}' needs the friendship graph)",
            edges.display(),
            cfg.variant
        )));
    };
    Ok((log, graph))
}

fn print_training(stats: &[EpochStats], ckpt: &Path) {
    if let Some(last) = stats.last() {
        println!(
            "trained {} epoch(s), final mean loss {:.6}; checkpoint at {}",
            stats.len(),
            last.mean_loss,
            ckpt.display()
        );
    } else {
        println!("nothing to do: checkpoint already covers the requested epochs");
    }
}

pub fn train(workdir: &Path, config: Option<&Path>, sets: &[String], resume: bool) -> Result<()> {
    let ckpt = workdir.join("checkpoint.ckpt");
    if resume {
        reject_config(
            config,
            "train --resume",
            "the checkpoint carries its configuration; use --set epochs=N or --set lr=X",
        )?;
        let frozen: Vec<String> = sets
            .iter()
            .filter_map(|p| p.split_once('=').map(|(k, _)| k.trim().to_string()))
            .filter(|k| k != "epochs" && k != "lr")
            .collect();
        if !frozen.is_empty() {
            return Err(Error::Config(vec![format!(
                "only 'epochs' and 'lr' may change when resuming, got: {}",
                frozen.join(", ")
            )]));
        }
        let _lock = WorkdirLock::acquire(workdir)?;
        let (dtype, echo) = checkpoint::peek(&ckpt)?;
        let cfg = RunConfig::from_kv_text(&echo)?;
        let (log, graph) = load_data(workdir, &cfg)?;
        return match dtype {
            Dtype::F32 => train_resume::<f32>(workdir, &ckpt, sets, &log, graph.as_ref()),
            Dtype::F64 => train_resume::<f64>(workdir, &ckpt, sets, &log, graph.as_ref()),
        };
    }

    let mut cfg = RunConfig::default();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_kv_text(&text)?;
    }
    cfg.apply_overrides(sets)?;
    cfg.validate()?;
    let _lock = WorkdirLock::acquire(workdir)?;
    let (log, graph) = load_data(workdir, &cfg)?;
    match cfg.precision {
        Dtype::F32 => train_fresh::<f32>(workdir, &cfg, &log, graph.as_ref()),
        Dtype::F64 => train_fresh::<f64>(workdir, &cfg, &log, graph.as_ref()),
    }
}

fn train_fresh<T: Scalar>(
    workdir: &Path,
    cfg: &RunConfig,
    log: &EventLog,
    graph: Option<&SocialGraph>,
) -> Result<()> {
    // A fresh run owns its artifacts: drop any log left by a previous run so
    // identical invocations produce identical files.
    let train_log = workdir.join("train_log.tsv");
    if train_log.exists() {
        std::fs::remove_file(&train_log).map_err(|e| Error::io(&train_log, e))?;
    }
    let mut trainer = Trainer::<T>::new(cfg, log, graph)?;
    let stats = trainer.train(Some(workdir))?;
    print_training(&stats, &workdir.join("checkpoint.ckpt"));
    Ok(())
}

fn train_resume<T: Scalar>(
    workdir: &Path,
    ckpt: &Path,
    sets: &[String],
    log: &EventLog,
    graph: Option<&SocialGraph>,
) -> Result<()> {
    let mut trainer = Trainer::<T>::from_checkpoint(ckpt, log, graph)?;
    trainer.cfg.apply_overrides(sets)?;
    let start = trainer.epoch;
    let stats = trainer.train(Some(workdir))?;
    println!("resumed from epoch {start}");
    print_training(&stats, ckpt);
    Ok(())
}

pub fn eval(
    workdir: &Path,
    config: Option<&Path>,
    sets: &[String],
    window: Option<i64>,
) -> Result<()> {
    reject_config(config, "eval", "the checkpoint carries its configuration; use --set")?;
    let ckpt = workdir.join("checkpoint.ckpt");
    let (dtype, echo) = checkpoint::peek(&ckpt)?;
    let mut cfg = RunConfig::from_kv_text(&echo)?;
    cfg.apply_overrides(sets)?;
    if let Some(w) = window {
        cfg.test_window = w;
    }
    if cfg.test_window <= 0 {
        return Err(Error::Config(vec![
            "test_window must be positive to hold out an evaluation span (pass --window N)".into(),
        ]));
    }
    cfg.validate()?;
    match dtype {
        Dtype::F32 => eval_t::<f32>(workdir, &ckpt, &cfg),
        Dtype::F64 => eval_t::<f64>(workdir, &ckpt, &cfg),
    }
}

fn eval_t<T: Scalar>(workdir: &Path, ckpt: &Path, cfg: &RunConfig) -> Result<()> {
    let _lock = WorkdirLock::acquire(workdir)?;
    let (_, model) = Model::<T>::load(ckpt)?;
    let (log, graph) = load_data(workdir, cfg)?;
    let (train_split, instances) = temporal_split(&log, cfg.test_window)?;
    let evaluation = evaluate(&model, cfg, &train_split, graph.as_ref(), &instances)?;
    let report = evaluation.report_tsv(cfg);
    let path = workdir.join("report.tsv");
    atomic_write(&path, report.as_bytes())?;
    print!("{report}");
    Ok(())
}

fn sha256_hex(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn embed(workdir: &Path, config: Option<&Path>, sets: &[String]) -> Result<()> {
    reject_config(config, "embed", "the checkpoint carries its configuration; use --set")?;
    let ckpt = workdir.join("checkpoint.ckpt");
    let (dtype, echo) = checkpoint::peek(&ckpt)?;
    let mut cfg = RunConfig::from_kv_text(&echo)?;
    cfg.apply_overrides(sets)?;
    cfg.validate()?;
    match dtype {
        Dtype::F32 => embed_t::<f32>(workdir, &ckpt, &cfg),
        Dtype::F64 => embed_t::<f64>(workdir, &ckpt, &cfg),
    }
}

fn embed_t<T: Scalar>(workdir: &Path, ckpt: &Path, cfg: &RunConfig) -> Result<()> {
    let _lock = WorkdirLock::acquire(workdir)?;
    let (_, model) = Model::<T>::load(ckpt)?;
    let (log, graph) = load_data(workdir, cfg)?;
    let graph = graph.ok_or_else(|| {
        Error::NotFound("embedding export needs the friendship graph".into())
    })?;
    let sha = sha256_hex(ckpt)?;
    let manifest = run_pipeline(&model, cfg, &log, &graph, workdir, &sha)?;
    println!(
        "wrote personal.tsv, subgraphs.tsv, social.tsv, fused.tsv and manifest.tsv ({} users, d={}, {})",
        manifest.count, manifest.dim, manifest.dtype
    );
    Ok(())
}

pub fn index(workdir: &Path, config: Option<&Path>, sets: &[String]) -> Result<()> {
    reject_config(config, "index", "the embedding manifest carries its configuration; use --set")?;
    let manifest = StoreManifest::read(&workdir.join("manifest.tsv"))?;
    let text: String = manifest
        .config
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    let mut cfg = RunConfig::from_kv_text(&text)?;
    cfg.apply_overrides(sets)?;
    cfg.validate()?;
    match manifest.dtype {
        Dtype::F32 => index_t::<f32>(workdir, &cfg, manifest.dim),
        Dtype::F64 => index_t::<f64>(workdir, &cfg, manifest.dim),
    }
}

fn index_t<T: Scalar>(workdir: &Path, cfg: &RunConfig, dim: usize) -> Result<()> {
    let _lock = WorkdirLock::acquire(workdir)?;
    let store = EmbeddingStore::<T>::read(&workdir.join("fused.tsv"), dim)?;
    for (&user, vec) in &store.vectors {
        if vec.iter().all(|x| x.to_f64() == 0.0) {
            eprintln!(
                "warning: user {user} has an all-zero embedding; its signature falls back to the all-ones tie-break"
            );
        }
    }
    let index = SimHashIndex::from_store(&store, cfg.n_tables, cfg.n_bits, cfg.seed);
    index.save(&workdir.join("index.bin"))?;
    println!(
        "indexed {} users ({} tables x {} bits) into index.bin",
        index.len(),
        cfg.n_tables,
        cfg.n_bits
    );
    Ok(())
}

/// Loads the query-side artifacts: the similarity index and the event log.
fn load_query_side<T: Scalar>(
    workdir: &Path,
    cfg: &RunConfig,
) -> Result<(SimHashIndex<T>, EventLog)> {
    let index = SimHashIndex::<T>::load(&workdir.join("index.bin"))?;
    let events = workdir.join(cfg.events.as_deref().unwrap_or("events.tsv"));
    let log = load_events(&events)?;
    Ok((index, log))
}

pub fn similar(
    workdir: &Path,
    config: Option<&Path>,
    sets: &[String],
    user: i64,
    ku: Option<usize>,
) -> Result<()> {
    reject_config(config, "similar", "use --set for path or k_u overrides")?;
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(sets)?;
    let k = ku.unwrap_or(cfg.k_u);
    let (dtype, _) = checkpoint::peek(&workdir.join("index.bin"))?;
    match dtype {
        Dtype::F32 => similar_t::<f32>(workdir, &cfg, user, k),
        Dtype::F64 => similar_t::<f64>(workdir, &cfg, user, k),
    }
}

fn similar_t<T: Scalar>(workdir: &Path, cfg: &RunConfig, user: i64, k: usize) -> Result<()> {
    let (index, log) = load_query_side::<T>(workdir, cfg)?;
    let dense = log
        .users
        .dense(user)
        .ok_or_else(|| Error::NotFound(format!("user {user} does not appear in the event log")))?;
    println!("user\tcosine");
    for (neighbor, cos) in top_similar_users(&index, &log, dense, k)? {
        println!("{}\t{cos:.6}", log.users.orig(neighbor));
    }
    Ok(())
}

pub fn recommend(
    workdir: &Path,
    config: Option<&Path>,
    sets: &[String],
    user: i64,
    k: Option<usize>,
    ku: Option<usize>,
) -> Result<()> {
    reject_config(config, "recommend", "use --set for path or k overrides")?;
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(sets)?;
    let k_a = k.unwrap_or(cfg.k_a);
    let k_u = ku.unwrap_or(cfg.k_u);
    let (dtype, _) = checkpoint::peek(&workdir.join("index.bin"))?;
    match dtype {
        Dtype::F32 => recommend_t::<f32>(workdir, &cfg, user, k_a, k_u),
        Dtype::F64 => recommend_t::<f64>(workdir, &cfg, user, k_a, k_u),
    }
}

fn recommend_t<T: Scalar>(
    workdir: &Path,
    cfg: &RunConfig,
    user: i64,
    k_a: usize,
    k_u: usize,
) -> Result<()> {
    let (index, log) = load_query_side::<T>(workdir, cfg)?;
    let dense = log
        .users
        .dense(user)
        .ok_or_else(|| Error::NotFound(format!("user {user} does not appear in the event log")))?;
    let recs = user_cf_recommend(&index, &log, dense, k_u, k_a, cfg.recent_window)?;
    println!("item\tscore");
    for (item, score) in recs {
        println!("{}\t{score:.6}", log.items.orig(item));
    }
    Ok(())
}
