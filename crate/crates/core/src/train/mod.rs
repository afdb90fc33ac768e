//! Minibatch training loop.
//!
//! Instances are shuffled once per epoch from a dedicated seed stream, cut
//! into minibatches, and each minibatch shares one sampled negative set.
//! Per-instance gradients are folded in instance order — never in shard
//! partials — so the result is bitwise independent of how many shards the
//! batch is split into. The optimizer then applies one sparse Adam step per
//! minibatch.
//!
//! After every epoch the full training state (parameters, optimizer moments,
//! step and epoch counters, configuration echo) is checkpointed atomically,
//! and one line is appended to the epoch log.

mod adam;
pub mod negatives;

pub use adam::{AdamState, BETA1, BETA2, EPS};
pub use negatives::sample_shared_negatives;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::checkpoint;
use crate::config::{RunConfig, Variant};
use crate::data::events::{EventLog, ItemId};
use crate::data::graph::SocialGraph;
use crate::data::sample::sample_subgraph;
use crate::data::sequences::{build_sequences, TrainInstance};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::Model;
use crate::params::{ModelDims, ModelParams};
use crate::rng::{derive_rng, derive_seed, stream};
use crate::scalar::Scalar;
use crate::tape::{GradBuffer, Tape};
use crate::transformer::ForwardMode;

/// One epoch's summary, as written to the epoch log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Contiguous near-equal split of `0..n` into `shards` ranges. The first
/// `n % shards` ranges carry one extra element; concatenating all ranges in
/// order yields `0..n` exactly.
pub fn shard_ranges(n: usize, shards: usize) -> Vec<Range<usize>> {
    assert!(shards >= 1);
    let base = n / shards;
    let extra = n % shards;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for s in 0..shards {
        let len = base + usize::from(s < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Owns everything one training run needs: config, model, optimizer state,
/// and the materialized training instances.
pub struct Trainer<'a, T: Scalar> {
    pub cfg: RunConfig,
    log: &'a EventLog,
    graph: Option<&'a SocialGraph>,
    pub model: Model<T>,
    pub opt: AdamState<T>,
    pub instances: Vec<TrainInstance>,
    pub epoch: usize,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// Fresh trainer with newly initialized parameters.
    pub fn new(
        cfg: &RunConfig,
        log: &'a EventLog,
        graph: Option<&'a SocialGraph>,
    ) -> Result<Trainer<'a, T>> {
        cfg.validate()?;
        Self::check_precision(cfg)?;
        Self::check_graph(cfg, graph)?;
        let instances = Self::build_instances(cfg, log)?;
        let model = Model::init(cfg, log.n_items());
        let opt = AdamState::new(&model.params.set);
        Ok(Trainer { cfg: cfg.clone(), log, graph, model, opt, instances, epoch: 0 })
    }

    /// Resumes a run from a checkpoint written by [`Trainer::save`]. The
    /// configuration is taken from the checkpoint's echo; the event log must
    /// carry the same item vocabulary the model was trained on.
    pub fn from_checkpoint(
        path: &Path,
        log: &'a EventLog,
        graph: Option<&'a SocialGraph>,
    ) -> Result<Trainer<'a, T>> {
        let (echo, tensors) = checkpoint::read_tensors::<T>(path)?;
        let cfg = RunConfig::from_kv_text(&echo)?;
        cfg.validate()?;
        Self::check_precision(&cfg)?;
        Self::check_graph(&cfg, graph)?;

        let items_rows = tensors
            .iter()
            .find(|(n, _)| n == "items")
            .map(|(_, m)| m.rows())
            .ok_or_else(|| Error::NotFound("checkpoint tensor 'items' missing".into()))?;
        let n_items = items_rows - 1;
        if n_items != log.n_items() {
            return Err(Error::Invalid(format!(
                "checkpoint has {n_items} items but the event log has {}",
                log.n_items()
            )));
        }

        let mut model_tensors = Vec::new();
        let mut opt_tensors: BTreeMap<String, Mat<T>> = BTreeMap::new();
        for (name, mat) in tensors {
            if name.starts_with("opt/") {
                opt_tensors.insert(name, mat);
            } else {
                model_tensors.push((name, mat));
            }
        }
        let dims = ModelDims::from_config(&cfg, n_items);
        let params = ModelParams::from_named(dims, model_tensors)?;

        let scalar_of = |mat: &Mat<T>| mat.get(0, 0).to_f64() as u64;
        let (opt, epoch) = match opt_tensors.remove("opt/step") {
            Some(step_mat) => {
                let epoch = opt_tensors
                    .remove("opt/epoch")
                    .map(|m| scalar_of(&m) as usize)
                    .unwrap_or(0);
                let opt = AdamState::from_named(&params.set, scalar_of(&step_mat), opt_tensors)?;
                (opt, epoch)
            }
            None => (AdamState::new(&params.set), 0),
        };

        let instances = Self::build_instances(&cfg, log)?;
        let model = Model::new(params, cfg.variant);
        Ok(Trainer { cfg, log, graph, model, opt, instances, epoch })
    }

    fn check_precision(cfg: &RunConfig) -> Result<()> {
        if cfg.precision != T::DTYPE {
            return Err(Error::Invalid(format!(
                "config says precision={} but the trainer was instantiated for {}",
                cfg.precision,
                T::DTYPE
            )));
        }
        Ok(())
    }

    fn check_graph(cfg: &RunConfig, graph: Option<&SocialGraph>) -> Result<()> {
        if cfg.variant != Variant::TransformerOnly && graph.is_none() {
            return Err(Error::Invalid(format!(
                "variant '{}' needs a social graph",
                cfg.variant
            )));
        }
        Ok(())
    }

    fn build_instances(cfg: &RunConfig, log: &EventLog) -> Result<Vec<TrainInstance>> {
        let instances = build_sequences(log, cfg.m, cfg.stride);
        if instances.is_empty() {
            return Err(Error::Invalid(
                "no training instances: every user has fewer than two events".into(),
            ));
        }
        Ok(instances)
    }

    /// Forward/backward of one instance; gradients are folded into `buf`.
    fn instance_gradient(
        &self,
        epoch: usize,
        batch_idx: usize,
        pos: usize,
        inst: &TrainInstance,
        negatives: &[ItemId],
        buf: &mut GradBuffer<T>,
    ) -> Result<f64> {
        let sub = match self.cfg.variant {
            Variant::TransformerOnly => None,
            _ => {
                let seed = derive_seed(
                    self.cfg.seed,
                    &[stream::SUBGRAPH, epoch as u64, batch_idx as u64, pos as u64],
                );
                Some(sample_subgraph(
                    self.graph.expect("graph checked at construction"),
                    inst.user,
                    &self.cfg.fanouts,
                    self.cfg.sample_mode,
                    seed,
                ))
            }
        };
        let mut mode = ForwardMode::Train {
            rng: derive_rng(
                self.cfg.seed,
                &[stream::DROPOUT, epoch as u64, batch_idx as u64, pos as u64],
            ),
            dropout: self.cfg.dropout,
        };
        let mut tape = Tape::new();
        let loss =
            self.model
                .instance_loss(&mut tape, self.log, sub.as_ref(), inst, negatives, &mut mode);
        let loss_val = tape.value(loss).get(0, 0).to_f64();
        if !loss_val.is_finite() {
            return Err(Error::NonFiniteGradient {
                tensor: "loss".into(),
                epoch,
                batch: batch_idx,
            });
        }
        tape.backward_into(loss, buf);
        Ok(loss_val)
    }

    /// Mean gradient of one minibatch plus the sum of instance losses.
    ///
    /// Shards are contiguous slices of the batch evaluated one after
    /// another; since gradients fold strictly in instance order, the shard
    /// count cannot change a single bit of the result.
    pub fn batch_gradient(
        &self,
        epoch: usize,
        batch_idx: usize,
        batch: &[usize],
    ) -> Result<(GradBuffer<T>, f64)> {
        let negatives = sample_shared_negatives(
            self.log,
            self.cfg.negatives,
            &mut derive_rng(self.cfg.seed, &[stream::NEGATIVES, epoch as u64, batch_idx as u64]),
        );
        let mut total = GradBuffer::new();
        let mut loss_sum = 0.0;
        for shard in shard_ranges(batch.len(), self.cfg.shards) {
            for pos in shard {
                let inst = &self.instances[batch[pos]];
                loss_sum +=
                    self.instance_gradient(epoch, batch_idx, pos, inst, &negatives, &mut total)?;
            }
        }
        total.scale_assign(T::from_f64(1.0 / batch.len() as f64));
        Ok((total, loss_sum))
    }

    /// Runs one epoch: shuffle, minibatch gradients, Adam steps.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let e = self.epoch;
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..self.instances.len()).collect();
        order.shuffle(&mut derive_rng(self.cfg.seed, &[stream::SHUFFLE, e as u64]));

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let (grads, batch_loss) = self.batch_gradient(e, b, batch)?;
            if let Some(slot) = grads.first_non_finite() {
                return Err(Error::NonFiniteGradient {
                    tensor: self.model.params.set.name(slot).to_string(),
                    epoch: e,
                    batch: b,
                });
            }
            self.opt.apply(&mut self.model.params.set, &grads, self.cfg.lr);
            loss_sum += batch_loss;
        }

        let mean_loss = loss_sum / self.instances.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch: e });
        }
        self.epoch += 1;
        Ok(EpochStats { epoch: e, mean_loss, wall_seconds: t0.elapsed().as_secs_f64() })
    }

    /// Trains until the configured epoch count, checkpointing and logging
    /// after each epoch when a work directory is given. On divergence the
    /// error is returned and the last epoch's checkpoint stays on disk.
    pub fn train(&mut self, workdir: Option<&Path>) -> Result<Vec<EpochStats>> {
        let mut all = Vec::new();
        while self.epoch < self.cfg.epochs {
            let stats = self.run_epoch()?;
            if let Some(dir) = workdir {
                self.save(&dir.join("checkpoint.ckpt"))?;
                append_epoch_log(&dir.join("train_log.tsv"), &stats)?;
            }
            all.push(stats);
        }
        Ok(all)
    }

    /// Writes parameters, optimizer moments and counters into one container.
    pub fn save(&self, path: &Path) -> Result<()> {
        let step_mat = Mat::from_vec(1, 1, vec![T::from_f64(self.opt.step as f64)]);
        let epoch_mat = Mat::from_vec(1, 1, vec![T::from_f64(self.epoch as f64)]);
        let opt_named = self.opt.named_tensors(&self.model.params.set);
        let mut refs: Vec<(&str, &Mat<T>)> = self.model.params.set.iter().collect();
        for (name, mat) in &opt_named {
            refs.push((name.as_str(), mat));
        }
        refs.push(("opt/step", &step_mat));
        refs.push(("opt/epoch", &epoch_mat));
        checkpoint::write_tensors(path, &self.cfg.to_kv_text(), &refs)
    }
}

/// Appends one epoch line to the TSV log, writing the header first if the
/// file does not exist yet.
pub fn append_epoch_log(path: &Path, stats: &EpochStats) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str("epoch\tmean_loss\twall_seconds\n");
    }
    line.push_str(&format!(
        "{}\t{:.12}\t{:.3}\n",
        stats.epoch, stats.mean_loss, stats.wall_seconds
    ));
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::{Event, IdMap};

    fn ring_log(n_users: u32, n_items: u32, events_per_user: usize) -> (EventLog, SocialGraph) {
        let mut users = IdMap::with_base(0);
        for u in 0..n_users {
            users.intern(u as i64);
        }
        let mut items = IdMap::with_base(1);
        for it in 1..=n_items {
            items.intern(it as i64);
        }
        let mut events = Vec::new();
        for u in 0..n_users {
            for k in 0..events_per_user {
                // Each user cycles through its own arithmetic progression.
                let item = 1 + ((u as usize * 3 + k * (1 + u as usize % 2)) % n_items as usize);
                events.push(Event {
                    user: u,
                    item: item as u32,
                    ts: (k as i64) * n_users as i64 + u as i64,
                });
            }
        }
        let log = EventLog::from_dense(events, users, items);
        let edges: Vec<(u32, u32)> =
            (0..n_users).map(|u| (u, (u + 1) % n_users)).collect();
        let graph = SocialGraph::build(&edges, n_users as usize, &log);
        (log, graph)
    }

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.d = 8;
        cfg.heads = 2;
        cfg.m = 4;
        cfg.l_t = 1;
        cfg.l_g = 1;
        cfg.fanouts = vec![2];
        cfg.dropout = 0.1;
        cfg.negatives = 3;
        cfg.batch_size = 8;
        cfg.lr = 0.01;
        cfg.epochs = 2;
        cfg.seed = 5;
        cfg.precision = crate::scalar::Dtype::F64;
        cfg
    }

    fn final_params(t: &Trainer<f64>) -> Vec<Mat<f64>> {
        (0..t.model.params.set.len()).map(|s| t.model.params.set.value(s).clone()).collect()
    }

    #[test]
    fn shard_ranges_partition_the_batch() {
        for n in [0usize, 1, 7, 8, 9, 100] {
            for shards in [1usize, 2, 3, 8] {
                let ranges = shard_ranges(n, shards);
                assert_eq!(ranges.len(), shards);
                let mut next = 0;
                for r in &ranges {
                    assert_eq!(r.start, next);
                    next = r.end;
                }
                assert_eq!(next, n);
                let lens: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
                let (mn, mx) = (lens.iter().min().unwrap(), lens.iter().max().unwrap());
                assert!(mx - mn <= 1, "near-equal split: {lens:?}");
            }
        }
    }

    #[test]
    fn loss_decreases_on_a_tiny_dataset() {
        let (log, graph) = ring_log(4, 6, 6);
        let mut cfg = small_cfg();
        cfg.epochs = 8;
        let mut t: Trainer<f64> = Trainer::new(&cfg, &log, Some(&graph)).unwrap();
        let stats = t.train(None).unwrap();
        assert_eq!(stats.len(), 8);
        assert!(
            stats.last().unwrap().mean_loss < stats[0].mean_loss,
            "loss should fall: first {} last {}",
            stats[0].mean_loss,
            stats.last().unwrap().mean_loss
        );
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let (log, graph) = ring_log(4, 6, 5);
        let cfg = small_cfg();
        let mut a: Trainer<f64> = Trainer::new(&cfg, &log, Some(&graph)).unwrap();
        let sa = a.train(None).unwrap();
        let mut b: Trainer<f64> = Trainer::new(&cfg, &log, Some(&graph)).unwrap();
        let sb = b.train(None).unwrap();
        assert_eq!(final_params(&a), final_params(&b));
        for (x, y) in sa.iter().zip(&sb) {
            assert_eq!(x.mean_loss.to_bits(), y.mean_loss.to_bits());
        }
    }

    #[test]
    fn shard_count_never_changes_the_result() {
        let (log, graph) = ring_log(4, 6, 5);
        let cfg = small_cfg();
        let mut one: Trainer<f64> = Trainer::new(&cfg, &log, Some(&graph)).unwrap();
        one.train(None).unwrap();
        let mut cfg4 = cfg.clone();
        cfg4.shards = 4;
        let mut four: Trainer<f64> = Trainer::new(&cfg4, &log, Some(&graph)).unwrap();
        four.train(None).unwrap();
        assert_eq!(final_params(&one), final_params(&four));
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let (log, graph) = ring_log(4, 6, 5);
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("checkpoint.ckpt");

        let mut cfg3 = small_cfg();
        cfg3.epochs = 3;
        let mut straight: Trainer<f64> = Trainer::new(&cfg3, &log, Some(&graph)).unwrap();
        straight.train(None).unwrap();

        let mut cfg2 = small_cfg();
        cfg2.epochs = 2;
        let mut first: Trainer<f64> = Trainer::new(&cfg2, &log, Some(&graph)).unwrap();
        first.train(None).unwrap();
        first.save(&ckpt).unwrap();

        let mut resumed: Trainer<f64> =
            Trainer::from_checkpoint(&ckpt, &log, Some(&graph)).unwrap();
        assert_eq!(resumed.epoch, 2);
        resumed.cfg.epochs = 3;
        let stats = resumed.train(None).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].epoch, 2);
        assert_eq!(final_params(&straight), final_params(&resumed));
        assert_eq!(straight.opt.step, resumed.opt.step);
    }

    #[test]
    fn transformer_only_trains_without_a_graph() {
        let (log, _) = ring_log(3, 5, 5);
        let mut cfg = small_cfg();
        cfg.variant = Variant::TransformerOnly;
        let mut t: Trainer<f64> = Trainer::new(&cfg, &log, None).unwrap();
        assert!(t.train(None).is_ok());

        // But the social variants refuse to run graphless.
        let cfg_full = small_cfg();
        assert!(Trainer::<f64>::new(&cfg_full, &log, None).is_err());
    }

    #[test]
    fn poisoned_parameters_surface_as_a_gradient_error() {
        let (log, graph) = ring_log(4, 6, 5);
        let cfg = small_cfg();
        let mut t: Trainer<f64> = Trainer::new(&cfg, &log, Some(&graph)).unwrap();
        let slot = t.model.params.items;
        t.model.params.set.value_mut(slot).data_mut()[10] = f64::NAN;
        match t.run_epoch() {
            Err(Error::NonFiniteGradient { epoch, batch, .. }) => {
                assert_eq!(epoch, 0);
                assert_eq!(batch, 0);
            }
            other => panic!("expected a non-finite gradient error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoints_and_epoch_log_land_in_the_workdir() {
        let (log, graph) = ring_log(4, 6, 5);
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let mut t: Trainer<f64> = Trainer::new(&cfg, &log, Some(&graph)).unwrap();
        t.train(Some(dir.path())).unwrap();

        let log_text = std::fs::read_to_string(dir.path().join("train_log.tsv")).unwrap();
        let lines: Vec<&str> = log_text.lines().collect();
        assert_eq!(lines[0], "epoch\tmean_loss\twall_seconds");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0\t"));
        assert!(lines[2].starts_with("1\t"));

        let (cfg_loaded, model) =
            Model::<f64>::load(&dir.path().join("checkpoint.ckpt")).unwrap();
        assert_eq!(cfg_loaded.d, cfg.d);
        assert_eq!(model.dims().n_items, log.n_items());
    }
}
