//! Full model assembly: personal encoder, social encoder, fusion, and the
//! negative-sampled training loss.
//!
//! The final user representation depends on the configured variant:
//!
//! * `full` — transformer output and graph-attention output are concatenated
//!   and linearly fused: `rep = [h_personal ; h_social] W_F`.
//! * `transformer_only` — the graph stack is skipped entirely.
//! * `gat_only` — the transformer is removed; level-0 node embeddings are the
//!   mean of the user's recent item embeddings and the representation is the
//!   graph output alone.
//!
//! Scores are inner products between the user representation and item
//! embedding rows. Training minimizes `log sum_j exp(s_j) - s_target` over a
//! candidate set of the target plus shared sampled negatives.

use std::collections::BTreeMap;

use crate::config::{RunConfig, Variant};
use crate::data::events::{EventLog, ItemId, UserId};
use crate::data::sample::SampledSubgraph;
use crate::data::sequences::{sequence_before, BehaviorSequence, TrainInstance};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::params::{ModelDims, ModelParams};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::transformer::{encode_personal, ForwardMode};

/// The pieces of one user's forward pass.
pub struct UserRep {
    /// Transformer output (`None` under `gat_only`).
    pub personal: Option<Var>,
    /// Graph-attention output (`None` under `transformer_only`).
    pub social: Option<Var>,
    /// The representation used for scoring.
    pub rep: Var,
}

/// Model parameters plus the variant that decides how they are wired.
pub struct Model<T: Scalar> {
    pub params: ModelParams<T>,
    pub variant: Variant,
}

impl<T: Scalar> Model<T> {
    pub fn new(params: ModelParams<T>, variant: Variant) -> Self {
        Model { params, variant }
    }

    /// Fresh model with freshly initialized parameters.
    pub fn init(cfg: &RunConfig, n_items: usize) -> Self {
        let dims = ModelDims::from_config(cfg, n_items);
        Model { params: ModelParams::init(dims, cfg.seed), variant: cfg.variant }
    }

    pub fn dims(&self) -> &ModelDims {
        &self.params.dims
    }

    /// Mean of the item-embedding rows of a sequence (`gat_only` base).
    fn mean_item_base(&self, tape: &mut Tape<T>, seq: &BehaviorSequence) -> Var {
        let d = self.params.dims.d;
        let real: Vec<usize> =
            seq.items.iter().filter(|&&it| it != 0).map(|&it| it as usize).collect();
        if real.is_empty() {
            return tape.constant(Mat::zeros(1, d));
        }
        let rows = tape.param_rows(self.params.items, self.params.set.value(self.params.items), &real);
        let w = T::from_f64(1.0 / real.len() as f64);
        let mean_weights = tape.constant(Mat::from_vec(1, real.len(), vec![w; real.len()]));
        tape.matmul(mean_weights, rows)
    }

    /// Level-0 embedding of one subgraph node.
    fn node_base(
        &self,
        tape: &mut Tape<T>,
        seq: &BehaviorSequence,
        mode: &mut ForwardMode,
    ) -> Var {
        match self.variant {
            Variant::GatOnly => self.mean_item_base(tape, seq),
            _ => encode_personal(tape, &self.params, seq, mode).0,
        }
    }

    /// Builds the user representation.
    ///
    /// `root_seq` is the root user's behavior sequence (for a training
    /// instance, the instance context; for inference, the history before the
    /// cut). Friends' sequences are taken from `log` strictly before
    /// `cut_time`. `sub` is required unless the variant is
    /// `transformer_only`.
    pub fn representation(
        &self,
        tape: &mut Tape<T>,
        log: &EventLog,
        sub: Option<&SampledSubgraph>,
        root_seq: &BehaviorSequence,
        cut_time: i64,
        mode: &mut ForwardMode,
    ) -> UserRep {
        let m = self.params.dims.m;
        if self.variant == Variant::TransformerOnly {
            let (personal, _) = encode_personal(tape, &self.params, root_seq, mode);
            return UserRep { personal: Some(personal), social: None, rep: personal };
        }

        let sub = sub.expect("social variants need a sampled subgraph");

        // Root base first (it doubles as the personal embedding), then the
        // remaining subgraph nodes in ascending id order. The fixed order
        // keeps dropout streams reproducible.
        let root_base = self.node_base(tape, root_seq, mode);
        let mut base: BTreeMap<UserId, Var> = BTreeMap::new();
        for &node in sub.depth.keys() {
            if node == sub.root {
                base.insert(node, root_base);
            } else {
                let seq = sequence_before(log, node, cut_time, m);
                base.insert(node, self.node_base(tape, &seq, mode));
            }
        }
        let social = crate::gat::encode_social(tape, &self.params, sub, &base);

        match self.variant {
            Variant::GatOnly => UserRep { personal: None, social: Some(social), rep: social },
            Variant::Full => {
                let joint = tape.concat_cols(&[root_base, social]);
                let fusion = tape.param(self.params.fusion, self.params.set.shared(self.params.fusion));
                let rep = tape.matmul(joint, fusion);
                UserRep { personal: Some(root_base), social: Some(social), rep }
            }
            Variant::TransformerOnly => unreachable!(),
        }
    }

    /// Candidate item list for one instance: the target first, then the
    /// shared negatives with any copies of the target dropped.
    pub fn candidates(target: ItemId, shared_negatives: &[ItemId]) -> Vec<ItemId> {
        let mut cand = Vec::with_capacity(1 + shared_negatives.len());
        cand.push(target);
        cand.extend(shared_negatives.iter().copied().filter(|&j| j != target));
        cand
    }

    /// Negative-sampled softmax loss of one training instance.
    pub fn instance_loss(
        &self,
        tape: &mut Tape<T>,
        log: &EventLog,
        sub: Option<&SampledSubgraph>,
        inst: &TrainInstance,
        shared_negatives: &[ItemId],
        mode: &mut ForwardMode,
    ) -> Var {
        let rep = self
            .representation(tape, log, sub, &inst.seq, inst.cut_time, mode)
            .rep;
        let cand = Self::candidates(inst.target, shared_negatives);
        let rows: Vec<usize> = cand.iter().map(|&it| it as usize).collect();
        let table = tape.param_rows(self.params.items, self.params.set.value(self.params.items), &rows);
        let logits = tape.matmul_nt(rep, table);
        tape.sampled_nll(logits)
    }

    /// Scores every real item against a representation row.
    ///
    /// Returns one score per dense item id; index 0 (the padding row) is
    /// pinned to negative infinity so it can never rank.
    pub fn score_all(&self, rep: &Mat<T>) -> Vec<f64> {
        let items = self.params.set.value(self.params.items);
        assert_eq!(rep.shape(), (1, items.cols()));
        let mut scores = vec![f64::NEG_INFINITY; items.rows()];
        for (id, score) in scores.iter_mut().enumerate().skip(1) {
            *score = crate::mat::dot(rep.row(0), items.row(id)).to_f64();
        }
        scores
    }

    /// Writes the model parameters (no optimizer state) with a config echo.
    pub fn save(&self, path: &std::path::Path, cfg: &RunConfig) -> Result<()> {
        let refs: Vec<(&str, &Mat<T>)> = self.params.set.iter().collect();
        crate::checkpoint::write_tensors(path, &cfg.to_kv_text(), &refs)
    }

    /// Loads a model from any checkpoint (optimizer tensors are ignored).
    /// The returned config is the one echoed into the checkpoint.
    pub fn load(path: &std::path::Path) -> Result<(RunConfig, Model<T>)> {
        let (echo, tensors) = crate::checkpoint::read_tensors::<T>(path)?;
        let cfg = RunConfig::from_kv_text(&echo)?;
        if cfg.precision != T::DTYPE {
            return Err(Error::Invalid(format!(
                "checkpoint config says precision={} but tensors were requested as {}",
                cfg.precision,
                T::DTYPE
            )));
        }
        let items_rows = tensors
            .iter()
            .find(|(n, _)| n == "items")
            .map(|(_, m)| m.rows())
            .ok_or_else(|| Error::NotFound("checkpoint tensor 'items' missing".into()))?;
        let dims = ModelDims::from_config(&cfg, items_rows - 1);
        let model_tensors: Vec<(String, Mat<T>)> =
            tensors.into_iter().filter(|(n, _)| !n.starts_with("opt/")).collect();
        let params = ModelParams::from_named(dims, model_tensors)?;
        let variant = cfg.variant;
        Ok((cfg, Model::new(params, variant)))
    }

    /// Validates that a loaded model matches the requested variant's shape
    /// expectations (used when resuming from a checkpoint).
    pub fn check_variant(&self, requested: Variant) -> Result<()> {
        if self.variant != requested {
            return Err(Error::Invalid(format!(
                "model was trained as variant '{}' but '{}' was requested",
                self.variant, requested
            )));
        }
        Ok(())
    }
}
