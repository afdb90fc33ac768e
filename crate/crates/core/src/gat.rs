//! Edge-attributed multi-head graph attention over sampled social
//! neighborhoods.
//!
//! For a node `u` with sampled neighborhood `N(u)`, each head scores every
//! member `w` of `N(u) ∪ {u}` with
//!
//! ```text
//! delta(u, w) = (h_u Wq) . (h_w Wk) + we . e(u, w)
//! ```
//!
//! where `e(u, w)` is the edge attribute vector (the zero vector for the
//! self edge). Scores softmax into attention weights `kappa`, the head
//! output is `GELU(sum_w kappa_w * (h_w Wv))`, heads are concatenated and
//! projected by `Wo`. There is no residual or normalization inside the graph
//! stack — depth is at most two layers.
//!
//! Members are always processed in ascending node-id order, making the
//! computation invariant to neighbor enumeration order down to the bit.

use std::collections::BTreeMap;

use crate::data::events::UserId;
use crate::data::graph::EdgeAttr;
use crate::data::sample::SampledSubgraph;
use crate::mat::Mat;
use crate::params::{GatHeadSlots, GatLayerSlots, ModelParams, EDGE_ATTR_DIM};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

fn attr_const<T: Scalar>(tape: &mut Tape<T>, attr: Option<&EdgeAttr>) -> Var {
    let mut row = [0.0; EDGE_ATTR_DIM];
    if let Some(a) = attr {
        row = *a;
    }
    let vals: Vec<T> = row.iter().map(|&x| T::from_f64(x)).collect();
    tape.constant(Mat::from_vec(1, EDGE_ATTR_DIM, vals))
}

/// Similarity from already-projected query/key rows plus the edge term.
fn similarity_projected<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    we: Var,
    attr: Option<&EdgeAttr>,
) -> Var {
    let s = tape.dot(q, k);
    let a = attr_const(tape, attr);
    let e = tape.dot(we, a);
    tape.add(s, e)
}

/// Attention logit of one head for the pair `(u, w)`.
/// `attr = None` denotes the self edge (zero attribute vector).
pub fn gat_similarity<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    head: &GatHeadSlots,
    h_u: Var,
    h_w: Var,
    attr: Option<&EdgeAttr>,
) -> Var {
    let wq = tape.param(head.wq, params.set.shared(head.wq));
    let wk = tape.param(head.wk, params.set.shared(head.wk));
    let we = tape.param(head.we, params.set.shared(head.we));
    let q = tape.matmul(h_u, wq);
    let k = tape.matmul(h_w, wk);
    similarity_projected(tape, q, k, we, attr)
}

/// Softmax over one node's member logits (`1 x n`, sums to one).
pub fn gat_attention_weights<T: Scalar>(tape: &mut Tape<T>, deltas: &[Var]) -> Var {
    assert!(!deltas.is_empty(), "a node always attends at least to itself");
    let row = tape.concat_cols(deltas);
    tape.softmax_rows(row, false)
}

/// One graph attention layer.
///
/// `inputs` maps node id to its current embedding (`1 x d`);
/// `neighborhoods` maps each *target* node to its sampled neighbor list.
/// Returns embeddings for exactly the target nodes.
pub fn gat_layer<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    layer: &GatLayerSlots,
    inputs: &BTreeMap<UserId, Var>,
    neighborhoods: &BTreeMap<UserId, &Vec<(UserId, EdgeAttr)>>,
) -> BTreeMap<UserId, Var> {
    let mut per_head_out: BTreeMap<UserId, Vec<Var>> = BTreeMap::new();
    for head in &layer.heads {
        let wq = tape.param(head.wq, params.set.shared(head.wq));
        let wk = tape.param(head.wk, params.set.shared(head.wk));
        let wv = tape.param(head.wv, params.set.shared(head.wv));
        let we = tape.param(head.we, params.set.shared(head.we));

        // Keys/values for every node that can be referenced, in id order.
        let mut keys: BTreeMap<UserId, Var> = BTreeMap::new();
        let mut vals: BTreeMap<UserId, Var> = BTreeMap::new();
        for (&node, &h) in inputs {
            keys.insert(node, tape.matmul(h, wk));
            vals.insert(node, tape.matmul(h, wv));
        }

        for (&u, list) in neighborhoods {
            let h_u = *inputs.get(&u).unwrap_or_else(|| panic!("missing embedding for node {u}"));
            let q = tape.matmul(h_u, wq);

            // Members: the node itself plus its sampled neighbors, ascending.
            let mut members: Vec<(UserId, Option<&EdgeAttr>)> =
                list.iter().map(|(v, a)| (*v, Some(a))).collect();
            let pos = members.partition_point(|&(v, _)| v < u);
            members.insert(pos, (u, None));

            let mut deltas = Vec::with_capacity(members.len());
            let mut value_rows = Vec::with_capacity(members.len());
            for &(w, attr) in &members {
                let kw = *keys.get(&w).unwrap_or_else(|| panic!("missing embedding for member {w}"));
                deltas.push(similarity_projected(tape, q, kw, we, attr));
                value_rows.push(*vals.get(&w).expect("member value"));
            }
            let kappa = gat_attention_weights(tape, &deltas);
            let stack = tape.concat_rows(&value_rows);
            let agg = tape.matmul(kappa, stack);
            let out = tape.gelu(agg);
            per_head_out.entry(u).or_default().push(out);
        }
    }

    let wo = tape.param(layer.wo, params.set.shared(layer.wo));
    per_head_out
        .into_iter()
        .map(|(u, heads)| {
            let concat = tape.concat_cols(&heads);
            (u, tape.matmul(concat, wo))
        })
        .collect()
}

/// Runs the full graph attention stack over a sampled subgraph and returns
/// the root's socially-influenced embedding (`1 x d`).
///
/// `base` must hold a level-0 embedding for every node of the subgraph.
pub fn encode_social<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    sub: &SampledSubgraph,
    base: &BTreeMap<UserId, Var>,
) -> Var {
    let l_g = params.gat.len();
    assert_eq!(sub.hops(), l_g, "subgraph depth must match the graph stack");
    for node in sub.depth.keys() {
        assert!(base.contains_key(node), "missing base embedding for node {node}");
    }

    let mut state = base.clone();
    for (t, layer) in params.gat.iter().enumerate() {
        let max_depth = l_g - t - 1;
        let mut hoods: BTreeMap<UserId, &Vec<(UserId, EdgeAttr)>> = BTreeMap::new();
        for (&node, &dep) in &sub.depth {
            if dep <= max_depth {
                hoods.insert(node, sub.neighbors_of(node).expect("expanded node"));
            }
        }
        state = gat_layer(tape, params, layer, &state, &hoods);
    }
    *state.get(&sub.root).expect("root embedding")
}
