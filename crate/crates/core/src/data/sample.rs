//! Layered neighbor sampling around a root user.
//!
//! A [`SampledSubgraph`] is the receptive field of one user for `l_g` rounds
//! of graph attention: `layers[k]` maps every node first reached at depth `k`
//! to its sampled neighbor list (with edge attributes). Nodes first reached
//! at the maximum depth are leaves and carry no list. A node reached through
//! several parents is expanded exactly once, at its shallowest depth.
//!
//! Sampling is uniform or weighted by the shared-item edge attribute, always
//! without replacement, and fully determined by `(graph, root, fanouts, mode,
//! seed)`.

use std::collections::{BTreeMap, BTreeSet};

use super::events::UserId;
use super::graph::{EdgeAttr, SocialGraph};
use crate::config::SampleMode;
use crate::rng::{derive_rng, sample_indices_without_replacement, weighted_indices_without_replacement};

/// One sampled receptive field.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSubgraph {
    pub root: UserId,
    /// `layers[k]`: nodes first reached at depth `k`, each with its sampled
    /// `(neighbor, edge_attr)` list sorted by neighbor id.
    pub layers: Vec<BTreeMap<UserId, Vec<(UserId, EdgeAttr)>>>,
    /// First-reached depth of every node in the subgraph.
    pub depth: BTreeMap<UserId, usize>,
}

impl SampledSubgraph {
    /// All nodes (root, sampled neighbors, their neighbors, ...), ascending.
    pub fn nodes(&self) -> Vec<UserId> {
        self.depth.keys().copied().collect()
    }

    /// Neighbor list of `node`, if it was expanded.
    pub fn neighbors_of(&self, node: UserId) -> Option<&Vec<(UserId, EdgeAttr)>> {
        let d = *self.depth.get(&node)?;
        self.layers.get(d)?.get(&node)
    }

    /// Number of graph attention rounds this subgraph supports.
    pub fn hops(&self) -> usize {
        self.layers.len()
    }
}

/// Samples the receptive field of `root`. `fanouts[k]` bounds the neighbors
/// drawn per node at depth `k`; a fanout at or above the degree keeps the
/// whole neighbor list. The same seed always yields the same subgraph.
pub fn sample_subgraph(
    graph: &SocialGraph,
    root: UserId,
    fanouts: &[usize],
    mode: SampleMode,
    seed: u64,
) -> SampledSubgraph {
    let mut rng = derive_rng(seed, &[crate::rng::stream::SUBGRAPH]);
    let mut layers = Vec::with_capacity(fanouts.len());
    let mut depth: BTreeMap<UserId, usize> = BTreeMap::new();
    depth.insert(root, 0);
    let mut frontier: BTreeSet<UserId> = BTreeSet::from([root]);

    for (k, &fanout) in fanouts.iter().enumerate() {
        let mut layer: BTreeMap<UserId, Vec<(UserId, EdgeAttr)>> = BTreeMap::new();
        let mut next: BTreeSet<UserId> = BTreeSet::new();
        for &node in &frontier {
            let neigh = graph.neighbors(node);
            let chosen_idx = match mode {
                SampleMode::Uniform => sample_indices_without_replacement(&mut rng, neigh.len(), fanout),
                SampleMode::Weighted => {
                    // Co-engagement weights steer the draw, but a friend
                    // without shared items is still a friend: leftover slots
                    // are filled uniformly from the zero-weight neighbors so
                    // weighting never shrinks the receptive field.
                    let weights: Vec<f64> = neigh.iter().map(|&v| graph.attr(node, v)[0]).collect();
                    let mut chosen = weighted_indices_without_replacement(&mut rng, &weights, fanout);
                    if chosen.len() < fanout {
                        let rest: Vec<usize> =
                            (0..neigh.len()).filter(|i| !chosen.contains(i)).collect();
                        let fill = sample_indices_without_replacement(
                            &mut rng,
                            rest.len(),
                            fanout - chosen.len(),
                        );
                        chosen.extend(fill.into_iter().map(|i| rest[i]));
                        chosen.sort_unstable();
                    }
                    chosen
                }
            };
            let list: Vec<(UserId, EdgeAttr)> =
                chosen_idx.iter().map(|&i| (neigh[i], *graph.attr(node, neigh[i]))).collect();
            for &(v, _) in &list {
                if !depth.contains_key(&v) {
                    next.insert(v);
                }
            }
            layer.insert(node, list);
        }
        for &v in &next {
            depth.insert(v, k + 1);
        }
        layers.push(layer);
        frontier = next;
    }

    SampledSubgraph { root, layers, depth }
}
