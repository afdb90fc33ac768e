//! Model parameters: storage, naming, initialization.
//!
//! All parameters live in a [`ParamSet`] as `Arc<Mat<T>>` values addressed by
//! slot index. Tapes snapshot parameters through cheap Arc clones; the
//! optimizer mutates them in place via `Arc::make_mut` between steps. Slot
//! creation order is fixed, which fixes the initialization RNG consumption
//! order and therefore the initial weights for a given seed.
//!
//! Tensor names (`items`, `positions`, `tf/l0/h1/wq`, `gat/l0/wo`, `fusion`,
//! ...) are the serialization contract used by checkpoints.

use std::collections::HashMap;
use std::sync::Arc;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{derive_rng, stream, uniform_in};
use crate::scalar::Scalar;

/// Width of the social edge attribute vector:
/// `[ln(1 + shared-train-items), ln(1 + min(degree))]`.
pub const EDGE_ATTR_DIM: usize = 2;

/// Named, slot-addressed parameter storage.
#[derive(Debug, Clone)]
pub struct ParamSet<T: Scalar> {
    names: Vec<String>,
    values: Vec<Arc<Mat<T>>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), values: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> usize {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let slot = self.values.len();
        self.by_name.insert(name.clone(), slot);
        self.names.push(name);
        self.values.push(Arc::new(value));
        slot
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Shared handle for pushing onto a tape.
    pub fn shared(&self, slot: usize) -> Arc<Mat<T>> {
        Arc::clone(&self.values[slot])
    }

    pub fn value(&self, slot: usize) -> &Mat<T> {
        &self.values[slot]
    }

    /// Mutable access for the optimizer. Clones on write only if a tape still
    /// holds the old snapshot (never the case between steps).
    pub fn value_mut(&mut self, slot: usize) -> &mut Mat<T> {
        Arc::make_mut(&mut self.values[slot])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter().map(|v| v.as_ref()))
    }
}

/// Slots of one attention head's projections.
#[derive(Debug, Clone, Copy)]
pub struct HeadSlots {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
}

/// Slots of one transformer layer.
#[derive(Debug, Clone)]
pub struct TfLayerSlots {
    pub heads: Vec<HeadSlots>,
    pub wo: usize,
    pub ffn_w1: usize,
    pub ffn_b1: usize,
    pub ffn_w2: usize,
    pub ffn_b2: usize,
    pub norm1_scale: usize,
    pub norm1_bias: usize,
    pub norm2_scale: usize,
    pub norm2_bias: usize,
}

/// Slots of one graph attention head (projections + edge attribute weights).
#[derive(Debug, Clone, Copy)]
pub struct GatHeadSlots {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub we: usize,
}

/// Slots of one graph attention layer.
#[derive(Debug, Clone)]
pub struct GatLayerSlots {
    pub heads: Vec<GatHeadSlots>,
    pub wo: usize,
}

/// Static shape information of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub d: usize,
    pub heads: usize,
    pub d_s: usize,
    pub m: usize,
    pub l_t: usize,
    pub l_g: usize,
    pub n_items: usize,
}

impl ModelDims {
    pub fn from_config(cfg: &RunConfig, n_items: usize) -> ModelDims {
        ModelDims {
            d: cfg.d,
            heads: cfg.heads,
            d_s: cfg.d_s(),
            m: cfg.m,
            l_t: cfg.l_t,
            l_g: cfg.l_g,
            n_items,
        }
    }
}

/// The full parameter layout.
///
/// Projections are stored for row-vector math: an input row `h (1 x d)` is
/// projected with `h * W (d x d_s)`. The item table has `n_items + 1` rows;
/// row 0 is the padding row, initialized to zero and structurally excluded
/// from gradients, so it stays zero forever.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Scalar> {
    pub dims: ModelDims,
    pub set: ParamSet<T>,
    pub items: usize,
    pub positions: usize,
    pub tf: Vec<TfLayerSlots>,
    pub gat: Vec<GatLayerSlots>,
    pub fusion: usize,
}

fn glorot<T: Scalar>(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Mat<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in m.data_mut() {
        *v = T::from_f64(uniform_in(rng, -bound, bound));
    }
    m
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh parameters for `dims`, deterministically initialized from `seed`
    /// (uniform Glorot for matrices, zeros for biases, ones for norm scales).
    pub fn init(dims: ModelDims, seed: u64) -> ModelParams<T> {
        let mut rng = derive_rng(seed, &[stream::INIT]);
        let mut set = ParamSet::new();

        let mut items_mat: Mat<T> = glorot(&mut rng, dims.n_items + 1, dims.d);
        for v in items_mat.row_mut(0) {
            *v = T::ZERO;
        }
        let items = set.add("items", items_mat);
        let positions = set.add("positions", glorot(&mut rng, dims.m, dims.d));

        let mut tf = Vec::with_capacity(dims.l_t);
        for l in 0..dims.l_t {
            let mut heads = Vec::with_capacity(dims.heads);
            for h in 0..dims.heads {
                heads.push(HeadSlots {
                    wq: set.add(format!("tf/l{l}/h{h}/wq"), glorot(&mut rng, dims.d, dims.d_s)),
                    wk: set.add(format!("tf/l{l}/h{h}/wk"), glorot(&mut rng, dims.d, dims.d_s)),
                    wv: set.add(format!("tf/l{l}/h{h}/wv"), glorot(&mut rng, dims.d, dims.d_s)),
                });
            }
            tf.push(TfLayerSlots {
                heads,
                wo: set.add(format!("tf/l{l}/wo"), glorot(&mut rng, dims.d, dims.d)),
                ffn_w1: set.add(format!("tf/l{l}/ffn_w1"), glorot(&mut rng, dims.d, dims.d)),
                ffn_b1: set.add(format!("tf/l{l}/ffn_b1"), Mat::zeros(1, dims.d)),
                ffn_w2: set.add(format!("tf/l{l}/ffn_w2"), glorot(&mut rng, dims.d, dims.d)),
                ffn_b2: set.add(format!("tf/l{l}/ffn_b2"), Mat::zeros(1, dims.d)),
                norm1_scale: set.add(format!("tf/l{l}/norm1_scale"), ones(dims.d)),
                norm1_bias: set.add(format!("tf/l{l}/norm1_bias"), Mat::zeros(1, dims.d)),
                norm2_scale: set.add(format!("tf/l{l}/norm2_scale"), ones(dims.d)),
                norm2_bias: set.add(format!("tf/l{l}/norm2_bias"), Mat::zeros(1, dims.d)),
            });
        }

        let mut gat = Vec::with_capacity(dims.l_g);
        for l in 0..dims.l_g {
            let mut heads = Vec::with_capacity(dims.heads);
            for h in 0..dims.heads {
                heads.push(GatHeadSlots {
                    wq: set.add(format!("gat/l{l}/h{h}/wq"), glorot(&mut rng, dims.d, dims.d_s)),
                    wk: set.add(format!("gat/l{l}/h{h}/wk"), glorot(&mut rng, dims.d, dims.d_s)),
                    wv: set.add(format!("gat/l{l}/h{h}/wv"), glorot(&mut rng, dims.d, dims.d_s)),
                    we: set.add(format!("gat/l{l}/h{h}/we"), glorot(&mut rng, 1, EDGE_ATTR_DIM)),
                });
            }
            gat.push(GatLayerSlots {
                heads,
                wo: set.add(format!("gat/l{l}/wo"), glorot(&mut rng, dims.d, dims.d)),
            });
        }

        let fusion = set.add("fusion", glorot(&mut rng, 2 * dims.d, dims.d));

        ModelParams { dims, set, items, positions, tf, gat, fusion }
    }

    /// Rebuilds the layout from named tensors (checkpoint load). Shapes are
    /// validated against `dims`; missing or misshapen tensors are errors.
    pub fn from_named(dims: ModelDims, tensors: Vec<(String, Mat<T>)>) -> Result<ModelParams<T>> {
        let mut by_name: HashMap<String, Mat<T>> = tensors.into_iter().collect();
        let mut take = |name: String, rows: usize, cols: usize| -> Result<Mat<T>> {
            let m = by_name
                .remove(&name)
                .ok_or_else(|| Error::NotFound(format!("checkpoint tensor '{name}' missing")))?;
            if m.shape() != (rows, cols) {
                return Err(Error::Invalid(format!(
                    "tensor '{name}' has shape {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(m)
        };

        let mut set = ParamSet::new();
        let items = set.add("items", take("items".into(), dims.n_items + 1, dims.d)?);
        let positions = set.add("positions", take("positions".into(), dims.m, dims.d)?);

        let mut tf = Vec::with_capacity(dims.l_t);
        for l in 0..dims.l_t {
            let mut heads = Vec::with_capacity(dims.heads);
            for h in 0..dims.heads {
                heads.push(HeadSlots {
                    wq: set.add(format!("tf/l{l}/h{h}/wq"), take(format!("tf/l{l}/h{h}/wq"), dims.d, dims.d_s)?),
                    wk: set.add(format!("tf/l{l}/h{h}/wk"), take(format!("tf/l{l}/h{h}/wk"), dims.d, dims.d_s)?),
                    wv: set.add(format!("tf/l{l}/h{h}/wv"), take(format!("tf/l{l}/h{h}/wv"), dims.d, dims.d_s)?),
                });
            }
            tf.push(TfLayerSlots {
                heads,
                wo: set.add(format!("tf/l{l}/wo"), take(format!("tf/l{l}/wo"), dims.d, dims.d)?),
                ffn_w1: set.add(format!("tf/l{l}/ffn_w1"), take(format!("tf/l{l}/ffn_w1"), dims.d, dims.d)?),
                ffn_b1: set.add(format!("tf/l{l}/ffn_b1"), take(format!("tf/l{l}/ffn_b1"), 1, dims.d)?),
                ffn_w2: set.add(format!("tf/l{l}/ffn_w2"), take(format!("tf/l{l}/ffn_w2"), dims.d, dims.d)?),
                ffn_b2: set.add(format!("tf/l{l}/ffn_b2"), take(format!("tf/l{l}/ffn_b2"), 1, dims.d)?),
                norm1_scale: set.add(format!("tf/l{l}/norm1_scale"), take(format!("tf/l{l}/norm1_scale"), 1, dims.d)?),
                norm1_bias: set.add(format!("tf/l{l}/norm1_bias"), take(format!("tf/l{l}/norm1_bias"), 1, dims.d)?),
                norm2_scale: set.add(format!("tf/l{l}/norm2_scale"), take(format!("tf/l{l}/norm2_scale"), 1, dims.d)?),
                norm2_bias: set.add(format!("tf/l{l}/norm2_bias"), take(format!("tf/l{l}/norm2_bias"), 1, dims.d)?),
            });
        }

        let mut gat = Vec::with_capacity(dims.l_g);
        for l in 0..dims.l_g {
            let mut heads = Vec::with_capacity(dims.heads);
            for h in 0..dims.heads {
                heads.push(GatHeadSlots {
                    wq: set.add(format!("gat/l{l}/h{h}/wq"), take(format!("gat/l{l}/h{h}/wq"), dims.d, dims.d_s)?),
                    wk: set.add(format!("gat/l{l}/h{h}/wk"), take(format!("gat/l{l}/h{h}/wk"), dims.d, dims.d_s)?),
                    wv: set.add(format!("gat/l{l}/h{h}/wv"), take(format!("gat/l{l}/h{h}/wv"), dims.d, dims.d_s)?),
                    we: set.add(format!("gat/l{l}/h{h}/we"), take(format!("gat/l{l}/h{h}/we"), 1, EDGE_ATTR_DIM)?),
                });
            }
            gat.push(GatLayerSlots {
                heads,
                wo: set.add(format!("gat/l{l}/wo"), take(format!("gat/l{l}/wo"), dims.d, dims.d)?),
            });
        }

        let fusion = set.add("fusion", take("fusion".into(), 2 * dims.d, dims.d)?);
        Ok(ModelParams { dims, set, items, positions, tf, gat, fusion })
    }
}

fn ones<T: Scalar>(d: usize) -> Mat<T> {
    Mat::from_vec(1, d, vec![T::ONE; d])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> ModelDims {
        ModelDims { d: 8, heads: 2, d_s: 4, m: 5, l_t: 2, l_g: 2, n_items: 7 }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a: ModelParams<f64> = ModelParams::init(tiny_dims(), 9);
        let b: ModelParams<f64> = ModelParams::init(tiny_dims(), 9);
        let c: ModelParams<f64> = ModelParams::init(tiny_dims(), 10);
        for ((na, ma), (nb, mb)) in a.set.iter().zip(b.set.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ma, mb, "{na} differs across identical seeds");
        }
        let differs = a.set.iter().zip(c.set.iter()).any(|((_, ma), (_, mc))| ma != mc);
        assert!(differs, "different seeds should give different weights");
    }

    #[test]
    fn padding_row_initializes_to_zero() {
        let p: ModelParams<f64> = ModelParams::init(tiny_dims(), 1);
        assert!(p.set.value(p.items).row(0).iter().all(|&v| v == 0.0));
        assert!(p.set.value(p.items).row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn named_round_trip_preserves_everything() {
        let p: ModelParams<f64> = ModelParams::init(tiny_dims(), 3);
        let tensors: Vec<(String, Mat<f64>)> =
            p.set.iter().map(|(n, m)| (n.to_string(), m.clone())).collect();
        let q = ModelParams::<f64>::from_named(tiny_dims(), tensors).unwrap();
        for ((na, ma), (nb, mb)) in p.set.iter().zip(q.set.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ma, mb);
        }
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let p: ModelParams<f64> = ModelParams::init(tiny_dims(), 3);
        let tensors: Vec<(String, Mat<f64>)> = p
            .set
            .iter()
            .filter(|(n, _)| *n != "fusion")
            .map(|(n, m)| (n.to_string(), m.clone()))
            .collect();
        assert!(ModelParams::<f64>::from_named(tiny_dims(), tensors).is_err());
    }

    #[test]
    fn shapes_follow_dims() {
        let dims = tiny_dims();
        let p: ModelParams<f64> = ModelParams::init(dims.clone(), 5);
        assert_eq!(p.set.value(p.items).shape(), (8, 8));
        assert_eq!(p.set.value(p.positions).shape(), (5, 8));
        assert_eq!(p.set.value(p.tf[0].heads[0].wq).shape(), (8, 4));
        assert_eq!(p.set.value(p.tf[0].wo).shape(), (8, 8));
        assert_eq!(p.set.value(p.gat[1].heads[1].we).shape(), (1, 2));
        assert_eq!(p.set.value(p.fusion).shape(), (16, 8));
    }
}
