//! Causal transformer over behavior sequences.
//!
//! The encoder stacks `l_t` identical blocks of multi-head causal
//! self-attention and a GELU feed-forward, each followed by a residual add
//! and layer norm. The user's personal preference embedding is the hidden
//! state at the final window position.
//!
//! Padding: input row `tau` is `item_embedding + position_embedding[tau]`;
//! padded slots contribute only their position embedding because the padding
//! item row is all zeros — and those slots never enter parameter gradients
//! because padded positions are materialized as constants, not table gathers.

use rand_chacha::ChaCha8Rng;

use crate::data::sequences::BehaviorSequence;
use crate::mat::Mat;
use crate::params::{ModelParams, TfLayerSlots};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Whether a forward pass is for training (dropout active, fed by a
/// deterministic per-instance stream) or inference (dropout off).
pub enum ForwardMode {
    Infer,
    Train { rng: ChaCha8Rng, dropout: f64 },
}

impl ForwardMode {
    /// Applies dropout in training mode; identity otherwise.
    pub fn dropout<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            ForwardMode::Infer => x,
            ForwardMode::Train { rng, dropout } => tape.dropout(x, *dropout, rng),
        }
    }
}

/// Input embedding: gathered item rows plus the position table.
/// Padded slots (always a prefix, item id 0) become constant zero rows.
pub fn embed_input<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    seq: &BehaviorSequence,
) -> Var {
    let m = seq.m();
    assert_eq!(m, params.dims.m, "sequence length must match the model window");
    let d = params.dims.d;
    let pad = m - seq.true_length;
    let real: Vec<usize> = seq.items[pad..].iter().map(|&i| i as usize).collect();
    debug_assert!(real.iter().all(|&i| i != 0), "real items must be non-padding");

    let base = if seq.true_length == 0 {
        tape.constant(Mat::zeros(m, d))
    } else if pad == 0 {
        tape.param_rows(params.items, params.set.value(params.items), &real)
    } else {
        let zeros = tape.constant(Mat::zeros(pad, d));
        let rows = tape.param_rows(params.items, params.set.value(params.items), &real);
        tape.concat_rows(&[zeros, rows])
    };
    let pos = tape.param(params.positions, params.set.shared(params.positions));
    tape.add(base, pos)
}

/// Scaled dot-product attention weights: `softmax(Q K^T / sqrt(d_s))`,
/// causal when requested.
pub fn attention_weights<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, causal: bool) -> Var {
    let d_s = tape.value(q).cols();
    let scores = tape.matmul_nt(q, k);
    let scaled = tape.scale(scores, T::from_f64(1.0 / (d_s as f64).sqrt()));
    tape.softmax_rows(scaled, causal)
}

/// Full scaled dot-product attention readout.
pub fn scaled_dot_attention<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, causal: bool) -> Var {
    let w = attention_weights(tape, q, k, causal);
    if causal {
        tape.attend_causal(w, v)
    } else {
        tape.matmul(w, v)
    }
}

/// One multi-head causal self-attention sublayer (projections per head,
/// concatenation, output projection). Dropout (training only) is applied to
/// the attention weights.
pub fn multi_head_layer<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    layer: &TfLayerSlots,
    h: Var,
    mode: &mut ForwardMode,
) -> Var {
    let d_s = params.dims.d_s;
    let mut heads = Vec::with_capacity(layer.heads.len());
    for hs in &layer.heads {
        let wq = tape.param(hs.wq, params.set.shared(hs.wq));
        let wk = tape.param(hs.wk, params.set.shared(hs.wk));
        let wv = tape.param(hs.wv, params.set.shared(hs.wv));
        let q = tape.matmul(h, wq);
        let k = tape.matmul(h, wk);
        let v = tape.matmul(h, wv);
        debug_assert_eq!(tape.value(q).cols(), d_s);
        let w = attention_weights(tape, q, k, true);
        let w = mode.dropout(tape, w);
        heads.push(tape.attend_causal(w, v));
    }
    let concat = tape.concat_cols(&heads);
    let wo = tape.param(layer.wo, params.set.shared(layer.wo));
    tape.matmul(concat, wo)
}

/// Position-wise feed-forward: `GELU(x W1 + b1) W2 + b2`, with dropout on
/// the output during training.
pub fn ffn<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    layer: &TfLayerSlots,
    x: Var,
    mode: &mut ForwardMode,
) -> Var {
    let w1 = tape.param(layer.ffn_w1, params.set.shared(layer.ffn_w1));
    let b1 = tape.param(layer.ffn_b1, params.set.shared(layer.ffn_b1));
    let w2 = tape.param(layer.ffn_w2, params.set.shared(layer.ffn_w2));
    let b2 = tape.param(layer.ffn_b2, params.set.shared(layer.ffn_b2));
    let a1 = tape.matmul(x, w1);
    let a1 = tape.add_bias(a1, b1);
    let g = tape.gelu(a1);
    let a2 = tape.matmul(g, w2);
    let a2 = tape.add_bias(a2, b2);
    mode.dropout(tape, a2)
}

/// Residual add followed by layer norm with the given learned scale/bias.
pub fn add_norm<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    scale_slot: usize,
    bias_slot: usize,
    residual: Var,
    sublayer: Var,
) -> Var {
    let sum = tape.add(residual, sublayer);
    let scale = tape.param(scale_slot, params.set.shared(scale_slot));
    let bias = tape.param(bias_slot, params.set.shared(bias_slot));
    tape.layer_norm(sum, scale, bias)
}

/// Encodes a behavior sequence into the personal preference embedding
/// (`1 x d`, the final-position hidden state after `l_t` blocks).
///
/// An all-padding sequence encodes to the zero vector by definition; the
/// returned flag reports that case so callers can warn.
pub fn encode_personal<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    seq: &BehaviorSequence,
    mode: &mut ForwardMode,
) -> (Var, bool) {
    if seq.is_all_padding() {
        return (tape.constant(Mat::zeros(1, params.dims.d)), true);
    }
    let mut h = embed_input(tape, params, seq);
    for layer in &params.tf {
        let a = multi_head_layer(tape, params, layer, h, mode);
        let h1 = add_norm(tape, params, layer.norm1_scale, layer.norm1_bias, h, a);
        let f = ffn(tape, params, layer, h1, mode);
        h = add_norm(tape, params, layer.norm2_scale, layer.norm2_bias, h1, f);
    }
    (tape.row_slice(h, params.dims.m - 1), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ModelDims, ModelParams};

    fn dims(d: usize, heads: usize, m: usize, l_t: usize, n_items: usize) -> ModelDims {
        ModelDims { d, heads, d_s: d / heads, m, l_t, l_g: 1, n_items }
    }

    /// Parameters where we can overwrite tensors for hand examples.
    fn params_with(dims: ModelDims, seed: u64) -> ModelParams<f64> {
        ModelParams::init(dims, seed)
    }

    #[test]
    fn embed_adds_item_and_position_rows() {
        let mut p = params_with(dims(2, 1, 2, 1, 3), 0);
        *p.set.value_mut(p.items) = Mat::from_rows_f64(&[
            &[0.0, 0.0],
            &[1.0, 2.0],
            &[10.0, 20.0],
            &[100.0, 200.0],
        ]);
        *p.set.value_mut(p.positions) = Mat::from_rows_f64(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let mut tape = Tape::new();
        let seq = BehaviorSequence { items: vec![1, 3], true_length: 2 };
        let h0 = embed_input(&mut tape, &p, &seq);
        assert_eq!(tape.value(h0).row(0), &[1.1, 2.2]);
        assert_eq!(tape.value(h0).row(1), &[100.3, 200.4]);
    }

    #[test]
    fn padded_prefix_contributes_position_only() {
        let mut p = params_with(dims(2, 1, 3, 1, 2), 0);
        *p.set.value_mut(p.positions) =
            Mat::from_rows_f64(&[&[0.5, -0.5], &[0.25, 0.75], &[1.0, 1.0]]);
        let mut tape = Tape::new();
        let seq = BehaviorSequence { items: vec![0, 0, 1], true_length: 1 };
        let h0 = embed_input(&mut tape, &p, &seq);
        assert_eq!(tape.value(h0).row(0), &[0.5, -0.5]);
        assert_eq!(tape.value(h0).row(1), &[0.25, 0.75]);
    }

    #[test]
    fn single_position_attention_returns_the_value_row() {
        let mut tape: Tape<f64> = Tape::new();
        let q = tape.constant(Mat::from_rows_f64(&[&[3.0, -1.0]]));
        let k = tape.constant(Mat::from_rows_f64(&[&[0.5, 2.0]]));
        let v = tape.constant(Mat::from_rows_f64(&[&[7.0, 8.0]]));
        let y = scaled_dot_attention(&mut tape, q, k, v, true);
        assert_eq!(tape.value(y).row(0), &[7.0, 8.0]);
    }

    #[test]
    fn identical_keys_average_the_visible_values() {
        // All keys equal: every visible position gets weight 1/(i+1), so row
        // i of the output is the running mean of value rows 0..=i.
        let mut tape: Tape<f64> = Tape::new();
        let q = tape.constant(Mat::from_rows_f64(&[&[1.0, 0.0], &[2.0, 1.0], &[0.0, 1.0]]));
        let k = tape.constant(Mat::from_rows_f64(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]));
        let v = tape.constant(Mat::from_rows_f64(&[&[3.0, 0.0], &[0.0, 3.0], &[6.0, 6.0]]));
        let y = scaled_dot_attention(&mut tape, q, k, v, true);
        let yv = tape.value(y);
        assert_eq!(yv.row(0), &[3.0, 0.0]);
        assert!((yv.get(1, 0) - 1.5).abs() < 1e-12);
        assert!((yv.get(1, 1) - 1.5).abs() < 1e-12);
        assert!((yv.get(2, 0) - 3.0).abs() < 1e-12);
        assert!((yv.get(2, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_head_with_identity_output_matches_plain_attention() {
        let d = params_with(dims(4, 1, 3, 1, 5), 7);
        let mut p = d;
        *p.set.value_mut(p.tf[0].wo) = Mat::identity(4);
        let h_in = Mat::from_rows_f64(&[
            &[0.3, -0.2, 0.5, 0.1],
            &[0.0, 0.4, -0.6, 0.2],
            &[0.7, 0.7, 0.1, -0.3],
        ]);
        let mut tape = Tape::new();
        let h = tape.constant(h_in.clone());
        let mut mode = ForwardMode::Infer;
        let a = multi_head_layer(&mut tape, &p, &p.tf[0].clone(), h, &mut mode);

        let mut tape2 = Tape::new();
        let h2 = tape2.constant(h_in);
        let hs = p.tf[0].heads[0];
        let wq = tape2.constant(p.set.value(hs.wq).clone());
        let wk = tape2.constant(p.set.value(hs.wk).clone());
        let wv = tape2.constant(p.set.value(hs.wv).clone());
        let q = tape2.matmul(h2, wq);
        let k = tape2.matmul(h2, wk);
        let v = tape2.matmul(h2, wv);
        let y = scaled_dot_attention(&mut tape2, q, k, v, true);
        assert_eq!(tape.value(a), tape2.value(y));
    }

    #[test]
    fn zero_value_projection_gives_zero_attention_output() {
        let mut p = params_with(dims(4, 2, 2, 1, 5), 3);
        for hs in p.tf[0].heads.clone() {
            *p.set.value_mut(hs.wv) = Mat::zeros(4, 2);
        }
        *p.set.value_mut(p.tf[0].wo) = Mat::identity(4);
        let mut tape = Tape::new();
        let h = tape.constant(Mat::from_rows_f64(&[&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]]));
        let mut mode = ForwardMode::Infer;
        let a = multi_head_layer(&mut tape, &p, &p.tf[0].clone(), h, &mut mode);
        assert!(tape.value(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_heads_match_independent_reference_computation() {
        let p = params_with(dims(4, 2, 3, 1, 6), 11);
        let h_in = Mat::from_rows_f64(&[
            &[0.1, -0.4, 0.2, 0.9],
            &[-0.3, 0.8, 0.5, -0.1],
            &[0.6, 0.0, -0.7, 0.3],
        ]);
        let mut tape = Tape::new();
        let h = tape.constant(h_in.clone());
        let mut mode = ForwardMode::Infer;
        let got = multi_head_layer(&mut tape, &p, &p.tf[0].clone(), h, &mut mode);

        // Reference: per-head causal attention with explicit loops.
        let mut concat = Mat::<f64>::zeros(3, 4);
        for (hidx, hs) in p.tf[0].heads.iter().enumerate() {
            let q = h_in.matmul(p.set.value(hs.wq));
            let k = h_in.matmul(p.set.value(hs.wk));
            let v = h_in.matmul(p.set.value(hs.wv));
            for i in 0..3 {
                let logits: Vec<f64> =
                    (0..=i).map(|j| crate::mat::dot(q.row(i), k.row(j)) / 2.0f64.sqrt()).collect();
                let w = crate::mat::softmax_slice(&logits);
                for c in 0..2 {
                    let mut s = 0.0;
                    for j in 0..=i {
                        s += w[j] * v.get(j, c);
                    }
                    concat.set(i, hidx * 2 + c, s);
                }
            }
        }
        let reference = concat.matmul(p.set.value(p.tf[0].wo));
        let gv = tape.value(got);
        for i in 0..3 {
            for j in 0..4 {
                assert!(
                    (gv.get(i, j) - reference.get(i, j)).abs() < 1e-12,
                    "({i},{j}): {} vs {}",
                    gv.get(i, j),
                    reference.get(i, j)
                );
            }
        }
    }

    #[test]
    fn ffn_with_identity_weights_is_gelu() {
        let mut p = params_with(dims(2, 1, 2, 1, 3), 0);
        *p.set.value_mut(p.tf[0].ffn_w1) = Mat::identity(2);
        *p.set.value_mut(p.tf[0].ffn_w2) = Mat::identity(2);
        // Biases are zero from init.
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_rows_f64(&[&[1.0, -1.0]]));
        let mut mode = ForwardMode::Infer;
        let y = ffn(&mut tape, &p, &p.tf[0].clone(), x, &mut mode);
        assert!((tape.value(y).get(0, 0) - crate::scalar::gelu(1.0)).abs() < 1e-15);
        assert!((tape.value(y).get(0, 1) - crate::scalar::gelu(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn add_norm_of_constant_row_returns_the_bias() {
        let mut p = params_with(dims(3, 1, 2, 1, 3), 0);
        *p.set.value_mut(p.tf[0].norm1_bias) = Mat::from_rows_f64(&[&[0.5, -1.0, 2.0]]);
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_rows_f64(&[&[2.0, 2.0, 2.0]]));
        let z = tape.constant(Mat::zeros(1, 3));
        let y = add_norm(&mut tape, &p, p.tf[0].norm1_scale, p.tf[0].norm1_bias, x, z);
        // Zero variance: normalized coordinates are exactly 0, output = bias.
        assert_eq!(tape.value(y).row(0), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn add_norm_standardizes_and_centers() {
        let p = params_with(dims(2, 1, 2, 1, 3), 0);
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_rows_f64(&[&[-1.0, 1.0]]));
        let z = tape.constant(Mat::zeros(1, 2));
        let y = add_norm(&mut tape, &p, p.tf[0].norm1_scale, p.tf[0].norm1_bias, x, z);
        let yv = tape.value(y);
        // Unit-ish magnitude (epsilon shrinks it slightly) and exact zero mean.
        assert!((yv.get(0, 0) + 1.0).abs() < 1e-5);
        assert!((yv.get(0, 1) - 1.0).abs() < 1e-5);
        assert_eq!(yv.get(0, 0) + yv.get(0, 1), 0.0);
    }

    #[test]
    fn all_padding_sequence_encodes_to_zero() {
        let p = params_with(dims(4, 2, 3, 2, 5), 13);
        let mut tape = Tape::new();
        let mut mode = ForwardMode::Infer;
        let seq = BehaviorSequence { items: vec![0, 0, 0], true_length: 0 };
        let (h, all_pad) = encode_personal(&mut tape, &p, &seq, &mut mode);
        assert!(all_pad);
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_sequences_encode_identically_bitwise() {
        let p = params_with(dims(8, 2, 4, 2, 9), 21);
        let seq = BehaviorSequence { items: vec![0, 3, 7, 2], true_length: 3 };
        let mut t1 = Tape::new();
        let mut m1 = ForwardMode::Infer;
        let (h1, _) = encode_personal(&mut t1, &p, &seq, &mut m1);
        let mut t2 = Tape::new();
        let mut m2 = ForwardMode::Infer;
        let (h2, _) = encode_personal(&mut t2, &p, &seq, &mut m2);
        assert_eq!(t1.value(h1), t2.value(h2));
    }

    #[test]
    fn encoder_output_shape_is_one_by_d() {
        let p = params_with(dims(8, 2, 5, 3, 9), 2);
        let mut tape = Tape::new();
        let mut mode = ForwardMode::Infer;
        let seq = BehaviorSequence { items: vec![1, 2, 3, 4, 5], true_length: 5 };
        let (h, all_pad) = encode_personal(&mut tape, &p, &seq, &mut mode);
        assert!(!all_pad);
        assert_eq!(tape.value(h).shape(), (1, 8));
    }
}
