//! Reverse-mode automatic differentiation on a linear tape.
//!
//! The model builds its forward pass by pushing operations onto a [`Tape`];
//! values are computed eagerly and [`Tape::backward_into`] replays the tape in
//! reverse to accumulate gradients. Two properties matter beyond correctness:
//!
//! * **Bitwise causality.** The causal softmax and causal attention ops never
//!   read values at masked (future) positions, so output row `i` is a function
//!   of input rows `0..=i` down to the bit level, not merely up to rounding.
//! * **Deterministic accumulation.** Backward is one reverse scan with fixed
//!   iteration order everywhere, so gradients for a fixed tape are
//!   bit-reproducible.
//!
//! Parameters enter the tape either whole ([`Tape::param`]) or as gathered
//! rows of an embedding table ([`Tape::param_rows`]); gradients land in a
//! [`GradBuffer`] that is dense for the former and row-sparse for the latter.
//! Every parameter pushed onto a tape is marked as touched in the buffer even
//! if its gradient is zero — "touched" means "participated in the computation
//! graph", which is what the sparse optimizer keys on.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::mat::{dot, Mat};
use crate::scalar::{gelu, gelu_grad, Scalar};

/// Epsilon inside the layer-norm standard deviation.
pub const LN_EPS: f64 = 1e-6;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Const,
    Param { slot: usize },
    ParamRows { slot: usize, rows: Vec<usize> },
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Dot(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowSlice(Var, usize),
    SoftmaxRows { x: Var, causal: bool },
    AttendCausal { w: Var, v: Var },
    LayerNorm { x: Var, scale: Var, bias: Var, xhat: Mat<T>, inv_std: Vec<T> },
    Gelu(Var),
    Dropout { x: Var, mask: Mat<T> },
    SampledNll { logits: Var },
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Arc<Mat<T>>,
}

/// Gradients of one or more tapes, keyed by parameter slot.
///
/// `dense` holds whole-tensor gradients, `sparse` holds per-row gradients for
/// embedding tables. Presence of a key (even with an all-zero value) means the
/// parameter — or table row — was touched.
#[derive(Debug, Clone, Default)]
pub struct GradBuffer<T: Scalar> {
    pub dense: BTreeMap<usize, Mat<T>>,
    pub sparse: BTreeMap<usize, BTreeMap<usize, Vec<T>>>,
}

impl<T: Scalar> GradBuffer<T> {
    pub fn new() -> Self {
        GradBuffer { dense: BTreeMap::new(), sparse: BTreeMap::new() }
    }

    /// Folds `other` into `self`. Used to combine per-instance gradients in
    /// batch order; element-wise adds are independent across parameters so
    /// the fold order across slots does not affect bits, while the fold order
    /// across instances does and is fixed by the caller.
    pub fn accumulate(&mut self, other: &GradBuffer<T>) {
        for (&slot, g) in &other.dense {
            match self.dense.get_mut(&slot) {
                Some(m) => m.add_scaled_assign(g, T::ONE),
                None => {
                    self.dense.insert(slot, g.clone());
                }
            }
        }
        for (&slot, rows) in &other.sparse {
            let dst = self.sparse.entry(slot).or_default();
            for (&r, g) in rows {
                match dst.get_mut(&r) {
                    Some(v) => {
                        for (a, &b) in v.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                    None => {
                        dst.insert(r, g.clone());
                    }
                }
            }
        }
    }

    /// Multiplies every gradient by `c` (e.g. `1/batch_size`).
    pub fn scale_assign(&mut self, c: T) {
        for g in self.dense.values_mut() {
            g.scale_assign(c);
        }
        for rows in self.sparse.values_mut() {
            for g in rows.values_mut() {
                for x in g.iter_mut() {
                    *x *= c;
                }
            }
        }
    }

    /// Returns the slot of the first non-finite gradient, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        for (&slot, g) in &self.dense {
            if !g.is_finite() {
                return Some(slot);
            }
        }
        for (&slot, rows) in &self.sparse {
            if rows.values().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Some(slot);
            }
        }
        None
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty() && self.sparse.is_empty()
    }
}

/// Linear autodiff tape.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<T>, value: Mat<T>) -> Var {
        self.push_shared(op, Arc::new(value))
    }

    fn push_shared(&mut self, op: Op<T>, value: Arc<Mat<T>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// A value with no gradient.
    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(Op::Const, value)
    }

    /// A whole parameter tensor. `value` is the parameter's current storage;
    /// the Arc clone is cheap and guarantees the tape sees a stable snapshot.
    pub fn param(&mut self, slot: usize, value: Arc<Mat<T>>) -> Var {
        self.push_shared(Op::Param { slot }, value)
    }

    /// Gathered rows of an embedding table parameter. Output row `i` is
    /// `table[rows[i]]`; gradients scatter-add back to those rows.
    pub fn param_rows(&mut self, slot: usize, table: &Mat<T>, rows: &[usize]) -> Var {
        let mut out = Mat::zeros(rows.len(), table.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        self.push(Op::ParamRows { slot, rows: rows.to_vec() }, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), value)
    }

    /// `a + b` where `b` is a `1 x n` bias broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (x, &y) in row.iter_mut().zip(bv.row(0)) {
                *x += y;
            }
        }
        self.push(Op::AddBias(a, b), out)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNT(a, b), value)
    }

    /// Dot product of two `1 x n` rows, producing `1 x 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), 1, "dot expects row vectors");
        assert_eq!(bv.rows(), 1, "dot expects row vectors");
        assert_eq!(av.cols(), bv.cols(), "dot length mismatch");
        let value = Mat::from_vec(1, 1, vec![dot(av.row(0), bv.row(0))]);
        self.push(Op::Dot(a, b), value)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[at..at + pv.cols()].copy_from_slice(pv.row(r));
                at += pv.cols();
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows col mismatch");
            for r in 0..pv.rows() {
                out.row_mut(at + r).copy_from_slice(pv.row(r));
            }
            at += pv.rows();
        }
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    /// Extracts row `r` as a `1 x n` value.
    pub fn row_slice(&mut self, a: Var, r: usize) -> Var {
        let av = self.value(a);
        assert!(r < av.rows(), "row {r} out of {}", av.rows());
        let value = Mat::from_vec(1, av.cols(), av.row(r).to_vec());
        self.push(Op::RowSlice(a, r), value)
    }

    /// Row-wise softmax. With `causal = true`, row `i` normalizes only over
    /// columns `0..=i`; masked columns are exactly `0.0` and are never read,
    /// which makes causality hold bitwise rather than approximately.
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if causal {
            assert_eq!(rows, cols, "causal softmax expects square scores");
        }
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let end = if causal { (i + 1).min(cols) } else { cols };
            let xin = &xv.row(i)[..end];
            let mut mx = xin[0];
            for &v in &xin[1..] {
                mx = mx.max(v);
            }
            let orow = out.row_mut(i);
            let mut sum = T::ZERO;
            for j in 0..end {
                let e = (xin[j] - mx).exp();
                orow[j] = e;
                sum += e;
            }
            for o in orow[..end].iter_mut() {
                *o = *o / sum;
            }
        }
        self.push(Op::SoftmaxRows { x, causal }, out)
    }

    /// Causal attention readout: `y[i] = sum_{j<=i} w[i][j] * v[j]`.
    /// Rows of `v` at positions `> i` are never read when computing `y[i]`.
    pub fn attend_causal(&mut self, w: Var, v: Var) -> Var {
        let (wv, vv) = (self.value(w), self.value(v));
        assert_eq!(wv.rows(), wv.cols(), "attention weights must be square");
        assert_eq!(wv.cols(), vv.rows(), "weights/values mismatch");
        let mut out = Mat::zeros(wv.rows(), vv.cols());
        for i in 0..wv.rows() {
            let wrow = wv.row(i);
            for j in 0..=i {
                let wij = wrow[j];
                let vrow = vv.row(j);
                let orow = out.row_mut(i);
                for (o, &x) in orow.iter_mut().zip(vrow) {
                    *o += wij * x;
                }
            }
        }
        self.push(Op::AttendCausal { w, v }, out)
    }

    /// Layer normalization over each row with learned element-wise scale and
    /// bias (`1 x d` each) and epsilon [`LN_EPS`] inside the square root.
    pub fn layer_norm(&mut self, x: Var, scale: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, d) = xv.shape();
        let sv = self.value(scale);
        let bv = self.value(bias);
        assert_eq!(sv.shape(), (1, d), "norm scale shape");
        assert_eq!(bv.shape(), (1, d), "norm bias shape");
        let eps = T::from_f64(LN_EPS);
        let inv_d = T::ONE / T::from_f64(d as f64);
        let mut xhat = Mat::zeros(rows, d);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Mat::zeros(rows, d);
        for i in 0..rows {
            let row = xv.row(i);
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let istd = T::ONE / (var + eps).sqrt();
            inv_std.push(istd);
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat.set(i, j, xh);
                out.set(i, j, sv.get(0, j) * xh + bv.get(0, j));
            }
        }
        self.push(Op::LayerNorm { x, scale, bias, xhat, inv_std }, out)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        self.push(Op::Gelu(a), value)
    }

    /// Inverted dropout with keep-probability `1 - p`. Kept entries are
    /// scaled by `1/(1-p)` so the expectation is unchanged; `p = 0` is the
    /// identity. Only used during training — inference builders skip it.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        assert!(p < 1.0, "dropout probability must be < 1");
        let keep = T::from_f64(1.0 / (1.0 - p));
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut mask = Mat::zeros(rows, cols);
        for v in mask.data_mut() {
            if rng.random::<f64>() >= p {
                *v = keep;
            }
        }
        let mut out = xv.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(mask.data()) {
            *o *= m;
        }
        self.push(Op::Dropout { x, mask }, out)
    }

    /// Negative log-likelihood of class 0 among the given logits:
    /// `logsumexp(logits) - logits[0]`. The caller puts the positive item at
    /// index 0 and negatives after it. Always non-negative.
    pub fn sampled_nll(&mut self, logits: Var) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), 1, "logits must be a row vector");
        assert!(lv.cols() >= 1);
        let row = lv.row(0);
        let loss = crate::mat::logsumexp(row) - row[0];
        self.push(Op::SampledNll { logits }, Mat::from_vec(1, 1, vec![loss]))
    }

    /// Runs reverse-mode accumulation from a scalar `loss` into `buf`.
    ///
    /// Every `param`/`param_rows` node on the tape is marked touched in `buf`
    /// (zero entries are created before adjoints are added), so the buffer
    /// doubles as the "parameters participating in this step" set.
    pub fn backward_into(&self, loss: Var, buf: &mut GradBuffer<T>) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        for node in &self.nodes {
            match &node.op {
                Op::Param { slot } => {
                    let (r, c) = node.value.shape();
                    buf.dense.entry(*slot).or_insert_with(|| Mat::zeros(r, c));
                }
                Op::ParamRows { slot, rows } => {
                    let cols = node.value.cols();
                    let entry = buf.sparse.entry(*slot).or_default();
                    for &r in rows {
                        entry.entry(r).or_insert_with(|| vec![T::ZERO; cols]);
                    }
                }
                _ => {}
            }
        }

        let mut adj: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Mat::from_vec(1, 1, vec![T::ONE]));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Param { slot } => {
                    buf.dense.get_mut(slot).unwrap().add_scaled_assign(&g, T::ONE);
                }
                Op::ParamRows { slot, rows } => {
                    let entry = buf.sparse.get_mut(slot).unwrap();
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = entry.get_mut(&r).unwrap();
                        for (a, &b) in dst.iter_mut().zip(g.row(i)) {
                            *a += b;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_adj(&mut adj, *a, g.clone());
                    add_adj(&mut adj, *b, g);
                }
                Op::AddBias(a, b) => {
                    add_adj(&mut adj, *b, g.col_sum());
                    add_adj(&mut adj, *a, g);
                }
                Op::Scale(a, c) => {
                    add_adj(&mut adj, *a, g.scale(*c));
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    add_adj(&mut adj, *a, g.matmul_nt(bv));
                    add_adj(&mut adj, *b, av.matmul_tn(&g));
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    add_adj(&mut adj, *a, g.matmul(bv));
                    add_adj(&mut adj, *b, g.matmul_tn(av));
                }
                Op::Dot(a, b) => {
                    let s = g.get(0, 0);
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    add_adj(&mut adj, *a, bv.scale(s));
                    add_adj(&mut adj, *b, av.scale(s));
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let pv = &self.nodes[p.0].value;
                        let mut dp = Mat::zeros(pv.rows(), pv.cols());
                        for r in 0..pv.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[at..at + pv.cols()]);
                        }
                        at += pv.cols();
                        add_adj(&mut adj, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let pv = &self.nodes[p.0].value;
                        let mut dp = Mat::zeros(pv.rows(), pv.cols());
                        for r in 0..pv.rows() {
                            dp.row_mut(r).copy_from_slice(g.row(at + r));
                        }
                        at += pv.rows();
                        add_adj(&mut adj, p, dp);
                    }
                }
                Op::RowSlice(a, r) => {
                    let av = &self.nodes[a.0].value;
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    da.row_mut(*r).copy_from_slice(g.row(0));
                    add_adj(&mut adj, *a, da);
                }
                Op::SoftmaxRows { x, causal } => {
                    let y = &self.nodes[id].value;
                    let (rows, cols) = y.shape();
                    let mut dx = Mat::zeros(rows, cols);
                    for i in 0..rows {
                        let end = if *causal { (i + 1).min(cols) } else { cols };
                        let yrow = y.row(i);
                        let grow = g.row(i);
                        let mut s = T::ZERO;
                        for j in 0..end {
                            s += grow[j] * yrow[j];
                        }
                        let drow = dx.row_mut(i);
                        for j in 0..end {
                            drow[j] = yrow[j] * (grow[j] - s);
                        }
                    }
                    add_adj(&mut adj, *x, dx);
                }
                Op::AttendCausal { w, v } => {
                    let (wv, vv) = (&self.nodes[w.0].value, &self.nodes[v.0].value);
                    let mut dw = Mat::zeros(wv.rows(), wv.cols());
                    let mut dv = Mat::zeros(vv.rows(), vv.cols());
                    for i in 0..wv.rows() {
                        let grow = g.row(i);
                        for j in 0..=i {
                            dw.set(i, j, dot(grow, vv.row(j)));
                            let wij = wv.get(i, j);
                            let drow = dv.row_mut(j);
                            for (o, &x) in drow.iter_mut().zip(grow) {
                                *o += wij * x;
                            }
                        }
                    }
                    add_adj(&mut adj, *w, dw);
                    add_adj(&mut adj, *v, dv);
                }
                Op::LayerNorm { x, scale, bias, xhat, inv_std } => {
                    let sv = &self.nodes[scale.0].value;
                    let (rows, d) = xhat.shape();
                    let inv_d = T::ONE / T::from_f64(d as f64);
                    let mut dx = Mat::zeros(rows, d);
                    let mut dscale = Mat::zeros(1, d);
                    let mut dbias = Mat::zeros(1, d);
                    for i in 0..rows {
                        let grow = g.row(i);
                        let xrow = xhat.row(i);
                        for j in 0..d {
                            dscale.row_mut(0)[j] += grow[j] * xrow[j];
                            dbias.row_mut(0)[j] += grow[j];
                        }
                        // dL/dxhat = g * scale; project out mean and the
                        // component along xhat, then rescale by 1/std.
                        let mut m1 = T::ZERO;
                        let mut m2 = T::ZERO;
                        let srow = sv.row(0);
                        for j in 0..d {
                            let gh = grow[j] * srow[j];
                            m1 += gh;
                            m2 += gh * xrow[j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        let istd = inv_std[i];
                        let drow = dx.row_mut(i);
                        for j in 0..d {
                            let gh = grow[j] * srow[j];
                            drow[j] = istd * (gh - m1 - xrow[j] * m2);
                        }
                    }
                    add_adj(&mut adj, *x, dx);
                    add_adj(&mut adj, *scale, dscale);
                    add_adj(&mut adj, *bias, dbias);
                }
                Op::Gelu(a) => {
                    let av = &self.nodes[a.0].value;
                    let mut da = g.clone();
                    for (o, &x) in da.data_mut().iter_mut().zip(av.data()) {
                        *o *= gelu_grad(x);
                    }
                    add_adj(&mut adj, *a, da);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g.clone();
                    for (o, &m) in dx.data_mut().iter_mut().zip(mask.data()) {
                        *o *= m;
                    }
                    add_adj(&mut adj, *x, dx);
                }
                Op::SampledNll { logits } => {
                    let lv = &self.nodes[logits.0].value;
                    let mut p = crate::mat::softmax_slice(lv.row(0));
                    p[0] -= T::ONE;
                    let s = g.get(0, 0);
                    for v in &mut p {
                        *v *= s;
                    }
                    add_adj(&mut adj, *logits, Mat::from_vec(1, lv.cols(), p));
                }
            }
        }
    }

    /// Convenience wrapper returning a fresh buffer.
    pub fn backward(&self, loss: Var) -> GradBuffer<T> {
        let mut buf = GradBuffer::new();
        self.backward_into(loss, &mut buf);
        buf
    }
}

fn add_adj<T: Scalar>(adj: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
    match &mut adj[v.0] {
        Some(m) => m.add_scaled_assign(&g, T::ONE),
        slot @ None => *slot = Some(g),
    }
}
