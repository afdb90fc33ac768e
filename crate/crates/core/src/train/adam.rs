//! Adam with sparse row-level updates.
//!
//! The step counter is global: every parameter that participated in a step's
//! computation graph — even with an exactly zero gradient — has its moments
//! decayed and is moved, while parameters (or embedding-table rows) outside
//! the graph are left untouched, moments included. Bias correction uses the
//! shared step count. All per-element arithmetic runs in f64 and is then
//! stored back at the parameter precision.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tape::GradBuffer;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates, slot-parallel to a [`ParamSet`].
pub struct AdamState<T: Scalar> {
    pub step: u64,
    pub m: Vec<Mat<T>>,
    pub v: Vec<Mat<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh zeroed state matching the parameter shapes.
    pub fn new(set: &ParamSet<T>) -> AdamState<T> {
        let m = (0..set.len())
            .map(|s| {
                let (r, c) = set.value(s).shape();
                Mat::zeros(r, c)
            })
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { step: 0, m, v }
    }

    /// Rebuilds state from checkpoint tensors named `opt/m/<param>` and
    /// `opt/v/<param>`, plus the stored step count.
    pub fn from_named(
        set: &ParamSet<T>,
        step: u64,
        mut tensors: BTreeMap<String, Mat<T>>,
    ) -> Result<AdamState<T>> {
        let mut state = AdamState::new(set);
        state.step = step;
        for slot in 0..set.len() {
            let name = set.name(slot);
            for (prefix, dst) in [("opt/m/", &mut state.m), ("opt/v/", &mut state.v)] {
                let key = format!("{prefix}{name}");
                let mat = tensors
                    .remove(&key)
                    .ok_or_else(|| Error::NotFound(format!("checkpoint tensor '{key}' missing")))?;
                if mat.shape() != set.value(slot).shape() {
                    return Err(Error::Invalid(format!(
                        "optimizer tensor '{key}' shape {:?} does not match parameter {:?}",
                        mat.shape(),
                        set.value(slot).shape()
                    )));
                }
                dst[slot] = mat;
            }
        }
        Ok(state)
    }

    fn step_element(theta: &mut T, m: &mut T, v: &mut T, g: f64, lr: f64, bc1: f64, bc2: f64) {
        let m_new = BETA1 * m.to_f64() + (1.0 - BETA1) * g;
        let v_new = BETA2 * v.to_f64() + (1.0 - BETA2) * g * g;
        *m = T::from_f64(m_new);
        *v = T::from_f64(v_new);
        let m_hat = m_new / bc1;
        let v_hat = v_new / bc2;
        let update = lr * m_hat / (v_hat.sqrt() + EPS);
        *theta = T::from_f64(theta.to_f64() - update);
    }

    /// Applies one optimization step over exactly the touched entries of
    /// `grads`. The step counter advances once per call.
    pub fn apply(&mut self, set: &mut ParamSet<T>, grads: &GradBuffer<T>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powf(self.step as f64);
        let bc2 = 1.0 - BETA2.powf(self.step as f64);

        for (&slot, g) in &grads.dense {
            debug_assert!(
                !grads.sparse.contains_key(&slot),
                "a slot must not carry both dense and sparse gradients"
            );
            let theta = set.value_mut(slot);
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for i in 0..theta.data().len() {
                Self::step_element(
                    &mut theta.data_mut()[i],
                    &mut m.data_mut()[i],
                    &mut v.data_mut()[i],
                    g.data()[i].to_f64(),
                    lr,
                    bc1,
                    bc2,
                );
            }
        }

        for (&slot, rows) in &grads.sparse {
            let theta = set.value_mut(slot);
            let cols = theta.cols();
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for (&r, grow) in rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    Self::step_element(
                        &mut theta.data_mut()[i],
                        &mut m.data_mut()[i],
                        &mut v.data_mut()[i],
                        grow[c].to_f64(),
                        lr,
                        bc1,
                        bc2,
                    );
                }
            }
        }
    }

    /// Named views for checkpointing, slot order, `opt/m/*` then `opt/v/*`.
    pub fn named_tensors<'a>(&'a self, set: &'a ParamSet<T>) -> Vec<(String, &'a Mat<T>)> {
        let mut out = Vec::with_capacity(2 * set.len());
        for slot in 0..set.len() {
            out.push((format!("opt/m/{}", set.name(slot)), &self.m[slot]));
        }
        for slot in 0..set.len() {
            out.push((format!("opt/v/{}", set.name(slot)), &self.v[slot]));
        }
        out
    }
}
