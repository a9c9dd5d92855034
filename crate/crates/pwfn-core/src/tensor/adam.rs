//! Adam with bias correction.

use super::param::{ParamId, ParamStore};
use super::{Scalar, TensorError};

struct Slot<T> {
    id: ParamId,
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam state over a fixed set of parameters. First/second moments start at
/// zero and the step counter increments by exactly one per `step` call.
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, params: &[ParamId], store: &ParamStore<T>) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8, params, store)
    }

    pub fn with_betas(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        params: &[ParamId],
        store: &ParamStore<T>,
    ) -> Self {
        let slots = params
            .iter()
            .map(|&id| {
                let n = store.get(id).map(|p| p.value().numel()).unwrap_or(0);
                Slot {
                    id,
                    m: vec![T::zero(); n],
                    v: vec![T::zero(); n],
                }
            })
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            slots,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.slots.iter().map(|s| s.id).collect()
    }

    /// Apply one update from harvested gradients. Parameters without an
    /// entry in `grads` are treated as having zero gradient. Any non-finite
    /// gradient aborts before touching state, naming the parameter.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[(ParamId, Vec<T>)],
    ) -> Result<(), TensorError> {
        for &(id, ref g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                let name = store.get(id)?.name().to_string();
                return Err(TensorError::NonFiniteGrad(name));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = T::from_f64(1.0 / (1.0 - self.beta1.powi(t)));
        let bc2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(t)));
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for slot in &mut self.slots {
            let Some((_, g)) = grads.iter().find(|(id, _)| *id == slot.id) else {
                // Zero gradient: moments decay, update stays zero only when
                // the moments are zero, matching a true zero-grad step.
                for (m, v) in slot.m.iter_mut().zip(slot.v.iter_mut()) {
                    *m = b1 * *m;
                    *v = b2 * *v;
                }
                let p = store.get_mut(slot.id)?.value_mut();
                for ((pv, &m), &v) in p.data_mut().iter_mut().zip(&slot.m).zip(&slot.v) {
                    let m_hat = m * bc1;
                    let v_hat = v * bc2;
                    *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
                }
                continue;
            };
            let p = store.get_mut(slot.id)?.value_mut();
            for (((pv, &gv), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.iter())
                .zip(slot.m.iter_mut())
                .zip(slot.v.iter_mut())
            {
                *m = b1 * *m + one_m_b1 * gv;
                *v = b2 * *v + one_m_b2 * gv * gv;
                let m_hat = *m * bc1;
                let v_hat = *v * bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> impl Iterator<Item = (ParamId, &[T], &[T])> {
        self.slots.iter().map(|s| (s.id, s.m.as_slice(), s.v.as_slice()))
    }

    pub fn restore(&mut self, id: ParamId, m: Vec<T>, v: Vec<T>, t: u64) -> Result<(), TensorError> {
        let slot = self
            .slots
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or(TensorError::UnknownParam)?;
        if m.len() != slot.m.len() || v.len() != slot.v.len() {
            return Err(TensorError::InvalidArg {
                op: "adam_restore",
                msg: "moment length mismatch".into(),
            });
        }
        slot.m = m;
        slot.v = v;
        self.t = t;
        Ok(())
    }
}
