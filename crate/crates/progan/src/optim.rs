//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::nn::Parameter;
use crate::tensor::{Real, Tensor, TensorError};

/// First/second moment buffers for one parameter.
#[derive(Debug, Clone)]
pub struct AdamSlot<E> {
    pub m: Tensor<E>,
    pub v: Tensor<E>,
}

/// Adam state over a named parameter set.
///
/// Slots are keyed by parameter name, so freshly grown layers start with
/// zero moments while transferred layers keep theirs. Parameters whose
/// gradient is absent in a step (e.g. a retained fade-path RGB layer once
/// the blend has closed) are skipped entirely.
#[derive(Debug, Clone)]
pub struct Adam<E> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    slots: BTreeMap<String, AdamSlot<E>>,
}

impl<E: Real> Adam<E> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update over `(parameter, gradient)` pairs.
    ///
    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)` with
    /// `m_hat = m / (1 - beta1^t)`, `v_hat = v / (1 - beta2^t)`.
    pub fn step(
        &mut self,
        updates: &mut [(&mut Parameter<E>, &Tensor<E>)],
    ) -> Result<(), TensorError> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let nb1 = E::from_f64(1.0 - self.beta1);
        let nb2 = E::from_f64(1.0 - self.beta2);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);
        let lr = E::from_f64(self.lr);
        let eps = E::from_f64(self.eps);

        for (param, grad) in updates.iter_mut() {
            if param.value.shape() != grad.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "{}: parameter {:?} vs gradient {:?}",
                        param.name,
                        param.value.shape(),
                        grad.shape()
                    ),
                });
            }
            if !grad.all_finite() {
                return Err(TensorError::NonFinite { op: "adam_step" });
            }
            let slot = self.slots.entry(param.name.clone()).or_insert_with(|| AdamSlot {
                m: Tensor::zeros(param.value.shape().to_vec()),
                v: Tensor::zeros(param.value.shape().to_vec()),
            });
            let pd = param.value.data_mut();
            let md = slot.m.data_mut();
            let vd = slot.v.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i];
                md[i] = b1 * md[i] + nb1 * g;
                vd[i] = b2 * vd[i] + nb2 * g * g;
                let m_hat = md[i] * inv_bc1;
                let v_hat = vd[i] * inv_bc2;
                let update = lr * m_hat / (v_hat.sqrt() + eps);
                if !update.is_finite() {
                    return Err(TensorError::NonFinite { op: "adam_step" });
                }
                pd[i] = pd[i] - update;
            }
        }
        Ok(())
    }

    /// Moment buffers for `name`, if the parameter has been updated.
    pub fn slot(&self, name: &str) -> Option<&AdamSlot<E>> {
        self.slots.get(name)
    }

    /// Restores a moment slot (checkpoint load).
    pub fn insert_slot(&mut self, name: String, slot: AdamSlot<E>) {
        self.slots.insert(name, slot);
    }

    /// Restores the step counter (checkpoint load).
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}
