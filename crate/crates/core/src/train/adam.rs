//! Adam optimizer with per-parameter moment state addressed by name.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

use super::TrainError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second-moment state is kept per parameter name, so the optimizer
/// survives checkpointing and does not care about tensor identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    step_count: u64,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            step_count: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One optimizer step over every (parameter, gradient) pair. Gradients
    /// are looked up by name; a parameter without a gradient is an error
    /// because it means the forward pass and the model disagree.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut Tensor)>,
        grads: &[(String, Vec<f64>)],
    ) -> Result<(), TrainError> {
        let by_name: BTreeMap<&str, &[f64]> =
            grads.iter().map(|(n, g)| (n.as_str(), g.as_slice())).collect();
        self.step_count += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step_count as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step_count as i32);
        for (name, tensor) in params {
            let grad = by_name.get(name.as_str()).ok_or_else(|| {
                TrainError::Config(format!("no gradient recorded for parameter {name:?}"))
            })?;
            let data = tensor.data_mut();
            if grad.len() != data.len() {
                return Err(TrainError::Config(format!(
                    "gradient for {name:?} has {} values, parameter has {}",
                    grad.len(),
                    data.len()
                )));
            }
            let slot = self.slots.entry(name).or_insert_with(|| Slot {
                m: vec![0.0; data.len()],
                v: vec![0.0; data.len()],
            });
            for i in 0..data.len() {
                let g = grad[i];
                slot.m[i] = ADAM_BETA1 * slot.m[i] + (1.0 - ADAM_BETA1) * g;
                slot.v[i] = ADAM_BETA2 * slot.v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = slot.m[i] / c1;
                let v_hat = slot.v[i] / c2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    /// Moment vectors in name order, for checkpointing.
    pub fn export_state(&self) -> Vec<(String, Vec<f64>, Vec<f64>)> {
        self.slots
            .iter()
            .map(|(n, s)| (n.clone(), s.m.clone(), s.v.clone()))
            .collect()
    }

    pub fn import_state(
        lr: f64,
        step_count: u64,
        entries: Vec<(String, Vec<f64>, Vec<f64>)>,
    ) -> Self {
        Adam {
            lr,
            step_count,
            slots: entries
                .into_iter()
                .map(|(n, m, v)| (n, Slot { m, v }))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_steps(n: usize) -> Vec<f64> {
        // Minimize w² from w = 1 with lr 0.1; the gradient is 2w.
        let mut adam = Adam::new(0.1);
        let mut w = Tensor::scalar(1.0);
        let mut out = Vec::new();
        for _ in 0..n {
            let g = 2.0 * w.data()[0];
            adam.step(vec![("w".into(), &mut w)], &[("w".into(), vec![g])])
                .unwrap();
            out.push(w.data()[0]);
        }
        out
    }

    #[test]
    fn matches_closed_form_updates_on_quadratic() {
        // Iterates computed by hand from the update equations with
        // β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
        let expect = [0.9000000005, 0.8004122286917928, 0.7015862729460303];
        let got = quadratic_steps(3);
        for (g, e) in got.iter().zip(expect.iter()) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn quadratic_converges_toward_zero() {
        let got = quadratic_steps(300);
        assert!(got.last().unwrap().abs() < 0.05);
    }

    #[test]
    fn state_round_trip_preserves_trajectory() {
        let mut reference = Adam::new(0.05);
        let mut w_ref = Tensor::scalar(2.0);
        for _ in 0..5 {
            let g = 2.0 * w_ref.data()[0];
            reference
                .step(vec![("w".into(), &mut w_ref)], &[("w".into(), vec![g])])
                .unwrap();
        }

        // Same first three steps, then serialize state and resume.
        let mut first = Adam::new(0.05);
        let mut w = Tensor::scalar(2.0);
        for _ in 0..3 {
            let g = 2.0 * w.data()[0];
            first
                .step(vec![("w".into(), &mut w)], &[("w".into(), vec![g])])
                .unwrap();
        }
        let mut resumed = Adam::import_state(first.lr(), first.step_count(), first.export_state());
        assert_eq!(resumed, first);
        for _ in 0..2 {
            let g = 2.0 * w.data()[0];
            resumed
                .step(vec![("w".into(), &mut w)], &[("w".into(), vec![g])])
                .unwrap();
        }
        assert_eq!(w.data()[0].to_bits(), w_ref.data()[0].to_bits());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut adam = Adam::new(0.1);
        let mut w = Tensor::scalar(1.0);
        let err = adam
            .step(vec![("w".into(), &mut w)], &[("other".into(), vec![1.0])])
            .unwrap_err();
        assert!(err.to_string().contains("no gradient"));
    }

    #[test]
    fn mismatched_gradient_length_is_an_error() {
        let mut adam = Adam::new(0.1);
        let mut w = Tensor::zeros(&[3]);
        assert!(adam
            .step(vec![("w".into(), &mut w)], &[("w".into(), vec![1.0])])
            .is_err());
    }
}
