//! Adam with bias correction over a named parameter collection.

use std::collections::HashMap;

use super::tensor::TensorMap;
use super::KernelError;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update using the gradients accumulated on `params`.
    ///
    /// Parameters without an accumulated gradient are left untouched. A
    /// non-finite gradient aborts the whole step before any parameter moves.
    pub fn step(&mut self, params: &mut TensorMap) -> Result<(), KernelError> {
        for (name, tensor) in params.iter() {
            if let Some(grad) = tensor.grad() {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(KernelError::NonFiniteGrad(name.to_string()));
                }
            }
        }

        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);

        for (name, tensor) in params.iter_mut() {
            let Some(grad) = tensor.grad() else { continue };
            let grad = grad.to_vec();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            let data = tensor.data_mut();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
