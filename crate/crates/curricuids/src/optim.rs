//! Adam optimizer with bias correction.

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState<S> {
    first_moment: Vec<Tensor<S>>,
    second_moment: Vec<Tensor<S>>,
    step_count: u64,
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>, learning_rate: S) -> Self {
        let first_moment = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        let second_moment = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        AdamState {
            first_moment,
            second_moment,
            step_count: 0,
            learning_rate,
            beta1: S::from_f64_c(0.9),
            beta2: S::from_f64_c(0.999),
            epsilon: S::from_f64_c(1e-8),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update from the gradients currently in the store. Gradients are
    /// zeroed afterwards.
    pub fn step(&mut self, params: &mut ParamStore<S>) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for i in 0..params.len() {
            let p = params.get_mut(crate::params::ParamId(i));
            if !p.trainable {
                p.grad.fill(S::zero());
                continue;
            }
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (S::one() - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (S::one() - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] = w[j] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.grad.fill(S::zero());
        }
    }
}
