//! Logistic regression meta-learner: deterministic zero-initialized
//! full-batch gradient descent.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let z: f64 = row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() + self.bias;
        sigmoid(z)
    }
}

pub fn train_logistic(x: &[Vec<f64>], y: &[u8], iterations: usize, learning_rate: f64) -> LogisticModel {
    let f = x.first().map_or(0, |r| r.len());
    let n = x.len().max(1) as f64;
    let mut weights = vec![0.0; f];
    let mut bias = 0.0;
    for _ in 0..iterations {
        let mut gw = vec![0.0; f];
        let mut gb = 0.0;
        for (row, &label) in x.iter().zip(y) {
            let z: f64 = row.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() + bias;
            let delta = sigmoid(z) - label as f64;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += delta * v;
            }
            gb += delta;
        }
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= learning_rate * g / n;
        }
        bias -= learning_rate * gb / n;
    }
    LogisticModel { weights, bias }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
