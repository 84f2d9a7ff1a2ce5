//! Sliding-window sequence construction.

use serde::{Deserialize, Serialize};

use crate::data::matrix::FlowRecord;

/// A batch of fixed-length windows: `[batch x window x n_features]` stored
/// flat, one binary label per window (the label of its last record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    pub windows: Vec<f64>,
    pub labels: Vec<u8>,
    pub window_len: usize,
    pub n_features: usize,
}

impl SequenceBatch {
    pub fn empty(window_len: usize, n_features: usize) -> Self {
        SequenceBatch {
            windows: Vec::new(),
            labels: Vec::new(),
            window_len,
            n_features,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let stride = self.window_len * self.n_features;
        &self.windows[i * stride..(i + 1) * stride]
    }

    /// Concatenate another batch (same window/feature geometry).
    pub fn extend(&mut self, other: &SequenceBatch) {
        assert_eq!(self.window_len, other.window_len);
        assert_eq!(self.n_features, other.n_features);
        self.windows.extend_from_slice(&other.windows);
        self.labels.extend_from_slice(&other.labels);
    }

    /// Subset of windows by index.
    pub fn take(&self, idx: &[usize]) -> SequenceBatch {
        let stride = self.window_len * self.n_features;
        let mut windows = Vec::with_capacity(idx.len() * stride);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            windows.extend_from_slice(self.window(i));
            labels.push(self.labels[i]);
        }
        SequenceBatch {
            windows,
            labels,
            window_len: self.window_len,
            n_features: self.n_features,
        }
    }

    /// Keep only the given feature columns (sorted indices into the
    /// original feature axis).
    pub fn select_features(&self, keep: &[usize]) -> SequenceBatch {
        let mut windows = Vec::with_capacity(self.len() * self.window_len * keep.len());
        for i in 0..self.len() {
            let w = self.window(i);
            for t in 0..self.window_len {
                let row = &w[t * self.n_features..(t + 1) * self.n_features];
                for &k in keep {
                    windows.push(row[k]);
                }
            }
        }
        SequenceBatch {
            windows,
            labels: self.labels.clone(),
            window_len: self.window_len,
            n_features: keep.len(),
        }
    }

    /// Per-window mean over timesteps: `[batch x n_features]` rows.
    /// This is the flattened view consumed by tree models and LIME.
    pub fn window_means(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let w = self.window(i);
            let mut mean = vec![0.0; self.n_features];
            for t in 0..self.window_len {
                for (j, m) in mean.iter_mut().enumerate() {
                    *m += w[t * self.n_features + j];
                }
            }
            for m in &mut mean {
                *m /= self.window_len as f64;
            }
            out.push(mean);
        }
        out
    }
}

/// Slide a window of length `w` with the given stride over consecutive
/// records. Window count is `floor((n-w)/stride)+1` for `n >= w`, else 0;
/// each window is labeled by its last record.
pub fn windowize(records: &[FlowRecord], w: usize, stride: usize) -> SequenceBatch {
    assert!(w >= 1, "window length must be at least 1");
    assert!(stride >= 1, "stride must be at least 1");
    let n_features = records.first().map_or(0, |r| r.features.len());
    let mut batch = SequenceBatch::empty(w, n_features);
    if records.len() < w {
        return batch;
    }
    let count = (records.len() - w) / stride + 1;
    for i in 0..count {
        let start = i * stride;
        for r in &records[start..start + w] {
            batch.windows.extend_from_slice(&r.features);
        }
        batch.labels.push(records[start + w - 1].label);
    }
    batch
}
