//! Random forest: bootstrap-sampled Gini trees averaged by probability.

use serde::{Deserialize, Serialize};

use crate::ensemble::tree::{DecisionTree, TreeConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Defaults to ceil(sqrt(F)) when None.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            features_per_split: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub features_per_split: usize,
    pub seed: u64,
}

/// Grow the forest: each tree sees a bootstrap resample and a random
/// feature subset per node. Per-tree seeds are derived independently, so a
/// parallel implementation would reproduce the sequential result.
pub fn train_forest(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig) -> Result<Forest> {
    if x.is_empty() || !y.contains(&0) || !y.contains(&1) {
        return Err(Error::SingleClassInput);
    }
    let n = x.len();
    let f = x[0].len();
    let features_per_split = cfg
        .features_per_split
        .unwrap_or_else(|| (f as f64).sqrt().ceil() as usize)
        .clamp(1, f);
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        features_per_split: Some(features_per_split),
    };
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 0xf0e0 + t as u64));
        let bootstrap: Vec<usize> = (0..n)
            .map(|_| crate::rng::uniform(&mut rng, 0.0, n as f64) as usize % n)
            .collect();
        trees.push(DecisionTree::fit(x, y, &bootstrap, &tree_cfg, &mut rng));
    }
    Ok(Forest {
        trees,
        features_per_split,
        seed: cfg.seed,
    })
}

impl Forest {
    /// Mean of the tree probabilities.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}
