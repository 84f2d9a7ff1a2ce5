//! Stratified train/validation/test splitting.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::matrix::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub validation_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            test_fraction: 0.2,
            validation_fraction_of_train: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if (self.train_fraction + self.test_fraction - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "train + test fractions must sum to 1, got {} + {}",
                self.train_fraction, self.test_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction_of_train) {
            return Err(Error::InvalidConfig(
                "validation fraction must lie in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Index sets of a stratified split: disjoint, covering every row, with
/// per-class counts within one sample of the exact proportions.
#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split labels into train/validation/test index sets, stratified by class.
pub fn stratified_split_indices(labels: &[u8], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let has0 = labels.iter().any(|&y| y == 0);
    let has1 = labels.iter().any(|&y| y == 1);
    if !(has0 && has1) {
        return Err(Error::SingleClassInput);
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect();
        let mut rng = rng_from_seed(derive_seed(spec.seed, 0x5117 + class as u64));
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_test = ((n as f64) * spec.test_fraction).round() as usize;
        let n_test = n_test.min(n);
        test.extend_from_slice(&idx[..n_test]);
        let rest = &idx[n_test..];
        let n_val = ((rest.len() as f64) * spec.validation_fraction_of_train).round() as usize;
        validation.extend_from_slice(&rest[..n_val]);
        train.extend_from_slice(&rest[n_val..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
    })
}

/// Stratified 80/20 split with a validation carve-out from the training
/// portion. Returns `(train, validation, test)`.
pub fn stratified_split(
    m: &FeatureMatrix,
    spec: &SplitSpec,
) -> Result<(FeatureMatrix, FeatureMatrix, FeatureMatrix)> {
    let idx = stratified_split_indices(&m.y, spec)?;
    Ok((
        m.take_rows(&idx.train),
        m.take_rows(&idx.validation),
        m.take_rows(&idx.test),
    ))
}
