//! Stacking: the curriculum network, a random forest, and boosted trees as
//! base models, combined by a logistic meta-learner trained on out-of-fold
//! probabilities. Trees consume per-window mean feature vectors; the
//! network consumes the windows themselves.

pub mod boost;
pub mod forest;
pub mod logistic;
pub mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::window::SequenceBatch;
use crate::error::{Error, Result};
use crate::metrics::ProbabilityScorer;
use crate::model::{DropoutMode, IdsModel};
use crate::optim::AdamState;
use crate::rng::{derive_seed, rng_from_seed};

pub use boost::{train_boosted, BoostConfig, BoostedTrees};
pub use forest::{train_forest, Forest, ForestConfig};
pub use logistic::{train_logistic, LogisticModel};

pub const ENSEMBLE_FORMAT: &str = "curricuids-ensemble-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub k_folds: usize,
    /// Epochs of fine-tuning for the network copy trained per fold.
    pub nn_finetune_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub forest: ForestConfig,
    pub boost: BoostConfig,
    pub meta_iterations: usize,
    pub meta_learning_rate: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k_folds: 5,
            nn_finetune_epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            forest: ForestConfig::default(),
            boost: BoostConfig::default(),
            meta_iterations: 800,
            meta_learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Out-of-fold probabilities: each training row scored by base models
/// trained without that row's fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OofMatrix {
    /// Per row: [network, forest, boosted] probabilities.
    pub probs: Vec<[f64; 3]>,
    pub fold_of_row: Vec<usize>,
    /// Row sets each fold's models were trained on (for the hygiene audit).
    pub fold_train_rows: Vec<Vec<usize>>,
    pub k_folds: usize,
}

impl OofMatrix {
    /// No row may appear in the training set of the fold that scored it.
    pub fn audit_hygiene(&self) -> bool {
        self.fold_of_row.iter().enumerate().all(|(row, &fold)| {
            fold < self.k_folds && !self.fold_train_rows[fold].contains(&row)
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackedEnsemble {
    pub forest: Forest,
    pub boosted: BoostedTrees,
    pub meta: LogisticModel,
    pub oof_folds: usize,
    #[serde(skip)]
    pub network: Option<IdsModel<f64>>,
}

/// Stratified fold assignment (round-robin within each class after a
/// seeded shuffle).
fn assign_folds(labels: &[u8], k_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if k_folds < 2 {
        return Err(Error::InvalidConfig("k_folds must be at least 2".into()));
    }
    if k_folds > labels.len() {
        return Err(Error::FoldTooSmall { fold: k_folds });
    }
    use rand::seq::SliceRandom;
    let mut fold_of_row = vec![0usize; labels.len()];
    // the round-robin counter continues across classes so every fold is
    // populated even when k equals the sample count (leave-one-out)
    let mut next = 0usize;
    for class in [0u8, 1u8] {
        let mut rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect();
        rows.shuffle(&mut rng_from_seed(derive_seed(seed, 0xf01d + class as u64)));
        for row in rows {
            fold_of_row[row] = next % k_folds;
            next += 1;
        }
    }
    Ok(fold_of_row)
}

fn finetune_network(
    base: &IdsModel<f64>,
    train: &SequenceBatch,
    cfg: &EnsembleConfig,
    salt: u64,
) -> Result<IdsModel<f64>> {
    use rand::seq::SliceRandom;
    let mut model = base.clone();
    let mut adam = AdamState::new(&model.params, cfg.learning_rate);
    for epoch in 0..cfg.nn_finetune_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(
            cfg.seed,
            salt ^ ((epoch as u64) << 8),
        )));
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.take(chunk);
            let mut tape = Tape::new();
            let dropout = DropoutMode::Seeded(derive_seed(
                cfg.seed,
                salt ^ 0xd0 ^ ((epoch as u64) << 24) ^ step as u64,
            ));
            let loss = model.loss_tape(&mut tape, &batch, dropout)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::DivergenceDetected { stage: 0, epoch });
            }
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params);
        }
    }
    Ok(model)
}

/// Build the out-of-fold probability matrix. The `windows` batch must
/// already be restricted to the network's active features; tree models see
/// the per-window means of the same columns.
pub fn build_oof(
    network: &IdsModel<f64>,
    windows: &SequenceBatch,
    cfg: &EnsembleConfig,
) -> Result<OofMatrix> {
    let labels = &windows.labels;
    let fold_of_row = assign_folds(labels, cfg.k_folds, cfg.seed)?;
    let means = windows.window_means();
    let n = windows.len();
    let mut probs = vec![[0.0f64; 3]; n];
    let mut fold_train_rows = Vec::with_capacity(cfg.k_folds);

    for fold in 0..cfg.k_folds {
        let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of_row[i] != fold).collect();
        let held_out: Vec<usize> = (0..n).filter(|&i| fold_of_row[i] == fold).collect();
        if held_out.is_empty() {
            return Err(Error::FoldTooSmall { fold });
        }
        let train_labels: Vec<u8> = train_rows.iter().map(|&i| labels[i]).collect();
        if !train_labels.contains(&0) || !train_labels.contains(&1) {
            return Err(Error::SingleClassInput);
        }

        let train_batch = windows.take(&train_rows);
        let nn = finetune_network(network, &train_batch, cfg, 0x0f0f + fold as u64)?;
        let held_batch = windows.take(&held_out);
        let nn_probs = nn.forward(&held_batch)?;

        let train_means: Vec<Vec<f64>> = train_rows.iter().map(|&i| means[i].clone()).collect();
        let mut forest_cfg = cfg.forest.clone();
        forest_cfg.seed = derive_seed(cfg.seed, 0xfa00 + fold as u64);
        let forest = train_forest(&train_means, &train_labels, &forest_cfg)?;
        let boost_cfg = cfg.boost.clone();
        let boosted = train_boosted(&train_means, &train_labels, &boost_cfg)?;

        for (pos, &row) in held_out.iter().enumerate() {
            probs[row] = [
                nn_probs[pos],
                forest.predict(&means[row]),
                boosted.predict(&means[row]),
            ];
        }
        fold_train_rows.push(train_rows);
    }

    Ok(OofMatrix {
        probs,
        fold_of_row,
        fold_train_rows,
        k_folds: cfg.k_folds,
    })
}

/// Fit the meta-learner on the OOF probabilities and assemble the final
/// ensemble with full-data tree bases. The network base is the curriculum
/// model as trained (folds only ever fine-tuned copies).
pub fn stack_train(
    oof: &OofMatrix,
    network: &IdsModel<f64>,
    windows: &SequenceBatch,
    cfg: &EnsembleConfig,
) -> Result<StackedEnsemble> {
    let rows: Vec<Vec<f64>> = oof.probs.iter().map(|p| p.to_vec()).collect();
    let meta = train_logistic(
        &rows,
        &windows.labels,
        cfg.meta_iterations,
        cfg.meta_learning_rate,
    );
    let means = windows.window_means();
    let mut forest_cfg = cfg.forest.clone();
    forest_cfg.seed = derive_seed(cfg.seed, 0xff01);
    let forest = train_forest(&means, &windows.labels, &forest_cfg)?;
    let boosted = train_boosted(&means, &windows.labels, &cfg.boost)?;
    Ok(StackedEnsemble {
        forest,
        boosted,
        meta,
        oof_folds: oof.k_folds,
        network: Some(network.clone()),
    })
}

/// Meta-combination of the three base probabilities for a batch.
pub fn ensemble_predict(e: &StackedEnsemble, batch: &SequenceBatch) -> Result<Vec<f64>> {
    let network = e
        .network
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("ensemble is missing its network base".into()))?;
    let nn_probs = network.forward(batch)?;
    let means = batch.window_means();
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let row = [
            nn_probs[i],
            e.forest.predict(&means[i]),
            e.boosted.predict(&means[i]),
        ];
        out.push(e.meta.predict(&row));
    }
    Ok(out)
}

impl ProbabilityScorer for StackedEnsemble {
    fn score_batch(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        ensemble_predict(self, batch)
    }

    fn active_features(&self) -> Vec<usize> {
        self.network
            .as_ref()
            .map(|n| n.active_features.clone())
            .unwrap_or_default()
    }
}

/// On-disk envelope: tree arrays and meta weights inline, the network as a
/// reference to its own checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleCheckpoint {
    format_version: String,
    nn_checkpoint: String,
    oof_folds: usize,
    forest: Forest,
    boosted: BoostedTrees,
    meta: LogisticModel,
}

impl StackedEnsemble {
    /// Save the ensemble next to an already-saved network checkpoint.
    pub fn save(&self, path: impl AsRef<Path>, nn_checkpoint: &str) -> Result<()> {
        let envelope = EnsembleCheckpoint {
            format_version: ENSEMBLE_FORMAT.to_string(),
            nn_checkpoint: nn_checkpoint.to_string(),
            oof_folds: self.oof_folds,
            forest: self.forest.clone(),
            boosted: self.boosted.clone(),
            meta: self.meta.clone(),
        };
        std::fs::write(path.as_ref(), serde_json::to_string(&envelope)?)?;
        Ok(())
    }

    /// Load an ensemble; the referenced network checkpoint is resolved
    /// relative to the ensemble file's directory when not absolute.
    pub fn load(path: impl AsRef<Path>) -> Result<StackedEnsemble> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::IoFailure(format!("{}: {e}", path.display())))?;
        let envelope: EnsembleCheckpoint = serde_json::from_str(&text)?;
        if envelope.format_version != ENSEMBLE_FORMAT {
            return Err(Error::BadCheckpoint(format!(
                "expected {ENSEMBLE_FORMAT}, found {}",
                envelope.format_version
            )));
        }
        let nn_path = {
            let p = std::path::PathBuf::from(&envelope.nn_checkpoint);
            if p.is_absolute() {
                p
            } else {
                path.parent().unwrap_or(Path::new(".")).join(p)
            }
        };
        let network: IdsModel<f64> = IdsModel::load(&nn_path)?;
        Ok(StackedEnsemble {
            forest: envelope.forest,
            boosted: envelope.boosted,
            meta: envelope.meta,
            oof_folds: envelope.oof_folds,
            network: Some(network),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::matrix::FlowRecord;
    use crate::data::window::windowize;
    use crate::model::ModelConfig;

    /// Small separable window set: feature 0 mean differs by class.
    fn toy_windows(n_per_class: usize, w: usize, f: usize, seed: u64) -> SequenceBatch {
        let mut rng = rng_from_seed(seed);
        let mut records = Vec::new();
        for i in 0..2 * n_per_class {
            let label = (i % 2) as u8;
            for _ in 0..w {
                let mut features: Vec<f64> = (0..f)
                    .map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0))
                    .collect();
                features[0] += label as f64 * 2.5;
                records.push(FlowRecord {
                    features,
                    label,
                    stage_tag: String::new(),
                });
            }
        }
        let mut out = SequenceBatch::empty(w, f);
        for chunk in records.chunks(w) {
            out.extend(&windowize(chunk, w, 1));
        }
        out
    }

    fn tiny_network(seed: u64, f: usize, w: usize) -> IdsModel<f64> {
        let mut cfg = ModelConfig::tiny(f, w);
        cfg.seed = seed;
        IdsModel::build(cfg).unwrap()
    }

    fn fast_cfg(seed: u64) -> EnsembleConfig {
        EnsembleConfig {
            k_folds: 3,
            nn_finetune_epochs: 2,
            forest: ForestConfig {
                n_trees: 15,
                ..Default::default()
            },
            boost: BoostConfig {
                n_rounds: 20,
                ..Default::default()
            },
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn oof_rows_are_never_self_scored() {
        let windows = toy_windows(12, 4, 5, 1);
        let network = tiny_network(1, 5, 4);
        let oof = build_oof(&network, &windows, &fast_cfg(1)).unwrap();
        assert!(oof.audit_hygiene());
        assert_eq!(oof.probs.len(), windows.len());
    }

    #[test]
    fn leave_one_out_on_six_samples() {
        let windows = toy_windows(3, 3, 4, 2);
        assert_eq!(windows.len(), 6);
        let mut cfg = fast_cfg(2);
        cfg.k_folds = 6; // leave-one-out
        cfg.forest.n_trees = 5;
        cfg.boost.n_rounds = 5;
        let network = tiny_network(2, 4, 3);
        let oof = build_oof(&network, &windows, &cfg);
        // leave-one-out on 3/3 classes: single-row folds keep both classes
        // in every training set, so this must succeed and stay hygienic
        let oof = oof.unwrap();
        assert!(oof.audit_hygiene());
    }

    #[test]
    fn too_many_folds_is_rejected() {
        let windows = toy_windows(2, 3, 4, 3);
        let mut cfg = fast_cfg(3);
        cfg.k_folds = 10;
        let network = tiny_network(3, 4, 3);
        assert!(matches!(
            build_oof(&network, &windows, &cfg),
            Err(Error::FoldTooSmall { .. })
        ));
    }

    #[test]
    fn oof_values_stable_under_row_permutation() {
        let windows = toy_windows(10, 3, 4, 4);
        let network = tiny_network(4, 4, 3);
        let cfg = fast_cfg(4);
        let oof = build_oof(&network, &windows, &cfg).unwrap();
        let oof2 = build_oof(&network, &windows, &cfg).unwrap();
        assert_eq!(oof.probs, oof2.probs);
    }

    #[test]
    fn meta_prefers_the_perfect_base() {
        // constructed OOF: base 0 perfect, bases 1-2 uninformative
        let n = 60;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let probs: Vec<[f64; 3]> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let noise = ((i * 37 % 13) as f64) / 13.0;
                [
                    if y == 1 { 0.9 } else { 0.1 },
                    noise,
                    1.0 - noise,
                ]
            })
            .collect();
        let rows: Vec<Vec<f64>> = probs.iter().map(|p| p.to_vec()).collect();
        let meta = train_logistic(&rows, &labels, 2000, 1.0);
        assert!(
            meta.weights[0] > meta.weights[1].abs() && meta.weights[0] > meta.weights[2].abs(),
            "weights {:?}",
            meta.weights
        );
    }

    #[test]
    fn uninformative_bases_give_base_rate() {
        let n = 40;
        let labels: Vec<u8> = (0..n).map(|i| (i < 10) as u8).collect(); // 25% positive
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![0.5, 0.5, 0.5]).collect();
        let meta = train_logistic(&rows, &labels, 3000, 1.0);
        let p = meta.predict(&[0.5, 0.5, 0.5]);
        assert!((p - 0.25).abs() < 0.02, "p = {p}");
    }

    /// Calibrated identical bases: rows where every base says 0.2 carry
    /// exactly 20% positive labels (and 80% for the 0.8 rows), so the
    /// converged meta must reproduce the shared base probability.
    #[test]
    fn identical_bases_reproduce_their_probability() {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels: Vec<u8> = Vec::new();
        for i in 0..100 {
            rows.push(vec![0.2, 0.2, 0.2]);
            labels.push((i % 5 == 0) as u8); // 20% positive
            rows.push(vec![0.8, 0.8, 0.8]);
            labels.push((i % 5 != 0) as u8); // 80% positive
        }
        let meta = train_logistic(&rows, &labels, 20_000, 4.0);
        for p_base in [0.2f64, 0.8] {
            let p = meta.predict(&[p_base, p_base, p_base]);
            assert!((p - p_base).abs() < 1e-3, "base {p_base} -> {p}");
        }
    }

    #[test]
    fn ensemble_predict_is_deterministic_and_monotone() {
        let windows = toy_windows(12, 3, 4, 5);
        let network = tiny_network(5, 4, 3);
        let cfg = fast_cfg(5);
        let oof = build_oof(&network, &windows, &cfg).unwrap();
        let ensemble = stack_train(&oof, &network, &windows, &cfg).unwrap();
        let a = ensemble_predict(&ensemble, &windows).unwrap();
        let b = ensemble_predict(&ensemble, &windows).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| *p > 0.0 && *p < 1.0));
        // monotone in each base probability when meta weights are
        // non-negative
        if ensemble.meta.weights.iter().all(|w| *w >= 0.0) {
            let low = ensemble.meta.predict(&[0.1, 0.5, 0.5]);
            let high = ensemble.meta.predict(&[0.9, 0.5, 0.5]);
            assert!(high >= low);
        }
    }

    #[test]
    fn ensemble_checkpoint_round_trip() {
        let windows = toy_windows(10, 3, 4, 6);
        let network = tiny_network(6, 4, 3);
        let cfg = fast_cfg(6);
        let oof = build_oof(&network, &windows, &cfg).unwrap();
        let ensemble = stack_train(&oof, &network, &windows, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let nn_path = dir.path().join("nn.json");
        network.save(&nn_path).unwrap();
        let ens_path = dir.path().join("ensemble.json");
        ensemble.save(&ens_path, "nn.json").unwrap();
        let loaded = StackedEnsemble::load(&ens_path).unwrap();
        let a = ensemble_predict(&ensemble, &windows).unwrap();
        let b = ensemble_predict(&loaded, &windows).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5); // f32 checkpoint storage
        }
    }
}
