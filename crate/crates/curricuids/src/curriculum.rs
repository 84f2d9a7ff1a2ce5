//! Staged curriculum training with per-stage LIME un-learning.
//!
//! Stage datasets grow cumulatively: stage k holds all normal windows plus
//! the attacks of every stage up to k. Weights carry over between stages;
//! after each stage a fraction of the stage data is explained with LIME and
//! features whose mean signed significance falls below the threshold are
//! removed before a short retraining pass.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::matrix::FlowRecord;
use crate::data::stage::StagePlan;
use crate::data::window::{windowize, SequenceBatch};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{DropoutMode, IdsModel, ModelConfig};
use crate::optim::AdamState;
use crate::rng::{derive_seed, rng_from_seed};
use crate::xai::{
    aggregate_importance, lime_explain_batched, select_drop_set, Explanation, LimeConfig,
    TrainStats,
};

/// Fraction of the easiest attack stage bootstrapped into stage 1 so the
/// binary loss is well-posed from the start.
pub const STAGE1_BOOTSTRAP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    /// Fraction of each stage's training windows explained with LIME.
    pub lime_fraction: f64,
    pub enable_unlearning: bool,
    pub drop_threshold: f64,
    pub lime: LimeConfig,
    /// Runtime artifact location; not part of the reproducibility config.
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            epochs_per_stage: 12,
            batch_size: 32,
            learning_rate: 1e-3,
            early_stop_patience: 4,
            lime_fraction: 0.1,
            enable_unlearning: true,
            drop_threshold: crate::xai::DROP_THRESHOLD,
            lime: LimeConfig {
                num_samples: 250,
                ..Default::default()
            },
            checkpoint_dir: None,
            seed: 0,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lime_fraction) || self.lime_fraction == 0.0 {
            return Err(Error::InvalidConfig(
                "lime_fraction must lie in (0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Cumulative train/validation windows for one curriculum tier, stored at
/// the original feature width.
#[derive(Debug, Clone)]
pub struct StageDataset {
    pub stage_index: usize,
    pub name: String,
    pub train: SequenceBatch,
    pub validation: SequenceBatch,
}

#[derive(Debug, Clone)]
pub struct StageDatasets {
    pub stages: Vec<StageDataset>,
    /// Tags present in the data that no stage pattern claimed. Reported,
    /// never silently dropped.
    pub unmatched_tags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageResult {
    pub stage_index: usize,
    pub epochs_run: usize,
    pub train_loss_history: Vec<f64>,
    pub validation_metrics: MetricsReport,
    /// Original feature indices removed by un-learning after this stage.
    pub dropped_features: Vec<usize>,
    pub checkpoint_path: String,
}

/// Group records into contiguous same-tag runs, window each run, and
/// assemble cumulative stage datasets. Windows never span a run boundary,
/// so no window mixes classes or stages.
pub fn make_stage_datasets(
    plan: &StagePlan,
    records: &[FlowRecord],
    window: usize,
    stride: usize,
    validation_fraction: f64,
    seed: u64,
) -> Result<StageDatasets> {
    plan.validate()?;
    let n_features = records.first().map_or(0, |r| r.features.len());
    let mut per_stage: Vec<SequenceBatch> = (0..=plan.n_stages())
        .map(|_| SequenceBatch::empty(window, n_features))
        .collect();
    let mut unmatched: Vec<String> = Vec::new();

    let mut start = 0;
    while start < records.len() {
        let tag = &records[start].stage_tag;
        let mut end = start + 1;
        while end < records.len() && &records[end].stage_tag == tag {
            end += 1;
        }
        match plan.match_stage(tag) {
            Some(stage) => per_stage[stage].extend(&windowize(&records[start..end], window, stride)),
            None => unmatched.push(tag.clone()),
        }
        start = end;
    }
    unmatched.sort();
    unmatched.dedup();

    for s in &plan.stages {
        if per_stage[s.index].is_empty() {
            return Err(Error::EmptyStage {
                index: s.index,
                name: s.name.clone(),
            });
        }
    }

    let mut stages = Vec::with_capacity(plan.n_stages());
    for s in &plan.stages {
        let mut pool = per_stage[1].clone(); // all normal windows
        if s.index == 1 {
            // bootstrap a sliver of the easiest attack stage
            let easiest = &per_stage[2.min(plan.n_stages())];
            let n_boot = ((easiest.len() as f64) * STAGE1_BOOTSTRAP_FRACTION).ceil() as usize;
            let n_boot = n_boot.clamp(1, easiest.len());
            let idx: Vec<usize> = (0..n_boot).collect();
            pool.extend(&easiest.take(&idx));
        } else {
            for k in 2..=s.index {
                pool.extend(&per_stage[k]);
            }
        }
        // deterministic shuffle, then stratified validation carve-out
        let mut order: Vec<usize> = (0..pool.len()).collect();
        use rand::seq::SliceRandom;
        let mut rng = rng_from_seed(derive_seed(seed, 0xa11 + s.index as u64));
        order.shuffle(&mut rng);
        let mut val_idx = Vec::new();
        let mut train_idx = Vec::new();
        for class in [0u8, 1u8] {
            let class_order: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| pool.labels[i] == class)
                .collect();
            let n_val = ((class_order.len() as f64) * validation_fraction).round() as usize;
            val_idx.extend_from_slice(&class_order[..n_val]);
            train_idx.extend_from_slice(&class_order[n_val..]);
        }
        let mut rng2 = rng_from_seed(derive_seed(seed, 0xb22 + s.index as u64));
        train_idx.shuffle(&mut rng2);
        stages.push(StageDataset {
            stage_index: s.index,
            name: s.name.clone(),
            train: pool.take(&train_idx),
            validation: pool.take(&val_idx),
        });
    }
    Ok(StageDatasets {
        stages,
        unmatched_tags: unmatched,
    })
}

/// Train the model in place on one stage. Weights continue from their
/// incoming values; early stopping watches validation F1.
pub fn train_stage(
    model: &mut IdsModel<f64>,
    stage: &StageDataset,
    cfg: &CurriculumConfig,
    epochs: usize,
) -> Result<StageResult> {
    cfg.validate()?;
    let train = stage.train.select_features(&model.active_features);
    let validation = stage.validation.select_features(&model.active_features);
    let eval_set = if validation.is_empty() { &train } else { &validation };

    let mut adam = AdamState::new(&model.params, cfg.learning_rate);
    let mut loss_history = Vec::new();
    let mut epochs_run = 0usize;

    // early stopping restores the best weights, with the incoming state as
    // the baseline: training that never beats it leaves the model unchanged
    let initial_probs = model.forward(eval_set)?;
    let mut best_f1 = compute_metrics(&initial_probs, &eval_set.labels, 0.5)?.f1;
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;

    use rand::seq::SliceRandom;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let shuffle_seed = derive_seed(
            cfg.seed,
            0xe90c_0000 ^ ((stage.stage_index as u64) << 16) ^ epoch as u64,
        );
        order.shuffle(&mut rng_from_seed(shuffle_seed));
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.take(chunk);
            let mut tape = Tape::new();
            let dropout = DropoutMode::Seeded(derive_seed(
                cfg.seed,
                0xd007_0000
                    ^ ((stage.stage_index as u64) << 32)
                    ^ ((epoch as u64) << 16)
                    ^ step as u64,
            ));
            let loss = model.loss_tape(&mut tape, &batch, dropout)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::DivergenceDetected {
                    stage: stage.stage_index,
                    epoch,
                });
            }
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params);
            epoch_loss += loss_value;
            n_batches += 1;
        }
        loss_history.push(epoch_loss / n_batches.max(1) as f64);
        epochs_run += 1;

        let probs = model.forward(eval_set)?;
        let metrics = compute_metrics(&probs, &eval_set.labels, 0.5)?;
        if metrics.f1 > best_f1 + 1e-12 {
            best_f1 = metrics.f1;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    if epochs > 0 {
        model.params = best_params;
    }

    let probs = model.forward(eval_set)?;
    let validation_metrics = compute_metrics(&probs, &eval_set.labels, 0.5)?;

    let checkpoint_path = match &cfg.checkpoint_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("stage_{}.json", stage.stage_index));
            model.save(&path)?;
            path.display().to_string()
        }
        None => String::new(),
    };

    Ok(StageResult {
        stage_index: stage.stage_index,
        epochs_run,
        train_loss_history: loss_history,
        validation_metrics,
        dropped_features: Vec::new(),
        checkpoint_path,
    })
}

/// Outcome of a full curriculum run.
pub struct CurriculumRun {
    pub model: IdsModel<f64>,
    pub stage_results: Vec<StageResult>,
}

/// Execute the staged loop: train each stage, explain a fraction of its
/// data, drop negative-significance features, and fine-tune on the reduced
/// set before moving on.
pub fn run_curriculum(
    model_cfg: &ModelConfig,
    stages: &[StageDataset],
    cfg: &CurriculumConfig,
) -> Result<CurriculumRun> {
    if stages.is_empty() {
        return Err(Error::InvalidConfig("no stages to train".into()));
    }
    cfg.validate()?;
    let mut model: IdsModel<f64> = IdsModel::build(model_cfg.clone())?;
    let mut results = Vec::with_capacity(stages.len());
    for stage in stages {
        let mut result = train_stage(&mut model, stage, cfg, cfg.epochs_per_stage)?;
        if cfg.enable_unlearning {
            let drops = unlearning_pass(&model, stage, cfg)?;
            if !drops.is_empty() {
                let keep: Vec<usize> = model
                    .active_features
                    .iter()
                    .copied()
                    .filter(|f| !drops.contains(f))
                    .collect();
                let reinit = derive_seed(cfg.seed, 0x4e57 + stage.stage_index as u64);
                model = model.restrict_features(&keep, reinit)?;
                // fine-tune on the reduced feature set; a reduced rate keeps
                // the fresh optimizer from kicking the model out of its
                // converged basin
                let retrain_epochs = cfg.epochs_per_stage.div_ceil(2);
                let mut retrain_cfg = cfg.clone();
                retrain_cfg.learning_rate = cfg.learning_rate * 0.2;
                let retrain = train_stage(&mut model, stage, &retrain_cfg, retrain_epochs)?;
                result.epochs_run += retrain.epochs_run;
                result.train_loss_history.extend(retrain.train_loss_history);
                result.validation_metrics = retrain.validation_metrics;
                result.checkpoint_path = retrain.checkpoint_path;
                result.dropped_features = drops;
            }
        }
        results.push(result);
    }
    Ok(CurriculumRun {
        model,
        stage_results: results,
    })
}

/// Explain a sample of the stage's training windows and pick the drop set.
/// Returns original feature indices.
fn unlearning_pass(
    model: &IdsModel<f64>,
    stage: &StageDataset,
    cfg: &CurriculumConfig,
) -> Result<Vec<usize>> {
    let train = stage.train.select_features(&model.active_features);
    let n = train.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let f = train.n_features;
    let n_explain = ((n as f64) * cfg.lime_fraction).ceil() as usize;
    let n_explain = n_explain.clamp(1, n).min(32);

    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x11e + stage.stage_index as u64));
    idx.shuffle(&mut rng);
    idx.truncate(n_explain);

    let means_rows = train.window_means();
    let mut stats_means = vec![0.0; f];
    let mut stats_vars = vec![0.0; f];
    for row in &means_rows {
        for (j, v) in row.iter().enumerate() {
            stats_means[j] += v;
        }
    }
    for m in &mut stats_means {
        *m /= n as f64;
    }
    for row in &means_rows {
        for (j, v) in row.iter().enumerate() {
            let d = v - stats_means[j];
            stats_vars[j] += d * d;
        }
    }
    let stats = TrainStats::new(
        stats_means,
        stats_vars
            .iter()
            .map(|v| (v / n as f64).sqrt())
            .collect(),
    );

    let w = train.window_len;
    let mut explanations: Vec<Explanation> = Vec::with_capacity(n_explain);
    for (rank, &wi) in idx.iter().enumerate() {
        let window = train.window(wi).to_vec();
        let base_mean = &means_rows[wi];
        // perturbations shift each feature's level across all timesteps,
        // preserving the window's temporal shape
        let predict_batch = |rows: &[f64], count: usize| -> Result<Vec<f64>> {
            let mut batch = SequenceBatch::empty(w, f);
            for r in 0..count {
                let deltas: Vec<f64> = (0..f)
                    .map(|j| rows[r * f + j] - base_mean[j])
                    .collect();
                for t in 0..w {
                    for j in 0..f {
                        batch.windows.push(window[t * f + j] + deltas[j]);
                    }
                }
                batch.labels.push(0);
            }
            model.forward(&batch)
        };
        let mut lime_cfg = cfg.lime.clone();
        lime_cfg.seed = derive_seed(cfg.seed, 0x115e_0000 ^ ((stage.stage_index as u64) << 16) ^ rank as u64);
        lime_cfg.top_k = f; // keep all features so aggregation sees every sign
        let e = lime_explain_batched(
            &predict_batch,
            base_mean,
            &stats,
            &lime_cfg,
            &format!("stage{}-window{}", stage.stage_index, wi),
        )?;
        explanations.push(e);
    }

    let summary = aggregate_importance(&explanations, f)?;
    let (drop_positions, _warning) = select_drop_set(&summary, cfg.drop_threshold);
    if std::env::var("CURRICUIDS_DEBUG_UNLEARN").is_ok() {
        let w: Vec<String> = summary.mean_weights.iter().map(|v| format!("{v:+.4}")).collect();
        eprintln!(
            "[unlearn] stage {} active {:?} weights {:?} -> positions {:?}",
            stage.stage_index, model.active_features, w, drop_positions
        );
    }
    Ok(drop_positions
        .iter()
        .map(|&pos| model.active_features[pos])
        .collect())
}
