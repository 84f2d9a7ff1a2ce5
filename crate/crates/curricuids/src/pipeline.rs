//! End-to-end orchestration: raw records -> cleaned/standardized windows ->
//! curriculum -> optional compression and stacking -> run manifest. The CLI
//! and the acceptance suite share these entry points.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compress::{prune_magnitude, quantize, size_report, SizeReport};
use crate::curriculum::{
    make_stage_datasets, run_curriculum, CurriculumConfig, StageDataset, StageResult,
};
use crate::data::matrix::{matrix_from_records, records_from_table, FlowRecord};
use crate::data::preprocess::{fit_preprocessor_capped, transform, Preprocessor};
use crate::data::stage::StagePlan;
use crate::data::table::{apply_encoder, CategoricalEncoder, RawTable};
use crate::data::window::{windowize, SequenceBatch};
use crate::ensemble::{build_oof, ensemble_predict, stack_train, EnsembleConfig, StackedEnsemble};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{IdsModel, LayerAudit, ModelConfig};
use crate::rng::{derive_seed, rng_from_seed};

pub const MANIFEST_FORMAT: &str = "curricuids-manifest-v1";
pub const BUNDLE_FORMAT: &str = "curricuids-prep-v1";

/// Everything needed to re-apply the training-time data preparation to a
/// fresh CSV: category codes, scaler/PCA, plan, and window geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepBundle {
    pub format_version: String,
    pub label_column: String,
    pub plan: StagePlan,
    pub encoder: CategoricalEncoder,
    pub preprocessor: Preprocessor,
    pub raw_feature_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub window: usize,
    pub stride: usize,
}

impl PrepBundle {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PrepBundle> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::IoFailure(format!("{}: {e}", path.as_ref().display())))?;
        let bundle: PrepBundle = serde_json::from_str(&text)?;
        if bundle.format_version != BUNDLE_FORMAT {
            return Err(Error::BadCheckpoint(format!(
                "expected {BUNDLE_FORMAT}, found {}",
                bundle.format_version
            )));
        }
        Ok(bundle)
    }

    /// Clean (frozen encoder, no row drops), binarize, standardize and
    /// project a table, returning windows grouped per contiguous run.
    pub fn windows_from_table(&self, table: &RawTable) -> Result<(SequenceBatch, Vec<String>)> {
        let encoded = apply_encoder(table, &self.encoder);
        let records = records_from_table(&encoded, &self.plan)?;
        let transformed = transform_records(&records, &self.preprocessor, &self.raw_feature_names)?;
        let mut pool = SequenceBatch::empty(self.window, self.preprocessor.n_components);
        let mut unmatched = Vec::new();
        for run in contiguous_runs(&transformed) {
            if self.plan.match_stage(&run[0].stage_tag).is_none() {
                unmatched.push(run[0].stage_tag.clone());
                continue;
            }
            pool.extend(&windowize(run, self.window, self.stride));
        }
        unmatched.sort();
        unmatched.dedup();
        Ok((pool, unmatched))
    }
}

/// Standardize+project every record's features (labels and tags kept).
pub fn transform_records(
    records: &[FlowRecord],
    preprocessor: &Preprocessor,
    raw_feature_names: &[String],
) -> Result<Vec<FlowRecord>> {
    let matrix = matrix_from_records(records, raw_feature_names.to_vec())?;
    let transformed = transform(preprocessor, &matrix)?;
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| FlowRecord {
            features: transformed.row(i).to_vec(),
            label: r.label,
            stage_tag: r.stage_tag.clone(),
        })
        .collect())
}

/// Slice a record list into maximal contiguous same-tag runs.
pub fn contiguous_runs(records: &[FlowRecord]) -> Vec<&[FlowRecord]> {
    let mut runs = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let tag = &records[start].stage_tag;
        let mut end = start + 1;
        while end < records.len() && &records[end].stage_tag == tag {
            end += 1;
        }
        runs.push(&records[start..end]);
        start = end;
    }
    runs
}

/// Stratified run-level train/test split: runs stay whole so windows never
/// straddle the split.
pub fn split_runs(
    records: &[FlowRecord],
    test_fraction: f64,
    seed: u64,
) -> (Vec<FlowRecord>, Vec<FlowRecord>) {
    use rand::seq::SliceRandom;
    let runs = contiguous_runs(records);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1u8] {
        let mut class_runs: Vec<&[FlowRecord]> = runs
            .iter()
            .copied()
            .filter(|r| r[0].label == class)
            .collect();
        class_runs.shuffle(&mut rng_from_seed(derive_seed(seed, 0x5911 + class as u64)));
        let n_test = ((class_runs.len() as f64) * test_fraction).round() as usize;
        for (i, run) in class_runs.into_iter().enumerate() {
            if i < n_test {
                test.extend_from_slice(run);
            } else {
                train.extend_from_slice(run);
            }
        }
    }
    (train, test)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub outlier_z: f64,
    /// When false, standardize only (features keep their raw identity).
    pub use_pca: bool,
    pub retained_variance: f64,
    pub max_components: Option<usize>,
    pub window: usize,
    pub stride: usize,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            outlier_z: 4.0,
            use_pca: true,
            retained_variance: 0.95,
            max_components: None,
            window: 10,
            stride: 1,
            test_fraction: 0.2,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Prepared training inputs plus the reusable preparation bundle.
pub struct PreparedData {
    pub stages: Vec<StageDataset>,
    pub test: SequenceBatch,
    pub unmatched_tags: Vec<String>,
    pub bundle: PrepBundle,
    pub options: PrepareOptions,
    pub fingerprint: String,
}

/// Fit the preparation on cleaned records and build stage datasets plus a
/// held-out test set. `records` must come from a cleaned table (numeric
/// features only); `encoder` is whatever cleaning produced.
pub fn prepare_data(
    records: &[FlowRecord],
    raw_feature_names: &[String],
    label_column: &str,
    encoder: CategoricalEncoder,
    plan: &StagePlan,
    opts: &PrepareOptions,
    fingerprint: String,
) -> Result<PreparedData> {
    let (train_records, test_records) = split_runs(records, opts.test_fraction, opts.seed);
    if train_records.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let train_matrix = matrix_from_records(&train_records, raw_feature_names.to_vec())?;
    let preprocessor = if opts.use_pca {
        fit_preprocessor_capped(&train_matrix, opts.retained_variance, opts.max_components)?
    } else {
        crate::data::preprocess::fit_standardizer(&train_matrix)?
    };
    let feature_names: Vec<String> = if preprocessor.is_identity_projection() {
        raw_feature_names.to_vec()
    } else {
        (1..=preprocessor.n_components).map(|c| format!("pc{c}")).collect()
    };
    let bundle = PrepBundle {
        format_version: BUNDLE_FORMAT.to_string(),
        label_column: label_column.to_string(),
        plan: plan.clone(),
        encoder,
        preprocessor,
        raw_feature_names: raw_feature_names.to_vec(),
        feature_names,
        window: opts.window,
        stride: opts.stride,
    };

    let train_transformed = transform_records(&train_records, &bundle.preprocessor, raw_feature_names)?;
    let staged = make_stage_datasets(
        plan,
        &train_transformed,
        opts.window,
        opts.stride,
        opts.validation_fraction,
        derive_seed(opts.seed, 0xda7a),
    )?;

    let test_transformed = transform_records(&test_records, &bundle.preprocessor, raw_feature_names)?;
    let mut test = SequenceBatch::empty(opts.window, bundle.preprocessor.n_components);
    for run in contiguous_runs(&test_transformed) {
        if bundle.plan.match_stage(&run[0].stage_tag).is_some() {
            test.extend(&windowize(run, opts.window, opts.stride));
        }
    }

    Ok(PreparedData {
        stages: staged.stages,
        test,
        unmatched_tags: staged.unmatched_tags,
        bundle,
        options: opts.clone(),
        fingerprint,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDims {
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub encoder_dim: usize,
    pub gru_layers: usize,
    pub gru_units: usize,
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub attention_dim: usize,
    pub dropout_rate: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        let d = ModelConfig::desk_default(1, 1);
        ModelDims {
            conv_channels: d.conv_channels,
            conv_kernel: d.conv_kernel,
            encoder_dim: d.encoder_dim,
            gru_layers: d.gru_layers,
            gru_units: d.gru_units,
            lstm_layers: d.lstm_layers,
            lstm_units: d.lstm_units,
            attention_dim: d.attention_dim,
            dropout_rate: d.dropout_rate,
        }
    }
}

impl ModelDims {
    pub fn to_config(&self, n_features: usize, window: usize, seed: u64) -> ModelConfig {
        let mut cfg = ModelConfig::desk_default(n_features, window);
        cfg.conv_channels = self.conv_channels;
        cfg.conv_kernel = self.conv_kernel;
        cfg.encoder_dim = self.encoder_dim;
        cfg.gru_layers = self.gru_layers;
        cfg.gru_units = self.gru_units;
        cfg.lstm_layers = self.lstm_layers;
        cfg.lstm_units = self.lstm_units;
        cfg.attention_dim = self.attention_dim;
        cfg.dropout_rate = self.dropout_rate;
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressOptions {
    pub prune_sparsity: f64,
    pub finetune_epochs: usize,
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions {
            prune_sparsity: 0.5,
            finetune_epochs: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionSection {
    pub size: SizeReport,
    pub quantized_metrics: MetricsReport,
    pub pruned_metrics: MetricsReport,
    pub prune_target: f64,
    pub achieved_sparsity: f64,
}

/// The reproducible record of one training run. `timing` is the only
/// non-deterministic field and lives apart so manifests compare equal
/// modulo it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: String,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub prepare: PrepareOptions,
    pub model_dims: ModelDims,
    pub curriculum: CurriculumConfig,
    pub threshold: f64,
    pub unmatched_tags: Vec<String>,
    pub active_features: Vec<usize>,
    pub stages: Vec<StageResult>,
    pub audit: LayerAudit,
    pub model_metrics: MetricsReport,
    pub compression: Option<CompressionSection>,
    pub ensemble_metrics: Option<MetricsReport>,
    pub timing: TimingSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingSection {
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    /// Serialization with the timing zeroed, for byte comparisons.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut clone = self.clone();
        clone.timing = TimingSection {
            wall_clock_seconds: 0.0,
        };
        Ok(serde_json::to_string_pretty(&clone)?)
    }
}

pub struct PipelineOptions {
    pub model_dims: ModelDims,
    pub curriculum: CurriculumConfig,
    pub ensemble: Option<EnsembleConfig>,
    pub compress: Option<CompressOptions>,
    pub threshold: f64,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub model: IdsModel<f64>,
    pub ensemble: Option<StackedEnsemble>,
    pub ensemble_probs: Option<Vec<f64>>,
    pub test: SequenceBatch,
}

/// Run curriculum training (plus optional compression and stacking) on
/// prepared data, write artifacts under `out_dir` when given, and return
/// the manifest.
pub fn run_pipeline(prepared: &PreparedData, opts: &PipelineOptions) -> Result<PipelineOutcome> {
    let started = Instant::now();
    let n_features = prepared.bundle.preprocessor.n_components;
    let model_cfg = opts.model_dims.to_config(
        n_features,
        prepared.bundle.window,
        derive_seed(opts.seed, 0x90de1),
    );
    let mut curriculum_cfg = opts.curriculum.clone();
    curriculum_cfg.seed = derive_seed(opts.seed, 0xcc);
    if let Some(dir) = &opts.out_dir {
        curriculum_cfg.checkpoint_dir = Some(dir.join("checkpoints"));
        std::fs::create_dir_all(dir.join("stages"))?;
    }

    let run = run_curriculum(&model_cfg, &prepared.stages, &curriculum_cfg)?;
    let model = run.model;
    let mut stage_results = run.stage_results;
    // manifest paths are relative to the run directory so equal runs in
    // different directories produce identical manifests
    if let Some(dir) = &opts.out_dir {
        for r in &mut stage_results {
            if let Ok(rel) = std::path::Path::new(&r.checkpoint_path).strip_prefix(dir) {
                r.checkpoint_path = rel.to_string_lossy().into_owned();
            }
        }
    }

    let test_active = prepared.test.select_features(&model.active_features);
    let model_probs = model.forward(&test_active)?;
    let model_metrics = compute_metrics(&model_probs, &test_active.labels, opts.threshold)?;

    if let Some(dir) = &opts.out_dir {
        for r in &stage_results {
            std::fs::write(
                dir.join("stages").join(format!("stage_{}.json", r.stage_index)),
                serde_json::to_string_pretty(r)?,
            )?;
        }
        model.save(dir.join("model.json"))?;
        prepared.bundle.save(dir.join("preprocessor.json"))?;
    }

    let compression = match &opts.compress {
        Some(copts) => {
            let final_stage = prepared
                .stages
                .last()
                .ok_or_else(|| Error::InvalidConfig("no stages".into()))?;
            let (pruned, mask) = prune_magnitude(
                &model,
                copts.prune_sparsity,
                Some((final_stage, copts.finetune_epochs, &curriculum_cfg)),
            )?;
            let pruned_probs = pruned.forward(&test_active)?;
            let pruned_metrics = compute_metrics(&pruned_probs, &test_active.labels, opts.threshold)?;
            let qm = quantize(&model)?;
            let q_probs = crate::compress::quantized_forward(&qm, &test_active)?;
            let quantized_metrics = compute_metrics(&q_probs, &test_active.labels, opts.threshold)?;
            if let Some(dir) = &opts.out_dir {
                qm.save(dir.join("model.quant.json"))?;
                pruned.save(dir.join("model.pruned.json"))?;
            }
            Some(CompressionSection {
                size: size_report(&qm, false),
                quantized_metrics,
                pruned_metrics,
                prune_target: copts.prune_sparsity,
                achieved_sparsity: mask.achieved_sparsity,
            })
        }
        None => None,
    };

    let mut ensemble_metrics = None;
    let mut ensemble = None;
    let mut ensemble_probs = None;
    if let Some(ecfg) = &opts.ensemble {
        let mut ecfg = ecfg.clone();
        ecfg.seed = derive_seed(opts.seed, 0xe5);
        let final_stage = prepared
            .stages
            .last()
            .ok_or_else(|| Error::InvalidConfig("no stages".into()))?;
        let train_windows = final_stage.train.select_features(&model.active_features);
        let oof = build_oof(&model, &train_windows, &ecfg)?;
        let stacked = stack_train(&oof, &model, &train_windows, &ecfg)?;
        let probs = ensemble_predict(&stacked, &test_active)?;
        ensemble_metrics = Some(compute_metrics(&probs, &test_active.labels, opts.threshold)?);
        if let Some(dir) = &opts.out_dir {
            stacked.save(dir.join("ensemble.json"), "model.json")?;
        }
        ensemble = Some(stacked);
        ensemble_probs = Some(probs);
    }

    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT.to_string(),
        seed: opts.seed,
        dataset_fingerprint: prepared.fingerprint.clone(),
        prepare: prepared.options.clone(),
        model_dims: opts.model_dims.clone(),
        curriculum: curriculum_cfg.clone(),
        threshold: opts.threshold,
        unmatched_tags: prepared.unmatched_tags.clone(),
        active_features: model.active_features.clone(),
        stages: stage_results,
        audit: model.parameter_count(),
        model_metrics,
        compression,
        ensemble_metrics,
        timing: TimingSection {
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
    };

    if let Some(dir) = &opts.out_dir {
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        std::fs::write(
            dir.join("metrics.json"),
            serde_json::to_string_pretty(&manifest.model_metrics)?,
        )?;
    }

    Ok(PipelineOutcome {
        manifest,
        model,
        ensemble,
        ensemble_probs,
        test: prepared.test.clone(),
    })
}

/// SHA-256 hex digest used as the dataset fingerprint.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
