//! Ablation harness: architecture components added one at a time, and
//! pipeline stages (curriculum, un-learning, stacking) layered on a base
//! network, all trained on identical data and seeds.

use serde::{Deserialize, Serialize};

use crate::compress::prune_magnitude;
use crate::curriculum::{run_curriculum, train_stage, CurriculumConfig, StageDataset};
use crate::ensemble::{build_oof, ensemble_predict, stack_train, EnsembleConfig};
use crate::error::{Error, Result};
use crate::metrics::compute_metrics;
use crate::model::{IdsModel, ModelToggles};
use crate::pipeline::{ModelDims, PreparedData};
use crate::rng::derive_seed;

/// One architecture step: the named component flips relative to the
/// previous entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchStep {
    pub name: String,
    pub toggles: ModelToggles,
    pub gru_layers: usize,
    pub lstm_layers: usize,
    /// Magnitude-prune (with a short fine-tune) after training.
    pub prune: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineFeatures {
    pub curriculum: bool,
    pub unlearning: bool,
    pub stacking: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineStep {
    pub name: String,
    pub features: PipelineFeatures,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSpec {
    pub arch: Vec<ArchStep>,
    pub pipeline: Vec<PipelineStep>,
}

impl AblationSpec {
    /// baseline -> +attention -> +GRU -> +LSTM -> +residual -> +layernorm
    /// -> +dropout/pruning, then base NN -> +curriculum -> +un-learning
    /// -> +stacking.
    pub fn standard() -> AblationSpec {
        let off = ModelToggles {
            use_feature_mask: true,
            use_conv: true,
            use_encoder: false,
            use_self_attention: false,
            use_residual: false,
            use_layernorm: false,
            use_dropout: false,
        };
        let mut arch = Vec::new();
        let mut t = off;
        arch.push(ArchStep {
            name: "baseline".into(),
            toggles: t,
            gru_layers: 0,
            lstm_layers: 0,
            prune: None,
        });
        t.use_encoder = true;
        t.use_self_attention = true;
        arch.push(ArchStep {
            name: "attention".into(),
            toggles: t,
            gru_layers: 0,
            lstm_layers: 0,
            prune: None,
        });
        arch.push(ArchStep {
            name: "gru".into(),
            toggles: t,
            gru_layers: 3,
            lstm_layers: 0,
            prune: None,
        });
        arch.push(ArchStep {
            name: "lstm".into(),
            toggles: t,
            gru_layers: 3,
            lstm_layers: 3,
            prune: None,
        });
        t.use_residual = true;
        arch.push(ArchStep {
            name: "residual".into(),
            toggles: t,
            gru_layers: 3,
            lstm_layers: 3,
            prune: None,
        });
        t.use_layernorm = true;
        arch.push(ArchStep {
            name: "layernorm".into(),
            toggles: t,
            gru_layers: 3,
            lstm_layers: 3,
            prune: None,
        });
        t.use_dropout = true;
        arch.push(ArchStep {
            name: "dropout_pruning".into(),
            toggles: t,
            gru_layers: 3,
            lstm_layers: 3,
            prune: Some(0.2),
        });

        let pipeline = vec![
            PipelineStep {
                name: "base_nn".into(),
                features: PipelineFeatures {
                    curriculum: false,
                    unlearning: false,
                    stacking: false,
                },
            },
            PipelineStep {
                name: "curriculum".into(),
                features: PipelineFeatures {
                    curriculum: true,
                    unlearning: false,
                    stacking: false,
                },
            },
            PipelineStep {
                name: "unlearning".into(),
                features: PipelineFeatures {
                    curriculum: true,
                    unlearning: true,
                    stacking: false,
                },
            },
            PipelineStep {
                name: "stacking".into(),
                features: PipelineFeatures {
                    curriculum: true,
                    unlearning: true,
                    stacking: true,
                },
            },
        ];
        AblationSpec { arch, pipeline }
    }

    /// Each entry must differ from its predecessor by exactly one change.
    pub fn validate(&self) -> Result<()> {
        for pair in self.arch.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let mut diffs = 0;
            let ta = a.toggles;
            let tb = b.toggles;
            diffs += (ta.use_feature_mask != tb.use_feature_mask) as usize;
            diffs += (ta.use_conv != tb.use_conv) as usize;
            // the temporal encoder and post-LSTM attention count as the
            // single "attention" component
            diffs += ((ta.use_encoder != tb.use_encoder)
                || (ta.use_self_attention != tb.use_self_attention)) as usize;
            diffs += (ta.use_residual != tb.use_residual) as usize;
            diffs += (ta.use_layernorm != tb.use_layernorm) as usize;
            // dropout and pruning arrive together as the edge-optimization
            // step
            diffs += ((ta.use_dropout != tb.use_dropout) || (a.prune != b.prune)) as usize;
            diffs += (a.gru_layers != b.gru_layers) as usize;
            diffs += (a.lstm_layers != b.lstm_layers) as usize;
            if diffs != 1 {
                return Err(Error::InvalidConfig(format!(
                    "ablation step {:?} -> {:?} changes {diffs} components, expected 1",
                    a.name, b.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub accuracy: f64,
}

/// Pool every stage's training windows into one single-stage dataset (the
/// no-curriculum arm). The final stage already holds the cumulative data.
pub fn pooled_stage(stages: &[StageDataset]) -> StageDataset {
    let last = stages.last().expect("at least one stage");
    StageDataset {
        stage_index: 1,
        name: "pooled".into(),
        train: last.train.clone(),
        validation: last.validation.clone(),
    }
}

/// Train each architecture config on the pooled data and report test
/// accuracy, in spec order.
pub fn run_architecture_ablation(
    prepared: &PreparedData,
    dims: &ModelDims,
    cfg: &CurriculumConfig,
    spec: &[ArchStep],
    threshold: f64,
) -> Result<Vec<AblationRow>> {
    let pooled = pooled_stage(&prepared.stages);
    let n_features = prepared.bundle.preprocessor.n_components;
    let mut rows = Vec::with_capacity(spec.len());
    for step in spec {
        let mut model_cfg = dims.to_config(
            n_features,
            prepared.bundle.window,
            derive_seed(cfg.seed, 0xab1a),
        );
        model_cfg.toggles = step.toggles;
        model_cfg.gru_layers = step.gru_layers;
        model_cfg.lstm_layers = step.lstm_layers;
        let mut model: IdsModel<f64> = IdsModel::build(model_cfg)?;
        train_stage(&mut model, &pooled, cfg, cfg.epochs_per_stage)?;
        if let Some(sparsity) = step.prune {
            let (pruned, _) = prune_magnitude(&model, sparsity, Some((&pooled, 2, cfg)))?;
            model = pruned;
        }
        let test = prepared.test.select_features(&model.active_features);
        let probs = model.forward(&test)?;
        let metrics = compute_metrics(&probs, &test.labels, threshold)?;
        rows.push(AblationRow {
            name: step.name.clone(),
            accuracy: metrics.accuracy,
        });
    }
    Ok(rows)
}

/// Train each pipeline variant and report test accuracy, in spec order.
/// The base arm trains on pooled data with the same total epoch budget the
/// curriculum receives.
pub fn run_pipeline_ablation(
    prepared: &PreparedData,
    dims: &ModelDims,
    cfg: &CurriculumConfig,
    ensemble_cfg: &EnsembleConfig,
    spec: &[PipelineStep],
    threshold: f64,
) -> Result<Vec<AblationRow>> {
    let n_features = prepared.bundle.preprocessor.n_components;
    let model_cfg = dims.to_config(
        n_features,
        prepared.bundle.window,
        derive_seed(cfg.seed, 0x90de1),
    );
    let mut rows = Vec::with_capacity(spec.len());
    for step in spec {
        let accuracy = if !step.features.curriculum {
            let pooled = pooled_stage(&prepared.stages);
            let mut model: IdsModel<f64> = IdsModel::build(model_cfg.clone())?;
            let budget = cfg.epochs_per_stage * prepared.stages.len();
            train_stage(&mut model, &pooled, cfg, budget)?;
            let test = prepared.test.select_features(&model.active_features);
            let probs = model.forward(&test)?;
            compute_metrics(&probs, &test.labels, threshold)?.accuracy
        } else {
            let mut ccfg = cfg.clone();
            ccfg.enable_unlearning = step.features.unlearning;
            let run = run_curriculum(&model_cfg, &prepared.stages, &ccfg)?;
            let test = prepared.test.select_features(&run.model.active_features);
            if step.features.stacking {
                let final_stage = prepared.stages.last().expect("stages");
                let train_windows = final_stage.train.select_features(&run.model.active_features);
                let mut ecfg = ensemble_cfg.clone();
                ecfg.seed = derive_seed(cfg.seed, 0xab5e);
                let oof = build_oof(&run.model, &train_windows, &ecfg)?;
                let stacked = stack_train(&oof, &run.model, &train_windows, &ecfg)?;
                let probs = ensemble_predict(&stacked, &test)?;
                compute_metrics(&probs, &test.labels, threshold)?.accuracy
            } else {
                let probs = run.model.forward(&test)?;
                compute_metrics(&probs, &test.labels, threshold)?.accuracy
            }
        };
        rows.push(AblationRow {
            name: step.name.clone(),
            accuracy,
        });
    }
    Ok(rows)
}

/// Plot-ready CSV: `config,accuracy` rows in spec order.
pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("config,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{:.6}\n", r.name, r.accuracy));
    }
    out
}
