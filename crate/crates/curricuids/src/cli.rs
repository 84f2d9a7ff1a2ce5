//! Command-line surface. Every stochastic subcommand takes an explicit
//! `--seed`; artifacts land under the `--out` run directory.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::ablation::{
    rows_to_csv, run_architecture_ablation, run_pipeline_ablation, AblationSpec,
};
use crate::compress::{prune_magnitude, quantize, size_report, QuantizedModel};
use crate::curriculum::CurriculumConfig;
use crate::data::matrix::{feature_names_from_table, records_from_table};
use crate::data::stage::{build_stage_plan, DatasetKind, StagePlan};
use crate::data::synth::{synthesize_dataset, SynthConfig};
use crate::data::table::{clean_table_with_encoder, load_table, Cell, RawTable};
use crate::ensemble::{build_oof, stack_train, EnsembleConfig, StackedEnsemble};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, evaluate_model, ProbabilityScorer};
use crate::model::IdsModel;
use crate::pipeline::{
    fingerprint_bytes, prepare_data, run_pipeline, CompressOptions, ModelDims, PipelineOptions,
    PrepBundle, PrepareOptions,
};
use crate::xai::{lime_explain_batched, render_explanation, LimeConfig, TrainStats};

#[derive(Parser)]
#[command(
    name = "curricuids",
    version,
    about = "Curriculum-trained IoT intrusion detection with LIME un-learning, edge compression, and stacking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PlanArgs {
    /// Built-in staging: edge-iiot, cic-apt-iiot-2024, or cic-iov-2024.
    #[arg(long, conflicts_with = "plan_file")]
    kind: Option<String>,
    /// JSON override file mapping stage index to label patterns.
    #[arg(long)]
    plan_file: Option<PathBuf>,
}

impl PlanArgs {
    fn resolve(&self) -> Result<StagePlan> {
        match (&self.kind, &self.plan_file) {
            (Some(kind), None) => build_stage_plan(kind.parse::<DatasetKind>()?),
            (None, Some(path)) => StagePlan::from_json_file(path),
            _ => Err(Error::InvalidConfig(
                "exactly one of --kind or --plan-file is required".into(),
            )),
        }
    }
}

#[derive(Args, Clone)]
struct DataPrepArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "Attack_type")]
    label_column: String,
    #[arg(long, default_value_t = 4.0)]
    outlier_z: f64,
    #[arg(long, default_value_t = 0.95)]
    retained_variance: f64,
    /// Standardize only; keep raw feature identity (no PCA projection).
    #[arg(long)]
    no_pca: bool,
    /// Cap on kept principal components (applied after the variance rule).
    #[arg(long)]
    max_components: Option<usize>,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
}

#[derive(Args, Clone)]
struct TrainHyperArgs {
    #[arg(long, default_value_t = 12)]
    epochs_per_stage: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 4)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    lime_fraction: f64,
    /// Disable LIME-driven feature un-learning.
    #[arg(long)]
    no_unlearning: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Scale factor for hidden dimensions (conv/encoder/recurrent units).
    #[arg(long, default_value_t = 1.0)]
    model_scale: f64,
}

impl TrainHyperArgs {
    fn to_curriculum(&self, seed: u64) -> CurriculumConfig {
        CurriculumConfig {
            epochs_per_stage: self.epochs_per_stage,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            early_stop_patience: self.patience,
            lime_fraction: self.lime_fraction,
            enable_unlearning: !self.no_unlearning,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled flow CSV with the chosen staging.
    Synth {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        per_stage: usize,
        #[arg(long)]
        normal_runs: Option<usize>,
        #[arg(long, default_value_t = 12)]
        features: usize,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 10)]
        run_len: usize,
        /// Also write the generator's ground-truth description.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Clean a CSV (missing values, duplicates, outliers, category codes).
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "Attack_type")]
        label_column: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        outlier_z: f64,
        /// Also write a Fisher-discriminant feature ranking (needs a
        /// stage plan to binarize labels).
        #[arg(long, requires = "kind")]
        feature_report: Option<PathBuf>,
        /// Built-in staging used only for --feature-report binarization.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Emit a built-in stage plan or validate an override file.
    Plan {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full curriculum (optionally with compression and stacking).
    Train {
        #[command(flatten)]
        prep: DataPrepArgs,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        hyper: TrainHyperArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Also train the stacked ensemble.
        #[arg(long)]
        ensemble: bool,
        /// Also prune + quantize the final model.
        #[arg(long)]
        compress: bool,
        #[arg(long, default_value_t = 0.5)]
        prune: f64,
    },
    /// LIME report for one window of a dataset.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        preprocessor: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        num_samples: usize,
    },
    /// Prune and/or quantize a float checkpoint.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Magnitude-prune to this sparsity before quantizing.
        #[arg(long)]
        prune: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
    },
    /// Out-of-fold stacking on top of a trained checkpoint.
    Ensemble {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        preprocessor: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k_folds: usize,
    },
    /// Score a dataset and print a metrics JSON to stdout.
    Evaluate {
        #[arg(long, conflicts_with_all = ["quantized", "ensemble"])]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "ensemble")]
        quantized: Option<PathBuf>,
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        preprocessor: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Run the component and pipeline ablations.
    Ablate {
        #[command(flatten)]
        prep: DataPrepArgs,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        hyper: TrainHyperArgs,
        /// Which list to run: arch, pipeline, or both.
        #[arg(long, default_value = "both")]
        which: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

/// Parse and execute. Exit codes: 0 success, 1 usage error, 2 runtime
/// failure.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return 0;
                }
                _ => 1,
            };
            eprint!("{e}");
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Worker-thread cap from the environment (the engine is currently
/// sequential, so any positive cap is honored).
pub fn thread_cap() -> usize {
    std::env::var("CURRICUIDS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            plan,
            out,
            seed,
            per_stage,
            normal_runs,
            features,
            noise,
            run_len,
            truth,
        } => {
            let plan = plan.resolve()?;
            let cfg = SynthConfig {
                n_per_stage: per_stage,
                normal_runs,
                run_len,
                n_features: features,
                noise,
                seed,
            };
            let (records, generator_truth) = synthesize_dataset(&cfg, &plan)?;
            write_records_csv(&out, &records, &generator_truth.feature_names)?;
            if let Some(truth_path) = truth {
                std::fs::write(truth_path, serde_json::to_string_pretty(&generator_truth)?)?;
            }
            println!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        Command::Ingest {
            data,
            label_column,
            out,
            outlier_z,
            feature_report,
            kind,
        } => {
            let table = load_table(&data, &label_column)?;
            let (cleaned, _) = clean_table_with_encoder(&table, outlier_z)?;
            write_table_csv(&out, &cleaned)?;
            if let Some(report_path) = feature_report {
                let plan = build_stage_plan(
                    kind.as_deref()
                        .ok_or_else(|| Error::InvalidConfig("--feature-report needs --kind".into()))?
                        .parse::<DatasetKind>()?,
                )?;
                let records = records_from_table(&cleaned, &plan)?;
                let names = feature_names_from_table(&cleaned);
                let matrix = crate::data::matrix::matrix_from_records(&records, names.clone())?;
                let scores = crate::data::preprocess::fisher_scores(&matrix);
                let mut ranked: Vec<(String, f64)> =
                    names.into_iter().zip(scores).collect();
                ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
                std::fs::write(&report_path, serde_json::to_string_pretty(&ranked)?)?;
                println!("feature ranking -> {}", report_path.display());
            }
            println!(
                "cleaned {} rows -> {} rows ({})",
                table.n_rows(),
                cleaned.n_rows(),
                out.display()
            );
            Ok(())
        }
        Command::Plan { plan, out } => {
            let plan = plan.resolve()?;
            plan.validate()?;
            let json = plan.to_json();
            match out {
                Some(path) => {
                    std::fs::write(&path, &json)?;
                    println!("stage plan ({} stages) -> {}", plan.n_stages(), path.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Train {
            prep,
            plan,
            hyper,
            out,
            seed,
            ensemble,
            compress,
            prune,
        } => {
            let plan = plan.resolve()?;
            std::fs::create_dir_all(&out)?;
            let prepared = prepare_from_csv(&prep, &plan, seed)?;
            let opts = PipelineOptions {
                model_dims: scaled_dims(hyper.model_scale),
                curriculum: hyper.to_curriculum(seed),
                ensemble: ensemble.then(|| EnsembleConfig {
                    seed,
                    ..Default::default()
                }),
                compress: compress.then(|| CompressOptions {
                    prune_sparsity: prune,
                    ..Default::default()
                }),
                threshold: hyper.threshold,
                out_dir: Some(out.clone()),
                seed,
            };
            let outcome = run_pipeline(&prepared, &opts)?;
            let m = &outcome.manifest.model_metrics;
            println!(
                "test accuracy {:.2}% precision {:.2}% recall {:.2}% f1 {:.2}%",
                m.accuracy * 100.0,
                m.precision * 100.0,
                m.recall * 100.0,
                m.f1 * 100.0
            );
            if let Some(em) = &outcome.manifest.ensemble_metrics {
                println!("ensemble accuracy {:.2}%", em.accuracy * 100.0);
            }
            if !outcome.manifest.unmatched_tags.is_empty() {
                eprintln!(
                    "warning: unmatched attack tags: {:?}",
                    outcome.manifest.unmatched_tags
                );
            }
            println!("artifacts in {}", out.display());
            Ok(())
        }
        Command::Explain {
            model,
            preprocessor,
            data,
            index,
            out,
            seed,
            num_samples,
        } => {
            let model: IdsModel<f64> = IdsModel::load(&model)?;
            let bundle = PrepBundle::load(&preprocessor)?;
            let table = load_table(&data, &bundle.label_column)?;
            let (windows, _) = bundle.windows_from_table(&table)?;
            if index >= windows.len() {
                return Err(Error::InvalidConfig(format!(
                    "window index {index} out of range ({} windows)",
                    windows.len()
                )));
            }
            let active = windows.select_features(&model.active_features);
            let means = active.window_means();
            let f = active.n_features;
            let stats = batch_stats(&means, f);
            let window = active.window(index).to_vec();
            let base_mean = means[index].clone();
            let w = active.window_len;
            let predict = |rows: &[f64], count: usize| -> Result<Vec<f64>> {
                let mut batch = crate::data::window::SequenceBatch::empty(w, f);
                for r in 0..count {
                    for t in 0..w {
                        for j in 0..f {
                            batch
                                .windows
                                .push(window[t * f + j] + rows[r * f + j] - base_mean[j]);
                        }
                    }
                    batch.labels.push(0);
                }
                model.forward(&batch)
            };
            let lime_cfg = LimeConfig {
                num_samples,
                seed,
                ..Default::default()
            };
            let explanation = lime_explain_batched(
                &predict,
                &base_mean,
                &stats,
                &lime_cfg,
                &format!("window-{index}"),
            )?;
            std::fs::create_dir_all(&out)?;
            let names: Vec<String> = model
                .active_features
                .iter()
                .map(|&i| bundle.feature_names.get(i).cloned().unwrap_or(format!("f{i}")))
                .collect();
            let json_path = out.join(format!("explanation_{index}.json"));
            render_explanation(&explanation, &names, &base_mean, &stats, &json_path)?;
            println!(
                "p(attack) = {:.2}; report -> {}",
                explanation.predicted_probability,
                json_path.display()
            );
            Ok(())
        }
        Command::Compress {
            model,
            out,
            prune,
            report,
            seed: _,
        } => {
            let mut model: IdsModel<f64> = IdsModel::load(&model)?;
            let mut achieved = 0.0;
            if let Some(sparsity) = prune {
                let (pruned, mask) = prune_magnitude(&model, sparsity, None)?;
                model = pruned;
                achieved = mask.achieved_sparsity;
            }
            let qm = quantize(&model)?;
            qm.save(&out)?;
            let size = size_report(&qm, prune.is_some());
            if let Some(report_path) = report {
                std::fs::write(report_path, serde_json::to_string_pretty(&size)?)?;
            }
            println!(
                "{} params, {:.2} KB float -> {:.2} KB quantized (ratio {:.2}{})",
                size.parameter_total,
                size.float_bytes as f64 / 1024.0,
                size.quantized_bytes as f64 / 1024.0,
                size.compression_ratio,
                if prune.is_some() {
                    format!(", sparsity {achieved:.2}")
                } else {
                    String::new()
                }
            );
            Ok(())
        }
        Command::Ensemble {
            model,
            preprocessor,
            data,
            out,
            seed,
            k_folds,
        } => {
            let network: IdsModel<f64> = IdsModel::load(&model)?;
            let bundle = PrepBundle::load(&preprocessor)?;
            let table = load_table(&data, &bundle.label_column)?;
            let (windows, _) = bundle.windows_from_table(&table)?;
            let active = windows.select_features(&network.active_features);
            let cfg = EnsembleConfig {
                k_folds,
                seed,
                ..Default::default()
            };
            let oof = build_oof(&network, &active, &cfg)?;
            if !oof.audit_hygiene() {
                return Err(Error::InvalidConfig(
                    "out-of-fold hygiene audit failed".into(),
                ));
            }
            let stacked = stack_train(&oof, &network, &active, &cfg)?;
            std::fs::create_dir_all(&out)?;
            let nn_path = out.join("ensemble_nn.json");
            network.save(&nn_path)?;
            stacked.save(out.join("ensemble.json"), "ensemble_nn.json")?;
            let probs = crate::ensemble::ensemble_predict(&stacked, &active)?;
            let metrics = compute_metrics(&probs, &active.labels, 0.5)?;
            println!(
                "stacked training accuracy {:.2}% -> {}",
                metrics.accuracy * 100.0,
                out.join("ensemble.json").display()
            );
            Ok(())
        }
        Command::Evaluate {
            model,
            quantized,
            ensemble,
            preprocessor,
            data,
            threshold,
            seed: _,
        } => {
            let bundle = PrepBundle::load(&preprocessor)?;
            let table = load_table(&data, &bundle.label_column)?;
            let (windows, unmatched) = bundle.windows_from_table(&table)?;
            let scorer: Box<dyn ProbabilityScorer> = if let Some(path) = model {
                Box::new(IdsModel::<f64>::load(&path)?)
            } else if let Some(path) = quantized {
                Box::new(QuantizedModel::load(&path)?)
            } else if let Some(path) = ensemble {
                Box::new(StackedEnsemble::load(&path)?)
            } else {
                return Err(Error::InvalidConfig(
                    "one of --model, --quantized, or --ensemble is required".into(),
                ));
            };
            let active_features = scorer.active_features();
            let active = windows.select_features(&active_features);
            let metrics = evaluate_model(scorer.as_ref(), &active, threshold)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            if !unmatched.is_empty() {
                eprintln!("warning: unmatched attack tags: {unmatched:?}");
            }
            Ok(())
        }
        Command::Ablate {
            prep,
            plan,
            hyper,
            which,
            out,
            seed,
        } => {
            let plan = plan.resolve()?;
            std::fs::create_dir_all(&out)?;
            let prepared = prepare_from_csv(&prep, &plan, seed)?;
            let spec = AblationSpec::standard();
            spec.validate()?;
            let cfg = hyper.to_curriculum(seed);
            let dims = scaled_dims(hyper.model_scale);
            let run_arch = which == "arch" || which == "both";
            let run_pipe = which == "pipeline" || which == "both";
            if !(run_arch || run_pipe) {
                return Err(Error::InvalidConfig(format!(
                    "--which must be arch, pipeline, or both (got {which:?})"
                )));
            }
            if run_arch {
                let rows =
                    run_architecture_ablation(&prepared, &dims, &cfg, &spec.arch, hyper.threshold)?;
                std::fs::write(out.join("ablation_arch.csv"), rows_to_csv(&rows))?;
                std::fs::write(
                    out.join("ablation_arch.json"),
                    serde_json::to_string_pretty(&rows)?,
                )?;
                for r in &rows {
                    println!("arch {:<18} {:.2}%", r.name, r.accuracy * 100.0);
                }
            }
            if run_pipe {
                let ecfg = EnsembleConfig {
                    seed,
                    ..Default::default()
                };
                let rows = run_pipeline_ablation(
                    &prepared,
                    &dims,
                    &cfg,
                    &ecfg,
                    &spec.pipeline,
                    hyper.threshold,
                )?;
                std::fs::write(out.join("ablation_pipeline.csv"), rows_to_csv(&rows))?;
                std::fs::write(
                    out.join("ablation_pipeline.json"),
                    serde_json::to_string_pretty(&rows)?,
                )?;
                for r in &rows {
                    println!("pipeline {:<14} {:.2}%", r.name, r.accuracy * 100.0);
                }
            }
            Ok(())
        }
    }
}

fn prepare_from_csv(
    prep: &DataPrepArgs,
    plan: &StagePlan,
    seed: u64,
) -> Result<crate::pipeline::PreparedData> {
    let raw_bytes = std::fs::read(&prep.data)
        .map_err(|e| Error::IoFailure(format!("{}: {e}", prep.data.display())))?;
    let fingerprint = fingerprint_bytes(&raw_bytes);
    let table = load_table(&prep.data, &prep.label_column)?;
    let (cleaned, encoder) = clean_table_with_encoder(&table, prep.outlier_z)?;
    let records = records_from_table(&cleaned, plan)?;
    let raw_feature_names = feature_names_from_table(&cleaned);
    let opts = PrepareOptions {
        outlier_z: prep.outlier_z,
        use_pca: !prep.no_pca,
        retained_variance: prep.retained_variance,
        max_components: prep.max_components,
        window: prep.window,
        stride: prep.stride,
        test_fraction: prep.test_fraction,
        validation_fraction: prep.validation_fraction,
        seed,
    };
    prepare_data(
        &records,
        &raw_feature_names,
        &prep.label_column,
        encoder,
        plan,
        &opts,
        fingerprint,
    )
}

fn scaled_dims(scale: f64) -> ModelDims {
    let d = ModelDims::default();
    let s = |v: usize| ((v as f64 * scale).round() as usize).max(2);
    ModelDims {
        conv_channels: s(d.conv_channels),
        encoder_dim: s(d.encoder_dim),
        gru_units: s(d.gru_units),
        lstm_units: s(d.lstm_units),
        attention_dim: s(d.attention_dim),
        ..d
    }
}

fn batch_stats(means: &[Vec<f64>], f: usize) -> TrainStats {
    let n = means.len().max(1) as f64;
    let mut mu = vec![0.0; f];
    for row in means {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut var = vec![0.0; f];
    for row in means {
        for (j, v) in row.iter().enumerate() {
            let d = v - mu[j];
            var[j] += d * d;
        }
    }
    TrainStats::new(mu, var.iter().map(|v| (v / n).sqrt()).collect())
}

fn format_cell(cell: &Cell) -> String {
    match cell {
        Cell::Number(v) => format!("{v}"),
        Cell::Text(s) => s.clone(),
        Cell::Missing => String::new(),
    }
}

fn write_table_csv(path: &PathBuf, table: &RawTable) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::IoFailure(e.to_string()))?;
    writer
        .write_record(&table.column_names)
        .map_err(|e| Error::IoFailure(e.to_string()))?;
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(format_cell).collect();
        writer
            .write_record(&cells)
            .map_err(|e| Error::IoFailure(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

fn write_records_csv(
    path: &PathBuf,
    records: &[crate::data::matrix::FlowRecord],
    feature_names: &[String],
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::IoFailure(e.to_string()))?;
    let mut header: Vec<String> = feature_names.to_vec();
    header.push("Attack_type".to_string());
    writer
        .write_record(&header)
        .map_err(|e| Error::IoFailure(e.to_string()))?;
    for r in records {
        let mut row: Vec<String> = r.features.iter().map(|v| format!("{v}")).collect();
        row.push(r.stage_tag.clone());
        writer
            .write_record(&row)
            .map_err(|e| Error::IoFailure(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
