//! Local surrogate explanations (LIME) and the feature un-learning rule.
//!
//! Perturbations are Gaussian in standardized units, weighted by an RBF
//! kernel, and fitted with a closed-form ridge regression. Aggregated mean
//! signed weights below the drop threshold (-0.01 by default) select the
//! features to un-learn.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::rng::{rng_from_seed, standard_normal};

pub const DROP_THRESHOLD: f64 = -0.01;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimeConfig {
    pub num_samples: usize,
    /// RBF kernel width in standardized units; defaults to 0.75 * sqrt(F).
    pub kernel_width: Option<f64>,
    pub top_k: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            num_samples: 1000,
            kernel_width: None,
            top_k: 10,
            ridge_lambda: 1e-3,
            seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn effective_kernel_width(&self, n_features: usize) -> f64 {
        self.kernel_width
            .unwrap_or_else(|| 0.75 * (n_features as f64).sqrt())
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.num_samples < n_features + 2 {
            return Err(Error::InvalidConfig(format!(
                "num_samples {} too small for {} features (need at least F+2)",
                self.num_samples, n_features
            )));
        }
        if self.effective_kernel_width(n_features) <= 0.0 {
            return Err(Error::InvalidConfig("kernel width must be positive".into()));
        }
        Ok(())
    }
}

/// Per-feature training statistics the perturbation sampler needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStats {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl TrainStats {
    pub fn new(means: Vec<f64>, stddevs: Vec<f64>) -> Self {
        let stddevs = stddevs
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        TrainStats { means, stddevs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub instance_id: String,
    pub predicted_probability: f64,
    /// (feature index, signed weight), sorted by |weight| descending,
    /// truncated to top_k.
    pub feature_weights: Vec<(usize, f64)>,
    pub intercept: f64,
    pub local_fidelity_r2: f64,
    /// Set when the black box was constant over all perturbations; the
    /// weights are then all zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceSummary {
    /// Mean signed weight per feature over the explained instances
    /// (features absent from an explanation contribute zero).
    pub mean_weights: Vec<f64>,
    /// Fraction of explanations that selected each feature.
    pub selection_frequency: Vec<f64>,
    pub n_instances: usize,
}

/// The seeded perturbation design: standardized offsets `z`, raw-space
/// points, and kernel weights. Exposed so tests can rebuild the exact
/// design and fit an independent reference regression.
pub struct PerturbationDesign {
    /// `[num_samples x F]` standardized offsets from the instance.
    pub z: Vec<f64>,
    /// `[num_samples x F]` raw-space perturbed points.
    pub raw: Vec<f64>,
    pub kernel_weights: Vec<f64>,
    pub n_features: usize,
}

/// Draw the perturbation design for an instance (deterministic in the
/// config seed).
pub fn sample_perturbations(
    instance: &[f64],
    stats: &TrainStats,
    cfg: &LimeConfig,
) -> PerturbationDesign {
    let f = instance.len();
    let n = cfg.num_samples;
    let width = cfg.effective_kernel_width(f);
    let mut rng = rng_from_seed(cfg.seed);
    let mut z = Vec::with_capacity(n * f);
    let mut raw = Vec::with_capacity(n * f);
    let mut kernel_weights = Vec::with_capacity(n);
    for _ in 0..n {
        let mut dist2 = 0.0;
        for j in 0..f {
            let offset = standard_normal(&mut rng);
            z.push(offset);
            raw.push(instance[j] + offset * stats.stddevs[j]);
            dist2 += offset * offset;
        }
        kernel_weights.push((-dist2 / (width * width)).exp());
    }
    PerturbationDesign {
        z,
        raw,
        kernel_weights,
        n_features: f,
    }
}

/// Fit the weighted ridge surrogate to a black-box probability function
/// around one instance.
pub fn lime_explain(
    predict: &dyn Fn(&[f64]) -> f64,
    instance: &[f64],
    stats: &TrainStats,
    cfg: &LimeConfig,
    instance_id: &str,
) -> Result<Explanation> {
    let f = instance.len();
    let batched = |rows: &[f64], n: usize| -> Result<Vec<f64>> {
        Ok((0..n).map(|i| predict(&rows[i * f..(i + 1) * f])).collect())
    };
    lime_explain_batched(&batched, instance, stats, cfg, instance_id)
}

/// [`lime_explain`] for black boxes that score many rows at once (the
/// sequence model evaluates all perturbations in a single batch).
pub fn lime_explain_batched(
    predict_batch: &dyn Fn(&[f64], usize) -> Result<Vec<f64>>,
    instance: &[f64],
    stats: &TrainStats,
    cfg: &LimeConfig,
    instance_id: &str,
) -> Result<Explanation> {
    let f = instance.len();
    if stats.means.len() != f || stats.stddevs.len() != f {
        return Err(Error::DimensionMismatch {
            expected: f,
            got: stats.means.len(),
        });
    }
    cfg.validate(f)?;
    let design = sample_perturbations(instance, stats, cfg);
    let n = cfg.num_samples;
    let targets = predict_batch(&design.raw, n)?;
    let predicted_probability = predict_batch(instance, 1)?[0];

    let spread = targets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if spread.1 - spread.0 < 1e-12 {
        return Ok(Explanation {
            instance_id: instance_id.to_string(),
            predicted_probability,
            feature_weights: (0..f.min(cfg.top_k)).map(|j| (j, 0.0)).collect(),
            intercept: predicted_probability,
            local_fidelity_r2: 0.0,
            degenerate: true,
        });
    }

    let coeffs = weighted_ridge(&design.z, &targets, &design.kernel_weights, f, cfg.ridge_lambda);
    let intercept = coeffs[0];
    let betas = &coeffs[1..];

    // weighted R^2 of the surrogate fit
    let w_total: f64 = design.kernel_weights.iter().sum();
    let y_mean: f64 = targets
        .iter()
        .zip(&design.kernel_weights)
        .map(|(y, w)| y * w)
        .sum::<f64>()
        / w_total;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..n {
        let mut pred = intercept;
        for j in 0..f {
            pred += betas[j] * design.z[i * f + j];
        }
        let w = design.kernel_weights[i];
        ss_res += w * (targets[i] - pred) * (targets[i] - pred);
        ss_tot += w * (targets[i] - y_mean) * (targets[i] - y_mean);
    }
    let local_fidelity_r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };

    let mut feature_weights: Vec<(usize, f64)> = betas.iter().copied().enumerate().collect();
    feature_weights.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    feature_weights.truncate(cfg.top_k);

    Ok(Explanation {
        instance_id: instance_id.to_string(),
        predicted_probability,
        feature_weights,
        intercept,
        local_fidelity_r2,
        degenerate: false,
    })
}

/// Closed-form weighted ridge with an unpenalized intercept: solves
/// `(X^T K X + lambda I') beta = X^T K y` where `X = [1 | z]`.
fn weighted_ridge(z: &[f64], y: &[f64], w: &[f64], f: usize, lambda: f64) -> Vec<f64> {
    let d = f + 1;
    let n = y.len();
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    let mut xi = vec![0.0; d];
    for i in 0..n {
        xi[0] = 1.0;
        xi[1..].copy_from_slice(&z[i * f..(i + 1) * f]);
        let wi = w[i];
        for a in 0..d {
            let xa = xi[a] * wi;
            xty[a] += xa * y[i];
            for b in a..d {
                xtx[a * d + b] += xa * xi[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[a * d + b] = xtx[b * d + a];
        }
    }
    for a in 1..d {
        xtx[a * d + a] += lambda;
    }
    // tiny jitter keeps the intercept row positive definite
    xtx[0] += 1e-12;
    solve_spd(&xtx, &xty, d)
}

/// Average signed weights and selection frequencies over explanations.
pub fn aggregate_importance(explanations: &[Explanation], n_features: usize) -> Result<ImportanceSummary> {
    if explanations.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut mean_weights = vec![0.0; n_features];
    let mut selection_frequency = vec![0.0; n_features];
    for e in explanations {
        for &(j, w) in &e.feature_weights {
            if j < n_features {
                mean_weights[j] += w;
                selection_frequency[j] += 1.0;
            }
        }
    }
    let n = explanations.len() as f64;
    for v in &mut mean_weights {
        *v /= n;
    }
    for v in &mut selection_frequency {
        *v /= n;
    }
    Ok(ImportanceSummary {
        mean_weights,
        selection_frequency,
        n_instances: explanations.len(),
    })
}

/// Features whose mean signed weight falls below the threshold. The guard
/// never returns the full feature set: when every feature qualifies, the
/// least-negative one is retained and the `warning` flag is set.
pub fn select_drop_set(summary: &ImportanceSummary, threshold: f64) -> (Vec<usize>, bool) {
    let mut drops: Vec<usize> = summary
        .mean_weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w < threshold)
        .map(|(j, _)| j)
        .collect();
    let mut warning = false;
    if drops.len() == summary.mean_weights.len() && !drops.is_empty() {
        let keep = summary
            .mean_weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(j, _)| j)
            .expect("non-empty");
        drops.retain(|&j| j != keep);
        warning = true;
    }
    drops.sort_unstable();
    (drops, warning)
}

/// JSON explanation report plus an aligned plain-text rendering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub probability: ReportProbability,
    pub weights: Vec<ReportWeight>,
    pub values: Vec<ReportValue>,
    pub local_fidelity_r2: f64,
    pub note: Option<String>,
    pub explanation: Explanation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportProbability {
    pub attack: f64,
    pub normal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportWeight {
    pub feature: String,
    pub weight: f64,
    pub threshold_expr: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportValue {
    pub feature: String,
    pub value: f64,
}

/// Build the three-part report: class probabilities, ranked signed
/// weights with threshold expressions, and the raw feature values.
pub fn build_report(
    e: &Explanation,
    feature_names: &[String],
    instance: &[f64],
    stats: &TrainStats,
) -> Result<ExplanationReport> {
    for &(j, _) in &e.feature_weights {
        if j >= feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_names.len(),
                got: j + 1,
            });
        }
    }
    let weights = e
        .feature_weights
        .iter()
        .map(|&(j, w)| {
            let name = &feature_names[j];
            let threshold_expr = if instance[j] > stats.means[j] {
                format!("{name} > {:.4}", stats.means[j])
            } else {
                format!("{name} <= {:.4}", stats.means[j])
            };
            ReportWeight {
                feature: name.clone(),
                weight: w,
                threshold_expr,
            }
        })
        .collect();
    let values = e
        .feature_weights
        .iter()
        .map(|&(j, _)| ReportValue {
            feature: feature_names[j].clone(),
            value: instance[j],
        })
        .collect();
    Ok(ExplanationReport {
        probability: ReportProbability {
            attack: e.predicted_probability,
            normal: 1.0 - e.predicted_probability,
        },
        weights,
        values,
        local_fidelity_r2: e.local_fidelity_r2,
        note: e
            .degenerate
            .then(|| "no local structure: the model is constant near this instance".to_string()),
        explanation: e.clone(),
    })
}

pub fn render_text(report: &ExplanationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "prediction probabilities\n  attack: {:.2}\n  normal: {:.2}\n",
        report.probability.attack, report.probability.normal
    ));
    if let Some(note) = &report.note {
        out.push_str(&format!("note: {note}\n"));
        return out;
    }
    out.push_str("contributing features (signed weight)\n");
    for w in &report.weights {
        out.push_str(&format!("  {:<30} {:+.4}\n", w.threshold_expr, w.weight));
    }
    out.push_str("feature values\n");
    for v in &report.values {
        out.push_str(&format!("  {:<20} {:.6}\n", v.feature, v.value));
    }
    out.push_str(&format!("local fit R2: {:.4}\n", report.local_fidelity_r2));
    out
}

/// Write the JSON report and its text rendering next to each other.
pub fn render_explanation(
    e: &Explanation,
    feature_names: &[String],
    instance: &[f64],
    stats: &TrainStats,
    json_path: impl AsRef<Path>,
) -> Result<()> {
    let report = build_report(e, feature_names, instance, stats)?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(json_path.as_ref(), &json)
        .map_err(|err| Error::IoFailure(format!("{}: {err}", json_path.as_ref().display())))?;
    let txt_path = json_path.as_ref().with_extension("txt");
    std::fs::write(&txt_path, render_text(&report))
        .map_err(|err| Error::IoFailure(format!("{}: {err}", txt_path.display())))?;
    Ok(())
}
