//! Standardization and variance-threshold PCA fitted on training data only.

use serde::{Deserialize, Serialize};

use crate::data::matrix::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;

/// Fitted scaler + dimensionality reducer. Applying it standardizes each
/// column with the training mean/stddev, then projects onto the leading
/// principal components of the standardized training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preprocessor {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    /// Row-major `[n_features x n_components]`; identity when no reduction
    /// was requested (`n_components == n_features` and unit diagonal).
    pub projection: Vec<f64>,
    pub n_features: usize,
    pub n_components: usize,
    pub retained_variance: f64,
    /// Fraction of total variance the kept components actually cover.
    pub achieved_variance: f64,
    /// Columns whose training variance was zero (stddev forced to 1).
    pub zero_variance_columns: Vec<usize>,
    pub eigenvalues: Vec<f64>,
}

impl Preprocessor {
    pub fn is_identity_projection(&self) -> bool {
        if self.n_components != self.n_features {
            return false;
        }
        for r in 0..self.n_features {
            for c in 0..self.n_components {
                let want = if r == c { 1.0 } else { 0.0 };
                if (self.projection[r * self.n_components + c] - want).abs() > 1e-12 {
                    return false;
                }
            }
        }
        true
    }
}

/// Fit the scaler and PCA on the training matrix. Components are kept in
/// descending eigenvalue order until they cover at least
/// `retained_variance` of the total variance.
pub fn fit_preprocessor(train: &FeatureMatrix, retained_variance: f64) -> Result<Preprocessor> {
    fit_preprocessor_capped(train, retained_variance, None)
}

/// Standardization only: the projection is the identity, so features keep
/// their raw identity (required when downstream feature-level decisions
/// must map back to the original columns).
pub fn fit_standardizer(train: &FeatureMatrix) -> Result<Preprocessor> {
    if train.n_samples() == 0 {
        return Err(Error::EmptyTrainSet);
    }
    let f = train.n_features;
    let (means, mut stddevs) = train.column_stats();
    let mut zero_variance_columns = Vec::new();
    for (j, s) in stddevs.iter_mut().enumerate() {
        if *s == 0.0 {
            zero_variance_columns.push(j);
            *s = 1.0;
        }
    }
    let mut projection = vec![0.0; f * f];
    for i in 0..f {
        projection[i * f + i] = 1.0;
    }
    Ok(Preprocessor {
        means,
        stddevs,
        projection,
        n_features: f,
        n_components: f,
        retained_variance: 1.0,
        achieved_variance: 1.0,
        zero_variance_columns,
        eigenvalues: Vec::new(),
    })
}

/// [`fit_preprocessor`] with an optional hard cap on the component count,
/// applied after the variance threshold.
pub fn fit_preprocessor_capped(
    train: &FeatureMatrix,
    retained_variance: f64,
    max_components: Option<usize>,
) -> Result<Preprocessor> {
    if train.n_samples() == 0 {
        return Err(Error::EmptyTrainSet);
    }
    if !(retained_variance > 0.0 && retained_variance <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "retained_variance must lie in (0,1], got {retained_variance}"
        )));
    }
    let f = train.n_features;
    let (means, mut stddevs) = train.column_stats();
    let mut zero_variance_columns = Vec::new();
    for (j, s) in stddevs.iter_mut().enumerate() {
        if *s == 0.0 {
            zero_variance_columns.push(j);
            *s = 1.0;
        }
    }

    // covariance of the standardized training data
    let n = train.n_samples() as f64;
    let mut cov = vec![0.0; f * f];
    let mut z_row = vec![0.0; f];
    for i in 0..train.n_samples() {
        for (j, v) in train.row(i).iter().enumerate() {
            z_row[j] = (v - means[j]) / stddevs[j];
        }
        for a in 0..f {
            for b in a..f {
                cov[a * f + b] += z_row[a] * z_row[b];
            }
        }
    }
    for a in 0..f {
        for b in a..f {
            cov[a * f + b] /= n;
            cov[b * f + a] = cov[a * f + b];
        }
    }

    let (eigenvalues, eigenvectors) = jacobi_eigen(&cov, f);
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut n_components = f;
    if total > 0.0 {
        let mut cum = 0.0;
        for (k, ev) in eigenvalues.iter().enumerate() {
            cum += ev.max(0.0);
            if cum / total >= retained_variance - 1e-12 {
                n_components = k + 1;
                break;
            }
        }
    }
    if let Some(cap) = max_components {
        n_components = n_components.min(cap.max(1));
    }
    let achieved_variance = if total > 0.0 {
        eigenvalues[..n_components]
            .iter()
            .map(|v| v.max(0.0))
            .sum::<f64>()
            / total
    } else {
        1.0
    };

    // keep the leading eigenvector columns
    let mut projection = vec![0.0; f * n_components];
    for r in 0..f {
        for c in 0..n_components {
            projection[r * n_components + c] = eigenvectors[r * f + c];
        }
    }

    Ok(Preprocessor {
        means,
        stddevs,
        projection,
        n_features: f,
        n_components,
        retained_variance,
        achieved_variance,
        zero_variance_columns,
        eigenvalues,
    })
}

/// Standardize and project a matrix with a fitted preprocessor.
pub fn transform(p: &Preprocessor, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.n_features != p.n_features {
        return Err(Error::DimensionMismatch {
            expected: p.n_features,
            got: m.n_features,
        });
    }
    let f = p.n_features;
    let k = p.n_components;
    let identity = p.is_identity_projection();
    let mut x = Vec::with_capacity(m.n_samples() * k);
    let mut z_row = vec![0.0; f];
    for i in 0..m.n_samples() {
        for (j, v) in m.row(i).iter().enumerate() {
            z_row[j] = (v - p.means[j]) / p.stddevs[j];
        }
        if identity {
            x.extend_from_slice(&z_row);
        } else {
            for c in 0..k {
                let mut acc = 0.0;
                for (r, z) in z_row.iter().enumerate() {
                    acc += z * p.projection[r * k + c];
                }
                x.push(acc);
            }
        }
    }
    let feature_names = if identity {
        m.feature_names.clone()
    } else {
        (1..=k).map(|c| format!("pc{c}")).collect()
    };
    FeatureMatrix::new(x, m.y.clone(), feature_names)
}

/// Standardize one raw feature vector without projection. Used by reports
/// that need scaler-space values.
pub fn standardize_row(p: &Preprocessor, row: &[f64]) -> Result<Vec<f64>> {
    if row.len() != p.n_features {
        return Err(Error::DimensionMismatch {
            expected: p.n_features,
            got: row.len(),
        });
    }
    Ok(row
        .iter()
        .enumerate()
        .map(|(j, v)| (v - p.means[j]) / p.stddevs[j])
        .collect())
}

/// Fisher discriminant score per feature: `(mu1 - mu0)^2 / (var0 + var1)`.
/// An optional linear-discriminant style ranking report; it never feeds the
/// projection, which is PCA-based.
pub fn fisher_scores(m: &FeatureMatrix) -> Vec<f64> {
    let f = m.n_features;
    let mut sums = [vec![0.0; f], vec![0.0; f]];
    let mut counts = [0usize, 0usize];
    for i in 0..m.n_samples() {
        let c = m.y[i] as usize;
        counts[c] += 1;
        for (j, v) in m.row(i).iter().enumerate() {
            sums[c][j] += v;
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return vec![0.0; f];
    }
    let means: Vec<[f64; 2]> = (0..f)
        .map(|j| [sums[0][j] / counts[0] as f64, sums[1][j] / counts[1] as f64])
        .collect();
    let mut vars = [vec![0.0; f], vec![0.0; f]];
    for i in 0..m.n_samples() {
        let c = m.y[i] as usize;
        for (j, v) in m.row(i).iter().enumerate() {
            let d = v - means[j][c];
            vars[c][j] += d * d;
        }
    }
    (0..f)
        .map(|j| {
            let v0 = vars[0][j] / counts[0] as f64;
            let v1 = vars[1][j] / counts[1] as f64;
            let gap = means[j][1] - means[j][0];
            if v0 + v1 > 0.0 {
                gap * gap / (v0 + v1)
            } else if gap.abs() > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect()
}
