//! Flow records and dense feature matrices.

use serde::{Deserialize, Serialize};

use crate::data::stage::StagePlan;
use crate::data::table::{Cell, RawTable};
use crate::error::{Error, Result};

/// One preprocessed flow: standardized features, a binary label, and the
/// original attack-type string retained for curriculum staging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub features: Vec<f64>,
    pub label: u8,
    pub stage_tag: String,
}

/// Dense `[n_samples x n_features]` matrix with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub x: Vec<f64>,
    pub y: Vec<u8>,
    pub feature_names: Vec<String>,
    pub n_features: usize,
}

impl FeatureMatrix {
    pub fn new(x: Vec<f64>, y: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        let n_features = feature_names.len();
        if n_features == 0 && !x.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 0,
                got: x.len(),
            });
        }
        if n_features > 0 && x.len() != y.len() * n_features {
            return Err(Error::DimensionMismatch {
                expected: y.len() * n_features,
                got: x.len(),
            });
        }
        Ok(FeatureMatrix {
            x,
            y,
            feature_names,
            n_features,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn take_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut x = Vec::with_capacity(idx.len() * self.n_features);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        FeatureMatrix {
            x,
            y,
            feature_names: self.feature_names.clone(),
            n_features: self.n_features,
        }
    }

    /// Per-column mean and population standard deviation.
    pub fn column_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_samples().max(1) as f64;
        let f = self.n_features;
        let mut means = vec![0.0; f];
        for i in 0..self.n_samples() {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut stds = vec![0.0; f];
        for i in 0..self.n_samples() {
            for (j, v) in self.row(i).iter().enumerate() {
                let d = v - means[j];
                stds[j] += d * d;
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
        }
        (means, stds)
    }
}

/// Convert a cleaned table into flow records. Every non-label column must
/// be numeric (run [`crate::data::table::clean_table`] first). The binary
/// label is 0 when the attack-type string matches a stage-1 pattern of the
/// plan and 1 otherwise.
pub fn records_from_table(t: &RawTable, plan: &StagePlan) -> Result<Vec<FlowRecord>> {
    let label_idx = t.label_index();
    let mut records = Vec::with_capacity(t.n_rows());
    for (i, row) in t.rows.iter().enumerate() {
        let mut features = Vec::with_capacity(t.n_columns() - 1);
        for (c, cell) in row.iter().enumerate() {
            if c == label_idx {
                continue;
            }
            match cell {
                Cell::Number(v) => features.push(*v),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "row {i} column {:?} is not numeric; clean the table first",
                        t.column_names[c]
                    )))
                }
            }
        }
        let stage_tag = row[label_idx].as_text();
        let label = if plan.is_normal(&stage_tag) { 0 } else { 1 };
        records.push(FlowRecord {
            features,
            label,
            stage_tag,
        });
    }
    Ok(records)
}

/// Column names of a table excluding the label column, i.e. the feature
/// names aligned with [`records_from_table`] output.
pub fn feature_names_from_table(t: &RawTable) -> Vec<String> {
    let label_idx = t.label_index();
    t.column_names
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != label_idx)
        .map(|(_, n)| n.clone())
        .collect()
}

/// Stack records into a matrix (all records must share a feature width).
pub fn matrix_from_records(records: &[FlowRecord], feature_names: Vec<String>) -> Result<FeatureMatrix> {
    let f = feature_names.len();
    let mut x = Vec::with_capacity(records.len() * f);
    let mut y = Vec::with_capacity(records.len());
    for r in records {
        if r.features.len() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                got: r.features.len(),
            });
        }
        x.extend_from_slice(&r.features);
        y.push(r.label);
    }
    FeatureMatrix::new(x, y, feature_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::stage::{build_stage_plan, DatasetKind};

    #[test]
    fn records_binarize_against_stage_one() {
        let plan = build_stage_plan(DatasetKind::EdgeIIoT).unwrap();
        let t = RawTable {
            column_names: vec!["a".into(), "Attack_type".into()],
            rows: vec![
                vec![Cell::Number(1.0), Cell::Text("Normal".into())],
                vec![Cell::Number(2.0), Cell::Text("DDoS_TCP".into())],
            ],
            label_column: "Attack_type".into(),
        };
        let records = records_from_table(&t, &plan).unwrap();
        assert_eq!(records[0].label, 0);
        assert_eq!(records[1].label, 1);
        assert_eq!(records[1].stage_tag, "DDoS_TCP");
    }

    #[test]
    fn matrix_round_trip() {
        let records = vec![
            FlowRecord {
                features: vec![1.0, 2.0],
                label: 0,
                stage_tag: "normal".into(),
            },
            FlowRecord {
                features: vec![3.0, 4.0],
                label: 1,
                stage_tag: "dos".into(),
            },
        ];
        let m = matrix_from_records(&records, vec!["f0".into(), "f1".into()]).unwrap();
        assert_eq!(m.n_samples(), 2);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        let (means, stds) = m.column_stats();
        assert_eq!(means, vec![2.0, 3.0]);
        assert_eq!(stds, vec![1.0, 1.0]);
    }
}
