//! Raw CSV tables: loading, cleaning, and categorical encoding.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A parsed cell: numeric, categorical text, or missing (empty).
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn parse(raw: &str) -> Cell {
        if raw.is_empty() {
            return Cell::Missing;
        }
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Cell::Number(v),
            _ => Cell::Text(raw.to_string()),
        }
    }

    fn as_key(&self) -> String {
        match self {
            Cell::Number(v) => format!("n:{}", v.to_bits()),
            Cell::Text(s) => format!("t:{s}"),
            Cell::Missing => "m".to_string(),
        }
    }

    pub fn as_text(&self) -> String {
        match self {
            Cell::Number(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

/// A loaded CSV table. Every row has exactly `column_names.len()` cells and
/// `label_column` is one of the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub label_column: String,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.column_names.len()
    }

    pub fn label_index(&self) -> usize {
        self.column_names
            .iter()
            .position(|c| c == &self.label_column)
            .expect("label column present by construction")
    }
}

/// Load a headered CSV file. Numeric cells parse as reals, everything else
/// stays text, empty cells are missing.
pub fn load_table(path: impl AsRef<Path>, label_column: &str) -> Result<RawTable> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::IoFailure(e.to_string()))?;
    let column_names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::IoFailure(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if !column_names.iter().any(|c| c == label_column) {
        return Err(Error::MissingLabelColumn(label_column.to_string()));
    }
    let expected = column_names.len();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::IoFailure(e.to_string()))?;
        if record.len() != expected {
            return Err(Error::RaggedRow {
                row: i + 1,
                found: record.len(),
                expected,
            });
        }
        rows.push(record.iter().map(Cell::parse).collect());
    }
    Ok(RawTable {
        column_names,
        rows,
        label_column: label_column.to_string(),
    })
}

/// First-appearance integer encoding for categorical columns, fit on one
/// table and reusable on another (unseen categories map to -1).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    /// column index -> category text -> code
    maps: BTreeMap<usize, BTreeMap<String, i64>>,
}

impl CategoricalEncoder {
    pub fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.maps.keys().copied()
    }

    fn fit_column(&mut self, col: usize, rows: &[Vec<Cell>]) {
        let map = self.maps.entry(col).or_default();
        for row in rows {
            let key = row[col].as_text();
            let next = map.len() as i64;
            map.entry(key).or_insert(next);
        }
    }

    pub fn encode(&self, col: usize, cell: &Cell) -> f64 {
        match self.maps.get(&col) {
            Some(map) => map.get(&cell.as_text()).copied().unwrap_or(-1) as f64,
            None => -1.0,
        }
    }
}

/// Clean a table: fill missing numeric cells with zero, drop exact
/// duplicates (first kept), integer-encode categorical columns, then remove
/// z-score outliers until a fixed point. The label column is left untouched
/// so attack-type strings survive for staging.
///
/// Outlier removal iterates because removing rows shifts the column
/// statistics; stopping at the fixed point makes cleaning idempotent.
pub fn clean_table(t: &RawTable, outlier_z: f64) -> Result<RawTable> {
    let (cleaned, _) = clean_table_with_encoder(t, outlier_z)?;
    Ok(cleaned)
}

/// [`clean_table`] that also returns the fitted categorical encoder, for
/// applying the same category codes to a second table.
pub fn clean_table_with_encoder(
    t: &RawTable,
    outlier_z: f64,
) -> Result<(RawTable, CategoricalEncoder)> {
    let label_idx = t.label_index();
    let n_cols = t.n_columns();

    // a column is numeric when every non-missing cell is a number
    let mut numeric_col = vec![true; n_cols];
    for row in &t.rows {
        for (c, cell) in row.iter().enumerate() {
            if matches!(cell, Cell::Text(_)) {
                numeric_col[c] = false;
            }
        }
    }

    // missing numeric cells -> 0
    let mut rows: Vec<Vec<Cell>> = t
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c != label_idx && numeric_col[c] && matches!(cell, Cell::Missing) {
                        Cell::Number(0.0)
                    } else {
                        cell.clone()
                    }
                })
                .collect()
        })
        .collect();

    // exact duplicates: first occurrence kept
    let mut seen = std::collections::BTreeSet::new();
    rows.retain(|row| {
        let key: String = row.iter().map(|c| c.as_key() + "\u{1f}").collect();
        seen.insert(key)
    });

    // categorical columns -> first-appearance codes
    let mut encoder = CategoricalEncoder::default();
    for c in 0..n_cols {
        if c != label_idx && !numeric_col[c] {
            encoder.fit_column(c, &rows);
        }
    }
    for row in &mut rows {
        for c in 0..n_cols {
            if c != label_idx && !numeric_col[c] {
                row[c] = Cell::Number(encoder.encode(c, &row[c]));
            }
        }
    }

    // z-score outlier removal to a fixed point, label column exempt
    loop {
        if rows.is_empty() {
            return Err(Error::AllRowsRemoved);
        }
        let n = rows.len() as f64;
        let mut stats = Vec::with_capacity(n_cols);
        for c in 0..n_cols {
            if c == label_idx {
                stats.push(None);
                continue;
            }
            let mut mean = 0.0;
            for row in &rows {
                if let Cell::Number(v) = row[c] {
                    mean += v;
                }
            }
            mean /= n;
            let mut var = 0.0;
            for row in &rows {
                if let Cell::Number(v) = row[c] {
                    var += (v - mean) * (v - mean);
                }
            }
            let std = (var / n).sqrt();
            stats.push(Some((mean, std)));
        }
        let before = rows.len();
        rows.retain(|row| {
            row.iter().zip(&stats).all(|(cell, stat)| {
                match (cell, stat) {
                    (Cell::Number(v), Some((mean, std))) if *std > 0.0 => {
                        ((v - mean) / std).abs() <= outlier_z
                    }
                    _ => true,
                }
            })
        });
        if rows.len() == before {
            break;
        }
    }

    Ok((
        RawTable {
            column_names: t.column_names.clone(),
            rows,
            label_column: t.label_column.clone(),
        },
        encoder,
    ))
}

/// Apply a fitted encoder to another table (same schema): missing numeric
/// cells become zero and categorical cells use the training codes, with
/// unseen categories mapped to -1. No rows are dropped.
pub fn apply_encoder(t: &RawTable, encoder: &CategoricalEncoder) -> RawTable {
    let label_idx = t.label_index();
    let categorical: std::collections::BTreeSet<usize> = encoder.columns().collect();
    let rows = t
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == label_idx {
                        cell.clone()
                    } else if categorical.contains(&c) {
                        Cell::Number(encoder.encode(c, cell))
                    } else if matches!(cell, Cell::Missing) {
                        Cell::Number(0.0)
                    } else {
                        cell.clone()
                    }
                })
                .collect()
        })
        .collect();
    RawTable {
        column_names: t.column_names.clone(),
        rows,
        label_column: t.label_column.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn table(cols: &[&str], label: &str, rows: Vec<Vec<Cell>>) -> RawTable {
        RawTable {
            column_names: cols.iter().map(|s| s.to_string()).collect(),
            rows,
            label_column: label.to_string(),
        }
    }

    #[test]
    fn load_three_row_csv() {
        let f = write_csv("a,b,Attack_type\n1,2,Normal\n3,x,DDoS\n5,,MITM\n");
        let t = load_table(f.path(), "Attack_type").unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.rows[0][0], Cell::Number(1.0));
        assert_eq!(t.rows[1][1], Cell::Text("x".into()));
        assert_eq!(t.rows[2][1], Cell::Missing);
    }

    #[test]
    fn load_missing_label_column() {
        let f = write_csv("a,b\n1,2\n");
        assert!(matches!(
            load_table(f.path(), "Attack_type"),
            Err(Error::MissingLabelColumn(_))
        ));
    }

    #[test]
    fn load_ragged_row() {
        let f = write_csv("a,b,c,d,e,f\n1,2,3,4,5\n");
        assert!(matches!(
            load_table(f.path(), "a"),
            Err(Error::RaggedRow {
                row: 1,
                found: 5,
                expected: 6
            })
        ));
    }

    #[test]
    fn load_missing_file() {
        assert!(matches!(
            load_table("/nonexistent/file.csv", "a"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn missing_numeric_becomes_zero() {
        let t = table(
            &["x", "label"],
            "label",
            vec![
                vec![Cell::Missing, Cell::Text("normal".into())],
                vec![Cell::Number(5.0), Cell::Text("attack".into())],
            ],
        );
        let c = clean_table(&t, 4.0).unwrap();
        assert_eq!(c.rows[0][0], Cell::Number(0.0));
    }

    #[test]
    fn duplicates_removed_first_kept() {
        let t = table(
            &["x", "label"],
            "label",
            vec![
                vec![Cell::Number(1.0), Cell::Text("normal".into())],
                vec![Cell::Number(1.0), Cell::Text("normal".into())],
                vec![Cell::Number(2.0), Cell::Text("attack".into())],
            ],
        );
        let c = clean_table(&t, 4.0).unwrap();
        assert_eq!(c.n_rows(), 2);
    }

    /// Hand-computed z for the column {0,0,0,0,1000}:
    /// mean = 200, population std = sqrt((4*200^2 + 800^2)/5) = sqrt(256000),
    /// z(1000) = 800/sqrt(256000) = sqrt(2.5) = 1.5811388300841898.
    /// The extreme row therefore survives the default threshold of 4 and is
    /// dropped once the threshold falls below sqrt(2.5).
    #[test]
    fn outlier_threshold_from_hand_computed_z() {
        let rows: Vec<Vec<Cell>> = [0.0, 0.0, 0.0, 0.0, 1000.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                vec![
                    Cell::Number(v),
                    Cell::Number(i as f64),
                    Cell::Text("normal".into()),
                ]
            })
            .collect();
        let t = table(&["x", "id", "label"], "label", rows);

        let z = 800.0 / (256000.0f64).sqrt();
        assert!((z - 2.5f64.sqrt()).abs() < 1e-12);

        let kept = clean_table(&t, 4.0).unwrap();
        assert_eq!(kept.n_rows(), 5, "z={z} < 4 keeps every row");

        let dropped = clean_table(&t, 1.5).unwrap();
        assert!(dropped.n_rows() < 5, "z={z} > 1.5 drops the outlier row");
        assert!(dropped
            .rows
            .iter()
            .all(|r| r[0] != Cell::Number(1000.0)));
    }

    #[test]
    fn categorical_first_appearance_coding() {
        let t = table(
            &["proto", "label"],
            "label",
            vec![
                vec![Cell::Text("tcp".into()), Cell::Text("normal".into())],
                vec![Cell::Text("udp".into()), Cell::Text("attack".into())],
                vec![Cell::Text("tcp".into()), Cell::Text("attack".into())],
            ],
        );
        let (c, enc) = clean_table_with_encoder(&t, 4.0).unwrap();
        assert_eq!(c.rows[0][0], Cell::Number(0.0));
        assert_eq!(c.rows[1][0], Cell::Number(1.0));
        assert_eq!(c.rows[2][0], Cell::Number(0.0));
        // unseen category maps to -1 under the frozen encoder
        assert_eq!(enc.encode(0, &Cell::Text("icmp".into())), -1.0);
    }

    #[test]
    fn label_column_stays_text() {
        let t = table(
            &["x", "label"],
            "label",
            vec![vec![Cell::Number(1.0), Cell::Text("DDoS".into())]],
        );
        let c = clean_table(&t, 4.0).unwrap();
        assert_eq!(c.rows[0][1], Cell::Text("DDoS".into()));
    }

    #[test]
    fn cleaning_all_rows_errors() {
        let t = table(&["x", "label"], "label", vec![]);
        assert!(matches!(clean_table(&t, 4.0), Err(Error::AllRowsRemoved)));
    }

    #[test]
    fn cleaning_is_idempotent_on_mixed_table() {
        let t = table(
            &["x", "proto", "label"],
            "label",
            vec![
                vec![
                    Cell::Number(1.0),
                    Cell::Text("tcp".into()),
                    Cell::Text("normal".into()),
                ],
                vec![Cell::Missing, Cell::Text("udp".into()), Cell::Text("a".into())],
                vec![
                    Cell::Number(50.0),
                    Cell::Text("tcp".into()),
                    Cell::Text("a".into()),
                ],
                vec![
                    Cell::Number(2.0),
                    Cell::Text("icmp".into()),
                    Cell::Text("normal".into()),
                ],
            ],
        );
        let once = clean_table(&t, 1.2).unwrap();
        let twice = clean_table(&once, 1.2).unwrap();
        assert_eq!(once, twice);
    }
}
