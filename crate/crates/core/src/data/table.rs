use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::{Error, Result};

/// Labeled feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTable {
    pub features: Array2<f64>,
    pub labels: Vec<bool>,
    pub provenance: String,
}

impl DatasetTable {
    pub fn new(features: Array2<f64>, labels: Vec<bool>, provenance: impl Into<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.nrows() < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 samples, got {}",
                features.nrows()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::Dataset("no feature columns".into()));
        }
        if let Some((idx, _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "non-finite feature at sample {}, feature {}",
                idx.0, idx.1
            )));
        }
        Ok(Self {
            features,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `(positives, negatives)`
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y).count();
        (pos, self.len() - pos)
    }

    pub fn require_both_classes(&self) -> Result<()> {
        match self.class_counts() {
            (0, _) | (_, 0) => Err(Error::Dataset(format!(
                "{} contains a single class",
                self.provenance
            ))),
            _ => Ok(()),
        }
    }

    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), indices)
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<bool> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.rows(indices),
            labels: self.labels_at(indices),
            provenance: self.provenance.clone(),
        }
    }
}

fn parse_cell(raw: &str, row: usize, column: usize) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Ingest {
        row,
        column,
        message: format!("{raw:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Ingest {
            row,
            column,
            message: format!("non-finite value {raw:?}"),
        });
    }
    Ok(v)
}

/// Reads a headered CSV whose `label_column` holds 0/1 and whose other
/// columns are numeric features. Rows and columns in errors are 1-based
/// file coordinates (the header is row 1).
pub fn load_csv(path: &Path, label_column: &str) -> Result<DatasetTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Dataset(format!("{}: {other:?}", path.display())),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Dataset(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::Dataset(format!(
                "{}: no label column {label_column:?} in header",
                path.display()
            ))
        })?;
    let width = headers.len();
    if width < 2 {
        return Err(Error::Dataset(format!(
            "{}: need a label column and at least one feature column",
            path.display()
        )));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingest {
            row: e.position().map_or(i + 2, |p| p.line() as usize),
            column: 0,
            message: e.to_string(),
        })?;
        let row = record.position().map_or(i + 2, |p| p.line() as usize);
        if record.len() != width {
            return Err(Error::Ingest {
                row,
                column: record.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v = parse_cell(cell, row, j + 1)?;
            if j == label_idx {
                labels.push(match v {
                    x if x == 0.0 => false,
                    x if x == 1.0 => true,
                    _ => {
                        return Err(Error::Ingest {
                            row,
                            column: j + 1,
                            message: format!("label {cell:?} is not 0 or 1"),
                        })
                    }
                });
            } else {
                values.push(v);
            }
        }
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, width - 1), values).expect("row widths checked");
    let table = DatasetTable::new(features, labels, format!("csv:{}", path.display()))?;
    table.require_both_classes()?;
    Ok(table)
}

/// Writes features as `x0..x{d-1}` followed by the label column, with
/// 17 significant digits so a reload is bit-exact.
pub fn write_csv(table: &DatasetTable, path: &Path, label_column: &str) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..table.dim())
        .map(|j| format!("x{j}"))
        .chain(std::iter::once(label_column.to_string()))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (row, &y) in table.features.rows().into_iter().zip(&table.labels) {
        for v in row {
            out.push_str(&format!("{v:.16e},"));
        }
        out.push_str(if y { "1\n" } else { "0\n" });
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
