//! Labeled tabular data from CSV.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Result, RscmError};

/// Samples grouped by class label, in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub labels: Vec<String>,
    pub features: Vec<String>,
    pub classes: Vec<DMatrix<f64>>,
}

impl LabeledDataset {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.nrows()).collect()
    }

    /// Builds a dataset from per-class sample matrices.
    pub fn from_classes(labels: Vec<String>, classes: Vec<DMatrix<f64>>) -> Result<Self> {
        if labels.len() != classes.len() || classes.is_empty() {
            return Err(RscmError::Input(
                "labels and classes must be non-empty and of equal length".into(),
            ));
        }
        let p = classes[0].ncols();
        if let Some(c) = classes.iter().find(|c| c.ncols() != p) {
            return Err(RscmError::DimensionMismatch {
                expected: p,
                got: c.ncols(),
            });
        }
        let features = (0..p).map(|j| format!("x{j}")).collect();
        Ok(Self {
            labels,
            features,
            classes,
        })
    }

    /// Drops every feature that is constant within at least one class.
    pub fn drop_degenerate_features(mut self) -> Result<Self> {
        let p = self.dim();
        let keep: Vec<usize> = (0..p)
            .filter(|&j| {
                self.classes.iter().all(|c| {
                    let col = c.column(j);
                    let first = col[0];
                    col.iter().any(|&v| v != first)
                })
            })
            .collect();
        if keep.len() == p {
            return Ok(self);
        }
        let dropped: Vec<&str> = (0..p)
            .filter(|j| !keep.contains(j))
            .map(|j| self.features[j].as_str())
            .collect();
        warn!(
            "dropping {} feature(s) constant within a class: {}",
            dropped.len(),
            dropped.join(", ")
        );
        if keep.is_empty() {
            return Err(RscmError::Input(
                "every feature is constant within some class".into(),
            ));
        }
        self.features = keep.iter().map(|&j| self.features[j].clone()).collect();
        self.classes = self
            .classes
            .iter()
            .map(|c| c.select_columns(&keep))
            .collect();
        Ok(self)
    }
}

/// Reads a headed CSV with one label column and numeric features.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| RscmError::Input(format!("label column '{label_column}' not found")))?;
    let features: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if features.is_empty() {
        return Err(RscmError::Input("no feature columns".into()));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let label = record[label_idx].to_string();
        let buf = rows.entry(label.clone()).or_insert_with(|| {
            order.push(label.clone());
            Vec::new()
        });
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                RscmError::Input(format!(
                    "non-numeric value '{cell}' in column '{}' at data row {}",
                    &headers[i],
                    line + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(RscmError::Input(format!(
                    "non-finite value in column '{}' at data row {}",
                    &headers[i],
                    line + 1
                )));
            }
            buf.push(v);
        }
    }
    if order.is_empty() {
        return Err(RscmError::Input("no data rows".into()));
    }

    let p = features.len();
    let mut classes = Vec::with_capacity(order.len());
    for label in &order {
        let values = &rows[label];
        let n = values.len() / p;
        if n < 2 {
            return Err(RscmError::InsufficientSamples { needed: 2, got: n });
        }
        classes.push(DMatrix::from_row_slice(n, p, values));
    }
    LabeledDataset {
        labels: order,
        features,
        classes,
    }
    .drop_degenerate_features()
}
