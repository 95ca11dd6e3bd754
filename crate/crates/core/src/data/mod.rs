//! Tabular dataset, CSV ingestion, balance-sheet KPIs and train/test splits.
//!
//! Missing values are stored as `NaN`; no ingested value can be `NaN` because
//! the CSV reader rejects non-finite tokens. Use [`is_missing`] rather than
//! comparing against [`MISSING`].

mod csv_io;
pub mod kpi;
mod split;

use std::collections::{BTreeMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmod::DenseMatrix;

pub use csv_io::{load_csv, read_csv, write_csv, ColumnKind, ColumnSpec, Schema};
pub use split::{concat, split_out_of_time, stratified_split, PercentileClipper, Split, SplitSpec};

/// Missing-value marker.
pub const MISSING: f64 = f64::NAN;

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_rows: usize,
    /// row-major, `n_rows × n_cols`
    features: Vec<f64>,
    feature_names: Vec<String>,
    feature_kinds: Vec<FeatureKind>,
    /// Original labels for categorical columns, indexed by code.
    dictionaries: Vec<Option<Vec<String>>>,
    target: Vec<u8>,
    year: Vec<i32>,
    /// Stable identity of each row across subsets.
    row_ids: Vec<u64>,
    /// Date columns kept beside the features (not model inputs).
    dates: BTreeMap<String, Vec<Option<NaiveDate>>>,
}

/// Column payload used when assembling a [`Dataset`] column by column.
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub kind: FeatureKind,
    pub values: Vec<f64>,
    pub dictionary: Option<Vec<String>>,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            values,
            dictionary: None,
        }
    }

    pub fn categorical(name: impl Into<String>, codes: Vec<f64>, dictionary: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            values: codes,
            dictionary: Some(dictionary),
        }
    }
}

impl Dataset {
    /// Assemble from columns. Row ids default to `0..n_rows`.
    pub fn from_columns(columns: Vec<Column>, target: Vec<u8>, year: Vec<i32>) -> Result<Self> {
        let n_rows = target.len();
        let n_cols = columns.len();
        let mut features = vec![0.0; n_rows * n_cols];
        let mut names = Vec::with_capacity(n_cols);
        let mut kinds = Vec::with_capacity(n_cols);
        let mut dicts = Vec::with_capacity(n_cols);
        for (j, col) in columns.into_iter().enumerate() {
            if col.values.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column {} has {} entries, expected {}",
                    col.name,
                    col.values.len(),
                    n_rows
                )));
            }
            for (i, v) in col.values.into_iter().enumerate() {
                features[i * n_cols + j] = v;
            }
            names.push(col.name);
            kinds.push(col.kind);
            dicts.push(col.dictionary);
        }
        let ds = Self {
            n_rows,
            features,
            feature_names: names,
            feature_kinds: kinds,
            dictionaries: dicts,
            target,
            year,
            row_ids: (0..n_rows as u64).collect(),
            dates: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n_cols = self.feature_names.len();
        if self.features.len() != self.n_rows * n_cols {
            return Err(Error::Schema("feature matrix has wrong size".into()));
        }
        if self.year.len() != self.n_rows || self.row_ids.len() != self.n_rows {
            return Err(Error::Schema("year/row-id columns must have one entry per row".into()));
        }
        if let Some(i) = self.target.iter().position(|&t| t > 1) {
            return Err(Error::Schema(format!("target at row {i} is not 0/1")));
        }
        let mut seen = HashSet::new();
        for n in &self.feature_names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {n}")));
            }
        }
        for (j, kind) in self.feature_kinds.iter().enumerate() {
            if *kind != FeatureKind::Categorical {
                continue;
            }
            let Some(dict) = &self.dictionaries[j] else {
                return Err(Error::Schema(format!(
                    "categorical column {} has no dictionary",
                    self.feature_names[j]
                )));
            };
            for v in self.column(j) {
                if !is_missing(v) && (v < 0.0 || v.fract() != 0.0 || v as usize >= dict.len()) {
                    return Err(Error::Schema(format!(
                        "categorical column {} holds invalid code {v}",
                        self.feature_names[j]
                    )));
                }
            }
        }
        for (name, d) in &self.dates {
            if d.len() != self.n_rows {
                return Err(Error::Schema(format!("date column {name} has wrong length")));
            }
        }
        Ok(())
    }

    pub fn with_row_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        self.row_ids = ids;
        self.validate()?;
        Ok(self)
    }

    /// Replace the outcomes; values must be 0 or 1.
    pub fn with_target(mut self, target: Vec<u8>) -> Result<Self> {
        if target.len() != self.n_rows {
            return Err(Error::Dimension {
                expected: self.n_rows,
                got: target.len(),
            });
        }
        self.target = target;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dates(mut self, name: impl Into<String>, dates: Vec<Option<NaiveDate>>) -> Result<Self> {
        self.dates.insert(name.into(), dates);
        self.validate()?;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    pub fn dictionary(&self, j: usize) -> Option<&[String]> {
        self.dictionaries[j].as_deref()
    }

    pub fn target(&self) -> &[u8] {
        &self.target
    }

    pub fn year(&self) -> &[i32] {
        &self.year
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn dates(&self, name: &str) -> Option<&[Option<NaiveDate>]> {
        self.dates.get(name).map(Vec::as_slice)
    }

    pub fn date_columns(&self) -> impl Iterator<Item = &str> {
        self.dates.keys().map(String::as_str)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let w = self.n_cols();
        (0..self.n_rows).map(move |i| self.features[i * w + j])
    }

    pub fn column_vec(&self, j: usize) -> Vec<f64> {
        self.column(j).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn positives(&self) -> usize {
        self.target.iter().filter(|&&t| t == 1).count()
    }

    pub fn default_rate(&self) -> f64 {
        if self.n_rows == 0 {
            return 0.0;
        }
        self.positives() as f64 / self.n_rows as f64
    }

    /// Rows at the given positions, in that order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let w = self.n_cols();
        let mut features = Vec::with_capacity(rows.len() * w);
        for &i in rows {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            n_rows: rows.len(),
            features,
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
            dictionaries: self.dictionaries.clone(),
            target: rows.iter().map(|&i| self.target[i]).collect(),
            year: rows.iter().map(|&i| self.year[i]).collect(),
            row_ids: rows.iter().map(|&i| self.row_ids[i]).collect(),
            dates: self
                .dates
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// Keep only the named feature columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Dataset> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::Schema(format!("unknown column {n}")))
            })
            .collect::<Result<_>>()?;
        let mut features = Vec::with_capacity(self.n_rows * idx.len());
        for i in 0..self.n_rows {
            let r = self.row(i);
            features.extend(idx.iter().map(|&j| r[j]));
        }
        Ok(Dataset {
            n_rows: self.n_rows,
            features,
            feature_names: idx.iter().map(|&j| self.feature_names[j].clone()).collect(),
            feature_kinds: idx.iter().map(|&j| self.feature_kinds[j]).collect(),
            dictionaries: idx.iter().map(|&j| self.dictionaries[j].clone()).collect(),
            target: self.target.clone(),
            year: self.year.clone(),
            row_ids: self.row_ids.clone(),
            dates: self.dates.clone(),
        })
    }

    /// Replace (or append) a feature column.
    pub fn set_column(&mut self, col: Column) -> Result<()> {
        if col.values.len() != self.n_rows {
            return Err(Error::Dimension {
                expected: self.n_rows,
                got: col.values.len(),
            });
        }
        if let Some(j) = self.column_index(&col.name) {
            let w = self.n_cols();
            for (i, v) in col.values.into_iter().enumerate() {
                self.features[i * w + j] = v;
            }
            self.feature_kinds[j] = col.kind;
            self.dictionaries[j] = col.dictionary;
        } else {
            let w = self.n_cols();
            let mut features = Vec::with_capacity(self.n_rows * (w + 1));
            for (i, v) in col.values.into_iter().enumerate() {
                features.extend_from_slice(&self.features[i * w..(i + 1) * w]);
                features.push(v);
            }
            self.features = features;
            self.feature_names.push(col.name);
            self.feature_kinds.push(col.kind);
            self.dictionaries.push(col.dictionary);
        }
        self.validate()
    }

    pub fn drop_column(&mut self, name: &str) -> Result<()> {
        let keep: Vec<String> = self
            .feature_names
            .iter()
            .filter(|n| *n != name)
            .cloned()
            .collect();
        if keep.len() == self.n_cols() {
            return Err(Error::Schema(format!("unknown column {name}")));
        }
        *self = self.select_columns(&keep)?;
        Ok(())
    }

    /// Per-column mean over non-missing values (0 for all-missing columns).
    pub fn column_means(&self) -> Vec<f64> {
        (0..self.n_cols())
            .map(|j| {
                let (s, n) = self
                    .column(j)
                    .filter(|v| !is_missing(*v))
                    .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                if n == 0 {
                    0.0
                } else {
                    s / n as f64
                }
            })
            .collect()
    }

    /// Dense copy with missing cells replaced by the given per-column values.
    pub fn to_dense_imputed(&self, fill: &[f64]) -> DenseMatrix<f64> {
        let w = self.n_cols();
        let data = self
            .features
            .iter()
            .enumerate()
            .map(|(k, &v)| if is_missing(v) { fill[k % w] } else { v })
            .collect();
        DenseMatrix {
            n_rows: self.n_rows,
            n_cols: w,
            data,
        }
    }

    /// Label of a categorical cell, if any.
    pub fn label(&self, i: usize, j: usize) -> Option<&str> {
        let v = self.get(i, j);
        if is_missing(v) {
            return None;
        }
        self.dictionaries[j]
            .as_ref()
            .and_then(|d| d.get(v as usize))
            .map(String::as_str)
    }
}
