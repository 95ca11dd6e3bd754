//! Categorical encoders and precomputed embedding ingestion.
//!
//! Categories are keyed by their label so an encoder fitted on one file can be
//! applied to another whose dictionary codes differ.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::linmod::SparseBinary;

/// Codes in first-appearance order, plus the code → label dictionary.
pub fn label_encode<S: AsRef<str>>(values: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let mut dict = Vec::new();
    let codes = values
        .iter()
        .map(|v| {
            let v = v.as_ref();
            *lookup.entry(v).or_insert_with(|| {
                dict.push(v.to_string());
                dict.len() - 1
            })
        })
        .collect();
    (codes, dict)
}

/// One column per vocabulary entry; unseen values give an all-zero row.
pub fn one_hot_encode<S: AsRef<str>>(values: &[S], vocabulary: &[String]) -> SparseBinary {
    let index: HashMap<&str, u32> = vocabulary
        .iter()
        .enumerate()
        .map(|(k, v)| (v.as_str(), k as u32))
        .collect();
    SparseBinary::from_rows(
        vocabulary.len(),
        values
            .iter()
            .map(|v| index.get(v.as_ref()).map(|&k| vec![k]).unwrap_or_default()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub mean: f64,
    pub weight: f64,
    pub encoded: f64,
}

/// Shrinks each category's target mean toward the global mean with weight
/// `w_k = n_k τ² / (n_k τ² + s²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JamesSteinEncoder {
    pub global_mean: f64,
    /// target variance over all fitted rows
    pub s2: f64,
    /// variance of category means (categories with at least two rows)
    pub tau2: f64,
    pub categories: BTreeMap<String, CategoryStats>,
    pub fitted_on: usize,
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

impl JamesSteinEncoder {
    /// Fit on labels (`None` = missing, ignored for category statistics but
    /// counted in the global mean) and a 0/1 target.
    pub fn fit<S: AsRef<str>>(labels: &[Option<S>], target: &[u8]) -> Result<Self> {
        if labels.len() != target.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: target.len(),
            });
        }
        let y: Vec<f64> = target.iter().map(|&t| f64::from(t)).collect();
        if y.is_empty() {
            return Err(Error::Fit("James-Stein fit on empty column".into()));
        }
        let s2 = population_variance(&y);
        if s2 == 0.0 {
            return Err(Error::Fit("James-Stein fit needs a non-constant target".into()));
        }
        let global_mean = y.iter().sum::<f64>() / y.len() as f64;

        let mut acc: BTreeMap<String, (usize, f64)> = BTreeMap::new();
        for (l, &t) in labels.iter().zip(&y) {
            if let Some(l) = l {
                let e = acc.entry(l.as_ref().to_string()).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += t;
            }
        }
        let big: Vec<f64> = acc
            .values()
            .filter(|(n, _)| *n >= 2)
            .map(|(n, s)| s / *n as f64)
            .collect();
        let tau2 = if big.len() >= 2 {
            population_variance(&big)
        } else {
            0.0
        };
        let categories = acc
            .into_iter()
            .map(|(k, (n, s))| {
                let mean = s / n as f64;
                let nt = n as f64 * tau2;
                let weight = nt / (nt + s2);
                let encoded = weight * mean + (1.0 - weight) * global_mean;
                (
                    k,
                    CategoryStats {
                        count: n,
                        mean,
                        weight,
                        encoded,
                    },
                )
            })
            .collect();
        Ok(Self {
            global_mean,
            s2,
            tau2,
            categories,
            fitted_on: y.len(),
        })
    }

    pub fn transform<S: AsRef<str>>(&self, labels: &[Option<S>]) -> Vec<f64> {
        labels
            .iter()
            .map(|l| {
                l.as_ref()
                    .and_then(|l| self.categories.get(l.as_ref()))
                    .map_or(self.global_mean, |c| c.encoded)
            })
            .collect()
    }

    /// Fit on categorical column `j` of `ds`.
    pub fn fit_column(ds: &Dataset, j: usize) -> Result<Self> {
        Self::fit(&column_labels(ds, j)?, ds.target())
    }

    pub fn transform_column(&self, ds: &Dataset, j: usize) -> Result<Vec<f64>> {
        Ok(self.transform(&column_labels(ds, j)?))
    }
}

/// Labels of a categorical column; missing cells become `None`.
pub fn column_labels(ds: &Dataset, j: usize) -> Result<Vec<Option<&str>>> {
    if ds.feature_kinds()[j] != FeatureKind::Categorical {
        return Err(Error::InvalidArgument(format!(
            "column {} is not categorical",
            ds.feature_names()[j]
        )));
    }
    Ok((0..ds.n_rows()).map(|i| ds.label(i, j)).collect())
}

// ---------------------------------------------------------------------------
// Embeddings

/// Fixed-dimension vectors keyed by category label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// keys that appeared more than once in the source (last one kept)
    pub duplicates: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        let key = key.into();
        if self.vectors.insert(key.clone(), v).is_some() {
            warn!("duplicate embedding key {key}; keeping the last vector");
            self.duplicates.push(key);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    /// Parse `key v_1 … v_d` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line");
            let v = parts
                .map(|t| match t.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(Error::Ingest {
                        row: lineno + 1,
                        msg: format!("invalid embedding component {t:?}"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(v.len()));
            if v.len() != t.dim || v.is_empty() {
                return Err(Error::Ingest {
                    row: lineno + 1,
                    msg: format!("embedding has dimension {}, expected {}", v.len(), t.dim),
                });
            }
            t.insert(key, v)?;
        }
        Ok(table.unwrap_or_default())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    EmbeddingTable::parse(&std::fs::read_to_string(path)?)
}
