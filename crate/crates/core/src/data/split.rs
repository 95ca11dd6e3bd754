use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{is_missing, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub oot_year: i32,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Two disjoint parts of a dataset plus anything worth reporting.
#[derive(Debug, Clone)]
pub struct Split {
    pub first: Dataset,
    pub second: Dataset,
    pub warnings: Vec<String>,
}

/// Rows before `oot_year` go first, rows of `oot_year` second; later rows are
/// dropped.
pub fn split_out_of_time(ds: &Dataset, oot_year: i32) -> Result<Split> {
    if !ds.year().contains(&oot_year) {
        return Err(Error::Split(format!("year {oot_year} not present")));
    }
    let mut before = Vec::new();
    let mut during = Vec::new();
    let mut rejected = 0;
    for (i, &y) in ds.year().iter().enumerate() {
        match y.cmp(&oot_year) {
            std::cmp::Ordering::Less => before.push(i),
            std::cmp::Ordering::Equal => during.push(i),
            std::cmp::Ordering::Greater => rejected += 1,
        }
    }
    if before.is_empty() {
        return Err(Error::Split(format!("no rows before {oot_year}")));
    }
    let mut warnings = Vec::new();
    if rejected > 0 {
        let msg = format!("{rejected} rows after {oot_year} rejected");
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Split {
        first: ds.subset(&before),
        second: ds.subset(&during),
        warnings,
    })
}

/// Per-class random split; `second` receives `round(fraction × class count)`
/// rows of each class. Both parts keep the input row order.
pub fn stratified_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("fraction {fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut second = BTreeSet::new();
    let mut warnings = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.target()[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "class {class} has {} rows, need at least 2",
                idx.len()
            )));
        }
        let take = (fraction * idx.len() as f64).round() as usize;
        if take == 0 {
            let msg = format!("class {class} contributes no rows to the second part");
            warn!("{msg}");
            warnings.push(msg);
        }
        idx.shuffle(&mut rng);
        second.extend(idx.into_iter().take(take));
    }
    let first: Vec<usize> = (0..ds.n_rows()).filter(|i| !second.contains(i)).collect();
    let second: Vec<usize> = second.into_iter().collect();
    Ok(Split {
        first: ds.subset(&first),
        second: ds.subset(&second),
        warnings,
    })
}

/// Stack two datasets with identical columns.
pub fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if a.feature_names() != b.feature_names() || a.feature_kinds() != b.feature_kinds() {
        return Err(Error::Schema("concat needs identical columns".into()));
    }
    let mut ds = a.clone();
    ds.features.extend_from_slice(&b.features);
    ds.target.extend_from_slice(b.target());
    ds.year.extend_from_slice(b.year());
    ds.row_ids.extend_from_slice(b.row_ids());
    for (k, v) in ds.dates.iter_mut() {
        let other = b
            .dates(k)
            .ok_or_else(|| Error::Schema(format!("date column {k} missing")))?;
        v.extend_from_slice(other);
    }
    ds.n_rows += b.n_rows();
    for (j, dict) in a.dictionaries.iter().enumerate() {
        if dict != &b.dictionaries[j] {
            return Err(Error::Schema(format!(
                "categorical dictionaries differ in column {}",
                a.feature_names()[j]
            )));
        }
    }
    ds.validate()?;
    Ok(ds)
}

/// Percentile clipping of numeric columns, fitted on one dataset and applied
/// to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileClipper {
    pub lower_q: f64,
    pub upper_q: f64,
    /// `(name, low, high)` per clipped column
    pub bounds: Vec<(String, f64, f64)>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl PercentileClipper {
    pub fn fit(ds: &Dataset, lower_q: f64, upper_q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lower_q) || !(0.0..=1.0).contains(&upper_q) || lower_q >= upper_q {
            return Err(Error::Config(format!(
                "invalid clipping quantiles {lower_q}, {upper_q}"
            )));
        }
        let mut bounds = Vec::new();
        for j in 0..ds.n_cols() {
            if ds.feature_kinds()[j] != super::FeatureKind::Numeric {
                continue;
            }
            let mut v: Vec<f64> = ds.column(j).filter(|x| !is_missing(*x)).collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            bounds.push((
                ds.feature_names()[j].clone(),
                quantile(&v, lower_q),
                quantile(&v, upper_q),
            ));
        }
        Ok(Self {
            lower_q,
            upper_q,
            bounds,
        })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let mut out = ds.clone();
        let w = out.n_cols();
        for (name, lo, hi) in &self.bounds {
            let Some(j) = out.column_index(name) else {
                continue;
            };
            for i in 0..out.n_rows {
                let v = &mut out.features[i * w + j];
                if !is_missing(*v) {
                    *v = v.clamp(*lo, *hi);
                }
            }
        }
        Ok(out)
    }
}
