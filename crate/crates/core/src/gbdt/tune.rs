use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_matrix, GbdtConfig, Matrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{confusion, specificity, tpr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbetaConfig {
    pub beta: f64,
}

impl Default for FbetaConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

/// `(1+β²)·spec·rec / (β²·spec + rec)`, taken as 0 when both inputs are 0.
pub fn f_beta(specificity: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * specificity + recall;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * specificity * recall / den
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub candidate: usize,
    pub test_year: i32,
    pub n_train: usize,
    pub n_test: usize,
    pub specificity: f64,
    pub recall: f64,
    pub f_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best_index: usize,
    pub best: GbdtConfig,
    /// mean F_β per candidate; `None` for discarded candidates
    pub scores: Vec<Option<f64>>,
    pub folds: Vec<CvFold>,
    pub notes: Vec<String>,
}

/// Expanding-window folds: for every year after the first, train on all
/// earlier years and test on that year.
pub fn expanding_folds(years: &[i32]) -> Vec<(i32, Vec<usize>, Vec<usize>)> {
    let distinct: BTreeSet<i32> = years.iter().copied().collect();
    distinct
        .iter()
        .skip(1)
        .map(|&test_year| {
            let train = (0..years.len()).filter(|&i| years[i] < test_year).collect();
            let test = (0..years.len()).filter(|&i| years[i] == test_year).collect();
            (test_year, train, test)
        })
        .collect()
}

fn evaluate(ds: &Dataset, cfg: &GbdtConfig, candidate: usize, test_year: i32, train: &[usize], test: &[usize], beta: f64) -> Result<CvFold> {
    let tr = ds.subset(train);
    let te = ds.subset(test);
    let model = fit_matrix(
        Matrix::new(tr.features(), tr.n_cols()),
        tr.feature_names().to_vec(),
        tr.target(),
        cfg,
        None,
    )?;
    let pd = model.predict_dataset(&te)?;
    let cm = confusion(&pd, te.target(), 0.5)?;
    let spec = specificity(&cm).value;
    let rec = tpr(&cm).value;
    Ok(CvFold {
        candidate,
        test_year,
        n_train: tr.n_rows(),
        n_test: te.n_rows(),
        specificity: spec,
        recall: rec,
        f_beta: f_beta(spec, rec, beta),
    })
}

/// Pick the grid candidate with the highest mean out-of-time F_β at
/// threshold 0.5. Exact ties prefer fewer trees, then fewer leaves, then the
/// earlier grid entry.
pub fn oot_cv_tune(ds: &Dataset, grid: &[GbdtConfig], beta: f64) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("empty gbdt grid".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    let folds = expanding_folds(ds.year());
    if folds.is_empty() {
        return Err(Error::Split("out-of-time CV needs at least two distinct years".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let results: Vec<Result<CvFold>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (year, train, test) = &folds[f];
            evaluate(ds, &grid[c], c, *year, train, test, beta)
        })
        .collect();

    let mut notes = Vec::new();
    let mut table = Vec::new();
    let mut scores = vec![Some(0.0); grid.len()];
    for ((c, f), r) in jobs.into_iter().zip(results) {
        match r {
            Ok(fold) => {
                if let Some(s) = scores[c].as_mut() {
                    *s += fold.f_beta;
                }
                table.push(fold);
            }
            Err(e) => {
                if scores[c].is_some() {
                    notes.push(format!(
                        "candidate {c} discarded: fold {} failed: {e}",
                        folds[f].0
                    ));
                }
                scores[c] = None;
            }
        }
    }
    for s in scores.iter_mut().flatten() {
        *s /= folds.len() as f64;
    }
    let mut best: Option<usize> = None;
    for (c, s) in scores.iter().enumerate() {
        let Some(s) = *s else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let sb = scores[b].expect("scored");
                s > sb
                    || (s == sb
                        && (grid[c].n_trees, grid[c].max_leaves) < (grid[b].n_trees, grid[b].max_leaves))
            }
        };
        if better {
            best = Some(c);
        }
    }
    let best_index = best.ok_or_else(|| Error::Fit(format!("every grid candidate failed: {notes:?}")))?;
    Ok(CvOutcome {
        best_index,
        best: grid[best_index].clone(),
        scores,
        folds: table,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorSpec};

    #[test]
    fn f_beta_values() {
        for r in [0.0, 0.3, 0.77, 1.0] {
            assert!((f_beta(r, r, 1.0) - r).abs() < 1e-15);
        }
        assert!((f_beta(0.8, 0.6, 2.0) - 5.0 * 0.48 / 3.8).abs() < 1e-12);
        assert!((f_beta(0.8, 0.6, 2.0) - 0.631_578_947_368_421).abs() < 1e-9);
        assert_eq!(f_beta(0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn five_expanding_folds() {
        let years: Vec<i32> = (0..60).map(|i| 2011 + i % 6).collect();
        let f = expanding_folds(&years);
        assert_eq!(f.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2012, 2013, 2014, 2015, 2016]);
        for (y, train, test) in &f {
            assert!(train.iter().all(|&i| years[i] < *y));
            assert!(test.iter().all(|&i| years[i] == *y));
        }
    }

    fn data() -> Dataset {
        generate(&GeneratorSpec {
            n_rows: 3000,
            years: (2011, 2014),
            macro_drift: vec![],
            n_noise: 3,
            n_categorical: 0,
            categorical_scales: vec![],
            intercept: -2.5,
            seed: 11,
            ..Default::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn single_candidate_returned() {
        let ds = data();
        let cfg = GbdtConfig {
            n_trees: 10,
            ..Default::default()
        };
        let out = oot_cv_tune(&ds, std::slice::from_ref(&cfg), 1.0).unwrap();
        assert_eq!(out.best, cfg);
        assert_eq!(out.folds.len(), 3);
    }

    #[test]
    fn dominant_candidate_wins_and_ties_prefer_small() {
        let ds = data();
        // no admissible split: the model stays at the balanced prior, every
        // row is predicted positive and F_β is 0 on every fold
        let weak = GbdtConfig {
            n_trees: 5,
            min_gain: 1e12,
            ..Default::default()
        };
        let good = GbdtConfig {
            n_trees: 40,
            learning_rate: 0.1,
            ..Default::default()
        };
        let out = oot_cv_tune(&ds, &[weak.clone(), good.clone()], 1.0).unwrap();
        assert_eq!(out.best_index, 1);
        for y in [2012, 2013, 2014] {
            let f = |c| out.folds.iter().find(|r| r.candidate == c && r.test_year == y).unwrap().f_beta;
            assert!(f(1) > f(0));
        }
        // identical scores: fewer trees first
        let big = GbdtConfig { n_trees: 6, ..weak.clone() };
        let out = oot_cv_tune(&ds, &[big, weak.clone()], 1.0).unwrap();
        assert_eq!(out.scores[0], out.scores[1]);
        assert_eq!(out.best_index, 1);
    }

    #[test]
    fn failing_candidate_discarded() {
        let ds = data();
        let bad = GbdtConfig {
            max_leaves: 1,
            ..Default::default()
        };
        let ok = GbdtConfig {
            n_trees: 5,
            ..Default::default()
        };
        let out = oot_cv_tune(&ds, &[bad, ok], 1.0).unwrap();
        assert_eq!(out.best_index, 1);
        assert_eq!(out.scores[0], None);
        assert_eq!(out.notes.len(), 1);
    }
}
