//! Gradient-boosted trees on a class-weighted log-loss.
//!
//! Positives carry weight `scale_pos_weight`, so per-row gradients and
//! hessians are `g = w(p − y)` and `h = w·p(1 − p)`. Trees are grown leaf-wise
//! with exact split search (see [`tree`]); each boosting round sees a row
//! subsample drawn without replacement.

pub mod tree;
mod tune;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::sigmoid;

pub use tree::{grow_tree, split_gain, GrowParams, Matrix, Presorted, Tree, TreeNode};
pub use tune::{f_beta, oot_cv_tune, CvFold, CvOutcome, FbetaConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    pub subsample_fraction: f64,
    /// Weight on positive rows; `None` uses the negative/positive count
    /// ratio of the training data.
    pub scale_pos_weight: Option<f64>,
    pub min_gain: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_leaves: 15,
            min_samples_leaf: 20,
            learning_rate: 0.05,
            subsample_fraction: 0.8,
            scale_pos_weight: None,
            min_gain: 0.0,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gbdt: {m}")));
        if self.max_leaves < 2 {
            return bad("max_leaves must be at least 2");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad("subsample_fraction must be in (0, 1]");
        }
        if let Some(w) = self.scale_pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad("scale_pos_weight must be positive");
            }
        }
        if !(self.lambda >= 0.0) || !(self.min_gain >= 0.0) {
            return bad("lambda and min_gain must be non-negative");
        }
        Ok(())
    }

    fn grow_params(&self) -> GrowParams {
        GrowParams {
            max_leaves: self.max_leaves,
            min_samples_leaf: self.min_samples_leaf,
            lambda: self.lambda,
            min_gain: self.min_gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    /// the weight actually applied to positives
    pub scale_pos_weight: f64,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    pub config: GbdtConfig,
}

/// Log-odds of the class prior with positives weighted by `w`.
pub fn weighted_base_score(positives: usize, negatives: usize, w: f64) -> f64 {
    (w * positives as f64 / negatives as f64).ln()
}

fn check_target(y: &[u8]) -> Result<(usize, usize)> {
    let pos = y.iter().filter(|&&t| t == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Fit("gbdt needs both classes in the training data".into()));
    }
    Ok((pos, neg))
}

/// Weighted log-loss `−Σ wᵢ[yᵢ ln pᵢ + (1−yᵢ) ln(1−pᵢ)]` of raw scores.
pub fn weighted_log_loss(scores: &[f64], y: &[u8], w_pos: f64) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(&s, &t)| {
            // ln(1 + e^{-s}) and ln(1 + e^{s}) in overflow-safe form
            let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
            if t == 1 {
                w_pos * softplus(-s)
            } else {
                softplus(s)
            }
        })
        .sum()
}

/// Per-round hook used by tests to inspect training progress.
pub type RoundHook<'a> = &'a mut dyn FnMut(usize, &[f64]);

/// Fit on all columns of `ds`; every feature must already be numeric.
pub fn fit(ds: &Dataset, cfg: &GbdtConfig) -> Result<GbdtModel> {
    fit_matrix(
        Matrix::new(ds.features(), ds.n_cols()),
        ds.feature_names().to_vec(),
        ds.target(),
        cfg,
        None,
    )
}

pub fn fit_matrix(
    x: Matrix<'_>,
    feature_names: Vec<String>,
    y: &[u8],
    cfg: &GbdtConfig,
    mut hook: Option<RoundHook<'_>>,
) -> Result<GbdtModel> {
    cfg.validate()?;
    if x.n_rows != y.len() {
        return Err(Error::Dimension {
            expected: x.n_rows,
            got: y.len(),
        });
    }
    let (pos, neg) = check_target(y)?;
    let w_pos = cfg.scale_pos_weight.unwrap_or(neg as f64 / pos as f64);
    let base_score = weighted_base_score(pos, neg, w_pos);
    let n = x.n_rows;
    let presorted = Presorted::new(x);
    let allowed = vec![true; x.n_cols];
    let params = cfg.grow_params();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_sub = ((cfg.subsample_fraction * n as f64).ceil() as usize).clamp(1, n);

    let mut score = vec![base_score; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut in_sample = vec![false; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut skipped = 0;
    for round in 0..cfg.n_trees {
        g.par_iter_mut()
            .zip(h.par_iter_mut())
            .zip(score.par_iter().zip(y.par_iter()))
            .for_each(|((gi, hi), (&s, &t))| {
                let p = sigmoid(s);
                let w = if t == 1 { w_pos } else { 1.0 };
                *gi = w * (p - f64::from(t));
                *hi = w * p * (1.0 - p);
            });
        if n_sub == n {
            in_sample.fill(true);
        } else {
            in_sample.fill(false);
            for i in sample(&mut rng, n, n_sub) {
                in_sample[i] = true;
            }
        }
        match grow_tree(&presorted, &in_sample, &allowed, &g, &h, &params) {
            Some(t) => {
                let eta = cfg.learning_rate;
                score.par_iter_mut().enumerate().for_each(|(i, s)| {
                    *s += eta * t.value(x.row(i));
                });
                trees.push(t);
            }
            None => skipped += 1,
        }
        if let Some(hook) = hook.as_mut() {
            hook(round, &score);
        }
    }
    if cfg.n_trees > 0 && trees.is_empty() {
        warn!("no tree found a split with positive gain; model is the base score only");
    } else if skipped > 0 {
        warn!("{skipped} boosting rounds found no split and were skipped");
    }
    Ok(GbdtModel {
        base_score,
        learning_rate: cfg.learning_rate,
        scale_pos_weight: w_pos,
        n_features: x.n_cols,
        feature_names,
        trees,
        config: cfg.clone(),
    })
}

impl GbdtModel {
    fn check_width(&self, n_cols: usize) -> Result<()> {
        if n_cols != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: n_cols,
            });
        }
        Ok(())
    }

    /// `base_score + η·Σ_t leaf value`, summed in tree order.
    pub fn raw_score_row(&self, row: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.value(row)).sum();
        self.base_score + self.learning_rate * s
    }

    pub fn raw_scores(&self, x: Matrix<'_>) -> Result<Vec<f64>> {
        self.check_width(x.n_cols)?;
        Ok((0..x.n_rows)
            .into_par_iter()
            .map(|i| self.raw_score_row(x.row(i)))
            .collect())
    }

    pub fn predict_proba(&self, x: Matrix<'_>) -> Result<Vec<f64>> {
        Ok(self.raw_scores(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.predict_proba(Matrix::new(ds.features(), ds.n_cols()))
    }

    /// One leaf id per tree for each row.
    pub fn leaf_indices(&self, x: Matrix<'_>) -> Result<Vec<Vec<usize>>> {
        self.check_width(x.n_cols)?;
        Ok((0..x.n_rows)
            .into_par_iter()
            .map(|i| {
                let r = x.row(i);
                self.trees.iter().map(|t| t.leaf_index(r)).collect()
            })
            .collect())
    }

    /// Raw score rebuilt from leaf ids; equals [`Self::raw_score_row`].
    pub fn score_from_leaves(&self, leaves: &[usize]) -> f64 {
        let s: f64 = self
            .trees
            .iter()
            .zip(leaves)
            .map(|(t, &l)| t.leaf_values()[l])
            .sum();
        self.base_score + self.learning_rate * s
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.trees.iter().map(|t| t.n_leaves).collect()
    }

    /// Total split gain per feature, normalised to sum 1 (all zeros when the
    /// model has no splits).
    pub fn importance(&self) -> Vec<f64> {
        gain_importance(&self.trees, self.n_features)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn gain_importance(trees: &[Tree], n_features: usize) -> Vec<f64> {
    let mut imp = vec![0.0; n_features];
    for t in trees {
        for (f, gain) in t.split_features() {
            imp[f] += gain;
        }
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        for v in imp.iter_mut() {
            *v /= total;
        }
    }
    imp
}

// ---------------------------------------------------------------------------
// Random forest through the same tree learner

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_leaves: 31,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

/// Bagged regression trees on the 0/1 target: bootstrap rows, a random
/// `⌈√p⌉` feature subset per tree. Squared loss makes every leaf the mean
/// target of its (weighted) rows and every gain a variance reduction.
pub fn fit_forest(x: Matrix<'_>, y: &[u8], cfg: &ForestConfig) -> Vec<Tree> {
    let n = x.n_rows;
    if n == 0 || x.n_cols == 0 {
        return Vec::new();
    }
    let presorted = Presorted::new(x);
    let params = GrowParams {
        max_leaves: cfg.max_leaves.max(2),
        min_samples_leaf: cfg.min_samples_leaf.max(1),
        lambda: 0.0,
        min_gain: 0.0,
    };
    let m = ((x.n_cols as f64).sqrt().ceil() as usize).clamp(1, x.n_cols);
    (0..cfg.n_trees)
        .into_par_iter()
        .filter_map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let mut mult = vec![0u32; n];
            for _ in 0..n {
                mult[rand::Rng::gen_range(&mut rng, 0..n)] += 1;
            }
            let mut allowed = vec![false; x.n_cols];
            for j in sample(&mut rng, x.n_cols, m) {
                allowed[j] = true;
            }
            let in_sample: Vec<bool> = mult.iter().map(|&k| k > 0).collect();
            let h: Vec<f64> = mult.iter().map(|&k| f64::from(k)).collect();
            let g: Vec<f64> = mult.iter().zip(y).map(|(&k, &t)| -f64::from(k) * f64::from(t)).collect();
            grow_tree(&presorted, &in_sample, &allowed, &g, &h, &params)
        })
        .collect()
}
