//! Feature selection by hard voting over six scoring methods: absolute
//! Pearson correlation, chi-squared on equal-frequency bins, recursive
//! feature elimination, L1 logistic regression, and random-forest and
//! boosted-tree gain importance.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gbdt::{self, fit_forest, gain_importance, ForestConfig, GbdtConfig, Matrix};
use crate::linmod::{fit_logistic, DenseMatrix, LogisticConfig, Penalty};

pub const DEFAULT_CHI2_BINS: usize = 10;

/// `|r|` between each column and the target; zero-variance columns score 0.
pub fn pearson_scores(x: &DenseMatrix<f64>, y: &[u8]) -> Vec<f64> {
    let n = x.n_rows as f64;
    let ym = y.iter().map(|&t| f64::from(t)).sum::<f64>() / n;
    (0..x.n_cols)
        .map(|j| {
            let xm = x.column(j).sum::<f64>() / n;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (v, &t) in x.column(j).zip(y) {
                let (dx, dy) = (v - xm, f64::from(t) - ym);
                sxy += dx * dy;
                sxx += dx * dx;
                syy += dy * dy;
            }
            if sxx > 0.0 && syy > 0.0 {
                (sxy / (sxx * syy).sqrt()).abs().min(1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Equal-frequency bin index of every value. Cut points are order
/// statistics, so tied values share a bin and any strictly increasing
/// transformation leaves the assignment unchanged.
pub fn equal_frequency_bins(values: &[f64], n_bins: usize) -> Vec<usize> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = (1..n_bins.max(1)).map(|k| sorted[k * n / n_bins]).collect();
    cuts.dedup();
    values.iter().map(|v| cuts.partition_point(|c| c <= v)).collect()
}

/// Pearson chi-squared statistic of the bins × class table. Bins with no
/// rows contribute nothing.
pub fn chi2_statistic(bins: &[usize], y: &[u8]) -> f64 {
    let n_bins = bins.iter().max().map_or(0, |&b| b + 1);
    let mut table = vec![[0.0f64; 2]; n_bins];
    for (&b, &t) in bins.iter().zip(y) {
        table[b][usize::from(t)] += 1.0;
    }
    let n = bins.len() as f64;
    let class = [0, 1].map(|c| table.iter().map(|r| r[c]).sum::<f64>());
    let mut chi2 = 0.0;
    for row in &table {
        let total = row[0] + row[1];
        for c in 0..2 {
            let expected = total * class[c] / n;
            if expected > 0.0 {
                chi2 += (row[c] - expected).powi(2) / expected;
            }
        }
    }
    chi2
}

pub fn chi2_scores(x: &DenseMatrix<f64>, y: &[u8], n_bins: usize) -> Vec<f64> {
    (0..x.n_cols)
        .map(|j| {
            let col: Vec<f64> = x.column(j).collect();
            chi2_statistic(&equal_frequency_bins(&col, n_bins), y)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeOutcome {
    /// column indices, kept columns first (in column order), then the
    /// eliminated ones from last to first removed
    pub ranking: Vec<usize>,
    pub n_kept: usize,
    pub warnings: Vec<String>,
}

/// Recursive feature elimination with a standardised logistic fit.
pub fn rfe(x: &DenseMatrix<f64>, y: &[u8], estimator: &LogisticConfig<f64>, n_keep: usize, step: usize) -> Result<RfeOutcome> {
    if n_keep == 0 || step == 0 {
        return Err(Error::Config("rfe needs n_keep ≥ 1 and step ≥ 1".into()));
    }
    let cfg = LogisticConfig {
        standardize: true,
        ..*estimator
    };
    let mut remaining: Vec<usize> = (0..x.n_cols).collect();
    let mut eliminated = Vec::new();
    let mut warnings = Vec::new();
    while remaining.len() > n_keep {
        let sub = x.select_columns(&remaining);
        let m = fit_logistic(&sub, y, &cfg)?;
        if !m.converged {
            let msg = format!("rfe estimator did not converge with {} features", remaining.len());
            warn!("{msg}");
            warnings.push(msg);
        }
        let w = m.standardized_weights.unwrap_or(m.weights);
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        // smallest |w| first; ties drop the later column
        order.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(b.cmp(&a)));
        let k = step.min(remaining.len() - n_keep);
        let mut drop: Vec<usize> = order[..k].to_vec();
        for &d in &drop {
            eliminated.push(remaining[d]);
        }
        drop.sort_unstable();
        for d in drop.into_iter().rev() {
            remaining.remove(d);
        }
    }
    let n_kept = remaining.len();
    remaining.extend(eliminated.into_iter().rev());
    Ok(RfeOutcome {
        ranking: remaining,
        n_kept,
        warnings,
    })
}

/// Columns with a nonzero L1 logistic weight, largest standardised
/// `|weight|` first.
pub fn l1_select(x: &DenseMatrix<f64>, y: &[u8], c: f64) -> Result<Vec<usize>> {
    let cfg = LogisticConfig {
        penalty: Penalty::L1,
        c,
        standardize: true,
        max_iter: 2000,
        ..Default::default()
    };
    let m = fit_logistic(x, y, &cfg)?;
    let w = m.standardized_weights.unwrap_or(m.weights);
    let mut nz: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
    nz.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    Ok(nz)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeModelKind {
    RandomForest(ForestConfig),
    Gbdt(GbdtConfig),
}

/// Total split gain per column, normalised to sum 1; all zeros (with a
/// warning) when no tree has a split.
pub fn tree_importance(ds: &Dataset, kind: &TreeModelKind) -> Result<Vec<f64>> {
    let x = Matrix::new(ds.features(), ds.n_cols());
    let trees = match kind {
        TreeModelKind::RandomForest(cfg) => fit_forest(x, ds.target(), cfg),
        TreeModelKind::Gbdt(cfg) => gbdt::fit(ds, cfg)?.trees,
    };
    let imp = gain_importance(&trees, ds.n_cols());
    if imp.iter().all(|&v| v == 0.0) {
        warn!("tree importance: no splits were made; all importances are zero");
    }
    Ok(imp)
}

// ---------------------------------------------------------------------------
// Voting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub method: String,
    /// feature names, best first; may be shorter than the feature list
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub methods: Vec<MethodRanking>,
    pub votes: BTreeMap<String, usize>,
    /// mean 1-based position over methods; absent features count as one
    /// past the end of that method's list
    pub mean_rank: BTreeMap<String, f64>,
    pub selected: Vec<String>,
    pub k_per_method: usize,
}

impl SelectionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Each method votes for its top `k`; features are ordered by votes
/// (descending), mean rank (ascending) and name, and the first `n_final`
/// are selected.
pub fn vote_select(features: &[String], methods: &[MethodRanking], k: usize, n_final: usize) -> Result<SelectionReport> {
    if methods.len() < 2 {
        return Err(Error::Config("voting needs at least two methods".into()));
    }
    let mut n_final = n_final;
    if n_final > features.len() {
        warn!("n_final {n_final} exceeds the {} available features; keeping all", features.len());
        n_final = features.len();
    }
    let mut votes: BTreeMap<String, usize> = features.iter().map(|f| (f.clone(), 0)).collect();
    let mut rank_sum: BTreeMap<String, f64> = features.iter().map(|f| (f.clone(), 0.0)).collect();
    for m in methods {
        for f in m.ranking.iter().take(k) {
            if let Some(v) = votes.get_mut(f) {
                *v += 1;
            }
        }
        for f in features {
            let pos = m.ranking.iter().position(|g| g == f).unwrap_or(m.ranking.len());
            *rank_sum.get_mut(f).expect("feature") += (pos + 1) as f64;
        }
    }
    let mean_rank: BTreeMap<String, f64> = rank_sum
        .into_iter()
        .map(|(f, s)| (f, s / methods.len() as f64))
        .collect();
    let mut order: Vec<&String> = features.iter().collect();
    order.sort_by(|a, b| {
        votes[*b]
            .cmp(&votes[*a])
            .then(mean_rank[*a].total_cmp(&mean_rank[*b]))
            .then(a.cmp(b))
    });
    let selected = order.into_iter().take(n_final).cloned().collect();
    Ok(SelectionReport {
        methods: methods.to_vec(),
        votes,
        mean_rank,
        selected,
        k_per_method: k,
    })
}

// ---------------------------------------------------------------------------
// The full ensemble

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub n_final: usize,
    /// votes per method; `None` means twice `n_final`
    pub k_per_method: Option<usize>,
    pub chi2_bins: usize,
    pub rfe_step: usize,
    pub l1_c: f64,
    pub forest: ForestConfig,
    pub gbdt: GbdtConfig,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            n_final: 15,
            k_per_method: None,
            chi2_bins: DEFAULT_CHI2_BINS,
            rfe_step: 1,
            l1_c: 0.05,
            forest: ForestConfig {
                n_trees: 50,
                ..Default::default()
            },
            gbdt: GbdtConfig {
                n_trees: 100,
                max_leaves: 15,
                ..Default::default()
            },
        }
    }
}

impl SelectConfig {
    pub fn k(&self) -> usize {
        self.k_per_method.unwrap_or(2 * self.n_final)
    }
}

pub const METHODS: [&str; 6] = ["pearson", "chi2", "rfe", "l1", "random_forest", "gbdt"];

fn ranked_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Run all six methods on the numeric columns of `ds` and vote.
pub fn select_features(ds: &Dataset, cfg: &SelectConfig) -> Result<SelectionReport> {
    let names = ds.feature_names();
    let x = ds.to_dense_imputed(&ds.column_means());
    let y = ds.target();
    let k = cfg.k().min(names.len());
    let rankings: Vec<Result<Vec<usize>>> = METHODS
        .par_iter()
        .map(|&m| match m {
            "pearson" => Ok(ranked_by_score(&pearson_scores(&x, y))),
            "chi2" => Ok(ranked_by_score(&chi2_scores(&x, y, cfg.chi2_bins))),
            "rfe" => Ok(rfe(&x, y, &LogisticConfig::default(), k.max(1), cfg.rfe_step)?.ranking),
            "l1" => l1_select(&x, y, cfg.l1_c),
            "random_forest" => Ok(ranked_by_score(&tree_importance(ds, &TreeModelKind::RandomForest(cfg.forest.clone()))?)),
            _ => Ok(ranked_by_score(&tree_importance(ds, &TreeModelKind::Gbdt(cfg.gbdt.clone()))?)),
        })
        .collect();
    let mut methods = Vec::with_capacity(METHODS.len());
    for (m, r) in METHODS.iter().zip(rankings) {
        let r = r?;
        methods.push(MethodRanking {
            method: m.to_string(),
            ranking: r.into_iter().map(|j| names[j].clone()).collect(),
        });
    }
    vote_select(names, &methods, k, cfg.n_final)
}
