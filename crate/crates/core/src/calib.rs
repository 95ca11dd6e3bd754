//! Leaf-based probability calibration and reliability curves.
//!
//! Each row of the calibration sample is represented by the leaves it reaches
//! in every tree of a fitted [`GbdtModel`], one-hot encoded, and an
//! L2-penalised logistic regression maps that encoding to a default
//! probability. The raw boosted score plays no part in the calibrated PD.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gbdt::{GbdtModel, Matrix};
use crate::linmod::{fit_design, LogisticConfig, LogisticModel, Penalty, SparseBinary};
use crate::metrics::log_loss;

pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    /// `leaf_vocab[t][leaf]` is the design column of that leaf of tree `t`.
    pub leaf_vocab: Vec<Vec<usize>>,
    pub lr: LogisticModel<f64>,
    pub c: f64,
    /// Holdout log-loss for every `c` tried, in grid order.
    pub c_scores: Vec<(f64, f64)>,
}

/// Column layout covering every (tree, leaf) pair of `model`.
pub fn leaf_vocabulary(model: &GbdtModel) -> Vec<Vec<usize>> {
    let mut next = 0;
    model
        .trees
        .iter()
        .map(|t| {
            let cols = (next..next + t.n_leaves).collect();
            next += t.n_leaves;
            cols
        })
        .collect()
}

fn vocab_width(vocab: &[Vec<usize>]) -> usize {
    vocab.iter().map(Vec::len).sum()
}

/// One-hot leaf design matrix: each row has exactly one active column per tree.
pub fn leaf_design(model: &GbdtModel, vocab: &[Vec<usize>], ds: &Dataset) -> Result<SparseBinary> {
    if vocab.len() != model.trees.len() || vocab.iter().zip(&model.trees).any(|(v, t)| v.len() != t.n_leaves) {
        return Err(Error::Dimension {
            expected: model.leaf_counts().iter().sum(),
            got: vocab_width(vocab),
        });
    }
    let leaves = model.leaf_indices(Matrix::new(ds.features(), ds.n_cols()))?;
    let rows = leaves.into_iter().map(|l| {
        l.into_iter()
            .zip(vocab)
            .map(|(leaf, cols)| cols[leaf] as u32)
            .collect::<Vec<u32>>()
    });
    Ok(SparseBinary::from_rows(vocab_width(vocab), rows))
}

fn lr_config(c: f64) -> LogisticConfig<f64> {
    LogisticConfig {
        penalty: Penalty::L2,
        c,
        tol: 1e-7,
        max_iter: 1000,
        standardize: false,
    }
}

/// Fit one logistic model per `c` on `calib` and keep the one with the lowest
/// log-loss on `holdout`. Ties keep the earlier grid entry.
pub fn fit_calibrator(model: &GbdtModel, calib: &Dataset, c_grid: &[f64], holdout: &Dataset) -> Result<Calibrator> {
    if c_grid.is_empty() {
        return Err(Error::Config("calibrator c_grid is empty".into()));
    }
    if let Some(c) = c_grid.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::Config(format!("calibrator c must be positive, got {c}")));
    }
    if holdout.n_rows() == 0 {
        return Err(Error::InvalidArgument("calibrator holdout is empty".into()));
    }
    let vocab = leaf_vocabulary(model);
    let x = leaf_design(model, &vocab, calib)?;
    let xh = leaf_design(model, &vocab, holdout)?;

    let mut best: Option<(LogisticModel<f64>, f64)> = None;
    let mut c_scores = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let (lr, _) = fit_design(&x, calib.target(), &lr_config(c))?;
        if !lr.converged {
            warn!("calibrator fit with c = {c} stopped after {} iterations", lr.iterations);
        }
        let loss = log_loss(&lr.predict_proba(&xh)?, holdout.target())?;
        info!("calibrator c = {c}: holdout log-loss {loss:.6}");
        c_scores.push((c, loss));
        if best.as_ref().is_none_or(|(_, l)| loss < *l) {
            best = Some((lr, loss));
        }
    }
    let (lr, _) = best.expect("non-empty grid");
    Ok(Calibrator {
        c: lr.c,
        leaf_vocab: vocab,
        lr,
        c_scores,
    })
}

impl Calibrator {
    pub fn n_columns(&self) -> usize {
        vocab_width(&self.leaf_vocab)
    }

    /// Calibrated default probability for every row of `ds`.
    pub fn calibrated_pd(&self, model: &GbdtModel, ds: &Dataset) -> Result<Vec<f64>> {
        let x = leaf_design(model, &self.leaf_vocab, ds)?;
        self.lr.predict_proba(&x)
    }
}

// ---------------------------------------------------------------------------
// Reliability curves

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub low: f64,
    pub high: f64,
    /// `None` for an empty bin
    pub mean_pred: Option<f64>,
    pub obs_freq: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub bins: Vec<ReliabilityBin>,
}

/// Equal-width bins on `[0, 1]`; a forecast of exactly 1 falls in the last bin.
pub fn reliability_curve(pd: &[f64], y: &[u8], n_bins: usize) -> Result<ReliabilityCurve> {
    if pd.len() != y.len() {
        return Err(Error::Dimension {
            expected: pd.len(),
            got: y.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("reliability curve needs at least one bin".into()));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &t) in pd.iter().zip(y) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("forecast {p} outside [0, 1]")));
        }
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sum_p[b] += p;
        sum_y[b] += usize::from(t);
        count[b] += 1;
    }
    let width = 1.0 / n_bins as f64;
    let bins = (0..n_bins)
        .map(|b| {
            let n = count[b];
            ReliabilityBin {
                low: b as f64 * width,
                high: if b + 1 == n_bins { 1.0 } else { (b + 1) as f64 * width },
                mean_pred: (n > 0).then(|| sum_p[b] / n as f64),
                obs_freq: (n > 0).then(|| sum_y[b] as f64 / n as f64),
                count: n,
            }
        })
        .collect();
    Ok(ReliabilityCurve { bins })
}

impl ReliabilityCurve {
    /// CSV with columns `bin_low,bin_high,mean_pred,obs_freq,count`; empty
    /// bins carry `NA`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_low", "bin_high", "mean_pred", "obs_freq", "count"])?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for b in &self.bins {
            w.write_record([
                b.low.to_string(),
                b.high.to_string(),
                fmt(b.mean_pred),
                fmt(b.obs_freq),
                b.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}
