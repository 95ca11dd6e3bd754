//! Classification and probability metrics.
//!
//! Targets are `u8` slices holding 0/1. Rates with an empty denominator are
//! reported as 0 with a `degenerate` flag rather than NaN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{clamp_prob, Real};

pub const LOG_LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix<T> {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub threshold: T,
}

impl<T: Real> ConfusionMatrix<T> {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A ratio together with a flag telling whether its denominator was zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate<T> {
    pub value: T,
    pub degenerate: bool,
}

fn ratio<T: Real>(num: u64, den: u64) -> Rate<T> {
    if den == 0 {
        Rate {
            value: T::zero(),
            degenerate: true,
        }
    } else {
        Rate {
            value: T::lit(num as f64) / T::lit(den as f64),
            degenerate: false,
        }
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Predict positive iff `pd >= threshold`.
pub fn confusion<T: Real>(pd: &[T], y: &[u8], threshold: T) -> Result<ConfusionMatrix<T>> {
    check_len(pd.len(), y.len())?;
    let mut cm = ConfusionMatrix {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
        threshold,
    };
    for (&p, &t) in pd.iter().zip(y) {
        match (p >= threshold, t == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// True positive rate (recall).
pub fn tpr<T: Real>(cm: &ConfusionMatrix<T>) -> Rate<T> {
    ratio(cm.tp, cm.tp + cm.fn_)
}

/// False positive rate.
pub fn fpr<T: Real>(cm: &ConfusionMatrix<T>) -> Rate<T> {
    ratio(cm.fp, cm.fp + cm.tn)
}

/// True negative rate.
pub fn specificity<T: Real>(cm: &ConfusionMatrix<T>) -> Rate<T> {
    ratio(cm.tn, cm.tn + cm.fp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint<T> {
    /// Scores `>= threshold` are predicted positive at this point.
    pub threshold: T,
    pub fpr: T,
    pub tpr: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve<T> {
    pub points: Vec<RocPoint<T>>,
    pub auc: T,
}

/// ROC curve over every distinct score, AUC by the trapezoidal rule.
///
/// Tied scores form one step, so the area equals the rank statistic with half
/// credit for ties. The area is accumulated in integer counts and divided once.
pub fn roc_auc<T: Real>(scores: &[T], y: &[u8]) -> Result<RocCurve<T>> {
    check_len(scores.len(), y.len())?;
    let n_pos = y.iter().filter(|&&t| t == 1).count() as u64;
    let n_neg = y.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "roc_auc needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let (pos, neg) = (T::lit(n_pos as f64), T::lit(n_neg as f64));
    let mut points = vec![RocPoint {
        threshold: T::infinity(),
        fpr: T::zero(),
        tpr: T::zero(),
    }];
    // twice the area in units of (pos * neg)
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if y[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint {
            threshold: s,
            fpr: T::lit(fp as f64) / neg,
            tpr: T::lit(tp as f64) / pos,
        });
    }
    let auc = T::lit(area2 as f64) / (T::lit(2.0) * pos * neg);
    Ok(RocCurve { points, auc })
}

/// Threshold on the ROC curve maximising Youden's J = tpr − fpr.
///
/// Returns `(threshold, j)`; ties resolve to the highest threshold.
pub fn youden_threshold<T: Real>(curve: &RocCurve<T>) -> (T, T) {
    let mut best = (T::infinity(), T::neg_infinity());
    for p in &curve.points {
        let j = p.tpr - p.fpr;
        if j > best.1 {
            best = (p.threshold, j);
        }
    }
    best
}

/// Mean squared difference between forecasts and 0/1 outcomes.
pub fn brier<T: Real>(f: &[T], o: &[u8]) -> Result<T> {
    check_len(f.len(), o.len())?;
    if f.is_empty() {
        return Err(Error::InvalidArgument("brier of empty sample".into()));
    }
    let s: T = f
        .iter()
        .zip(o)
        .map(|(&p, &t)| {
            let d = p - T::lit(t as f64);
            d * d
        })
        .sum();
    Ok(s / T::from_count(f.len()))
}

/// Mean negative log-likelihood with probabilities clamped at 1e-12.
pub fn log_loss<T: Real>(f: &[T], o: &[u8]) -> Result<T> {
    check_len(f.len(), o.len())?;
    if f.is_empty() {
        return Err(Error::InvalidArgument("log_loss of empty sample".into()));
    }
    let eps = T::lit(LOG_LOSS_EPS);
    let s: T = f
        .iter()
        .zip(o)
        .map(|(&p, &t)| {
            let p = clamp_prob(p, eps);
            if t == 1 {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .sum();
    Ok(s / T::from_count(f.len()))
}
