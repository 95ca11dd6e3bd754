//! Back-testing of a rating scale: the one-sided binomial test and the
//! extended traffic-light zones, per rating class.
//!
//! Defaults inside a class are taken as independent Bernoulli draws with the
//! class PD, so the default count is binomial with the class size `N_k`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::calib::{reliability_curve, ReliabilityCurve};
use crate::error::{Error, Result};
use crate::metrics::{brier, roc_auc};
use crate::rating::RatingScale;
use crate::scalar::Real;

pub const DEFAULT_ALPHA: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficLightParams<T> {
    /// yellow/orange boundary in units of σ
    pub k_yellow: T,
    /// orange/red boundary in units of σ
    pub k_orange: T,
}

impl<T: Real> Default for TrafficLightParams<T> {
    fn default() -> Self {
        Self {
            k_yellow: T::lit(0.84),
            k_orange: T::lit(1.44),
        }
    }
}

impl<T: Real> TrafficLightParams<T> {
    pub fn new(k_yellow: T, k_orange: T) -> Result<Self> {
        if !(k_yellow > T::zero() && k_yellow < k_orange) {
            return Err(Error::Config(format!(
                "traffic light needs 0 < K_y < K_0, got {k_yellow} and {k_orange}"
            )));
        }
        Ok(Self { k_yellow, k_orange })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    Green,
    Yellow,
    Orange,
    Red,
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Zone::Green => "Green",
            Zone::Yellow => "Yellow",
            Zone::Orange => "Orange",
            Zone::Red => "Red",
        };
        f.write_str(s)
    }
}

fn check_domain<T: Real>(n: u64, pd: T, alpha: Option<T>) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("class size must be at least 1".into()));
    }
    if !(pd > T::zero() && pd < T::one()) {
        return Err(Error::InvalidArgument(format!("class PD must lie in (0, 1), got {pd}")));
    }
    if let Some(a) = alpha {
        if !(a > T::zero() && a < T::one()) {
            return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {a}")));
        }
    }
    Ok(())
}

/// `ln(a + b)` from `ln a` and `ln b`.
fn log_add<T: Real>(la: T, lb: T) -> T {
    if la == T::neg_infinity() {
        return lb;
    }
    let (hi, lo) = if la > lb { (la, lb) } else { (lb, la) };
    hi + (lo - hi).exp().ln_1p()
}

/// Smallest default count `d` whose binomial upper tail
/// `P(X ≥ d) = Σ_{j≥d} C(N, j) PD^j (1 − PD)^{N−j}` is at most `1 − α`.
///
/// The tail is accumulated in log space from `j = N` downwards. Returns
/// `N + 1` when even `P(X = N)` exceeds `1 − α`, i.e. no count can reject.
pub fn binomial_critical<T: Real>(n: u64, pd: T, alpha: T) -> Result<u64> {
    check_domain(n, pd, Some(alpha))?;
    let nu = n as usize;
    // ln k! for k = 0..=N
    let mut lf = Vec::with_capacity(nu + 1);
    let mut acc = T::zero();
    lf.push(acc);
    for k in 1..=nu {
        acc += T::from_count(k).ln();
        lf.push(acc);
    }
    let lp = pd.ln();
    let lq = (-pd).ln_1p();
    // tails within rounding of 1 − α count as equal to it
    let limit = (T::one() - alpha).ln() + T::epsilon() * T::lit(1024.0);
    let mut tail = T::neg_infinity();
    for j in (0..=nu).rev() {
        let log_pmf = lf[nu] - lf[j] - lf[nu - j] + T::from_count(j) * lp + T::from_count(nu - j) * lq;
        tail = log_add(tail, log_pmf);
        if tail > limit {
            return Ok(j as u64 + 1);
        }
    }
    // the full tail is 1 > 1 − α, so the loop always returns
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinomialOutcome {
    pub critical: u64,
    /// `false` when H₀ (default rate at most the PD) is rejected
    pub passed: bool,
}

/// One-sided binomial test: reject iff `defaults ≥ d_α`.
pub fn binomial_test<T: Real>(n: u64, pd: T, defaults: u64, alpha: T) -> Result<BinomialOutcome> {
    if defaults > n {
        return Err(Error::InvalidArgument(format!("{defaults} defaults in a class of {n}")));
    }
    let critical = binomial_critical(n, pd, alpha)?;
    Ok(BinomialOutcome {
        critical,
        passed: defaults < critical,
    })
}

/// `sqrt(PD(1 − PD)/N)`
pub fn sigma<T: Real>(pd: T, n: u64) -> T {
    (pd * (T::one() - pd) / T::lit(n as f64)).sqrt()
}

/// Zone of an observed default rate `rate` against forecast `pd`:
/// green below the PD, then yellow, orange and red above `PD + K·σ`.
pub fn traffic_light<T: Real>(pd: T, n: u64, rate: T, params: &TrafficLightParams<T>) -> Result<Zone> {
    check_domain(n, pd, None)?;
    let s = sigma(pd, n);
    Ok(if rate < pd {
        Zone::Green
    } else if rate < pd + params.k_yellow * s {
        Zone::Yellow
    } else if rate < pd + params.k_orange * s {
        Zone::Orange
    } else {
        Zone::Red
    })
}

/// Fraction of `trials` binomial draws `d ~ Bin(N, PD)` landing in each zone
/// (green, yellow, orange, red) when the forecast is right.
pub fn zone_frequencies(pd: f64, n: u64, trials: usize, params: &TrafficLightParams<f64>, seed: u64) -> Result<[f64; 4]> {
    check_domain(n, pd, None)?;
    let dist = Binomial::new(n, pd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0usize; 4];
    for _ in 0..trials {
        let d = dist.sample(&mut rng);
        let z = traffic_light(pd, n, d as f64 / n as f64, params)?;
        counts[z as usize] += 1;
    }
    Ok(counts.map(|c| c as f64 / trials as f64))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassValidation {
    pub label: String,
    pub bin_low: f64,
    pub bin_high: f64,
    pub n: u64,
    pub pd: f64,
    pub defaults: u64,
    /// `None` when the class is empty
    pub default_rate: Option<f64>,
    pub alpha: f64,
    pub critical: Option<u64>,
    pub binomial_pass: Option<bool>,
    pub zone: Option<Zone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub classes: Vec<ClassValidation>,
    pub n: usize,
    /// `None` when the sample holds a single class of outcome
    pub auroc: Option<f64>,
    pub brier: f64,
    pub reliability: ReliabilityCurve,
}

/// Back-test `scale` on PDs and outcomes of a held-out sample.
pub fn validate_scale(
    scale: &RatingScale,
    pds: &[f64],
    y: &[u8],
    alpha: f64,
    params: &TrafficLightParams<f64>,
    reliability_bins: usize,
) -> Result<ValidationReport> {
    if pds.len() != y.len() {
        return Err(Error::Dimension {
            expected: pds.len(),
            got: y.len(),
        });
    }
    if pds.is_empty() {
        return Err(Error::InvalidArgument("validation sample is empty".into()));
    }
    let k = scale.n_classes;
    let mut n = vec![0u64; k];
    let mut d = vec![0u64; k];
    for (&p, &t) in pds.iter().zip(y) {
        let c = scale.class_of(p);
        n[c] += 1;
        d[c] += u64::from(t);
    }
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let (bin_low, bin_high) = scale.bin(c);
        let pd = scale.class_pd[c];
        let mut row = ClassValidation {
            label: scale.labels[c].clone(),
            bin_low,
            bin_high,
            n: n[c],
            pd,
            defaults: d[c],
            default_rate: None,
            alpha,
            critical: None,
            binomial_pass: None,
            zone: None,
        };
        if n[c] > 0 {
            let rate = d[c] as f64 / n[c] as f64;
            let b = binomial_test(n[c], pd, d[c], alpha)?;
            row.default_rate = Some(rate);
            row.critical = Some(b.critical);
            row.binomial_pass = Some(b.passed);
            row.zone = Some(traffic_light(pd, n[c], rate, params)?);
        }
        classes.push(row);
    }
    let auroc = roc_auc(pds, y).ok().map(|r| r.auc);
    Ok(ValidationReport {
        classes,
        n: pds.len(),
        auroc,
        brier: brier(pds, y)?,
        reliability: reliability_curve(pds, y, reliability_bins)?,
    })
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.classes.iter().all(|c| c.binomial_pass != Some(false))
    }

    /// One row per class: label, PD bin, class PD, size, defaults, observed
    /// rate, binomial result and zone. Empty classes read `no data`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "rating_class",
            "pd_bin_low",
            "pd_bin_high",
            "class_pd",
            "n",
            "defaults",
            "default_rate",
            "critical_defaults",
            "binomial_test",
            "traffic_light",
        ])?;
        const NO_DATA: &str = "no data";
        for c in &self.classes {
            w.write_record([
                c.label.clone(),
                c.bin_low.to_string(),
                c.bin_high.to_string(),
                c.pd.to_string(),
                c.n.to_string(),
                c.defaults.to_string(),
                c.default_rate.map_or(NO_DATA.into(), |r| r.to_string()),
                c.critical.map_or(NO_DATA.into(), |r| r.to_string()),
                match c.binomial_pass {
                    Some(true) => "Passed".into(),
                    Some(false) => "Failed".into(),
                    None => NO_DATA.into(),
                },
                c.zone.map_or(NO_DATA.into(), |z| z.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(csv_path)?)?;
        std::fs::write(json_path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
