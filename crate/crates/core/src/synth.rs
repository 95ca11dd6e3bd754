//! Synthetic firm-default data with a known ground-truth PD.
//!
//! Each row's default probability is
//! `sigmoid(w·z + Σ categorical effects + intercept + drift[year])` with
//! standard-normal informative features `z`; the target is a Bernoulli draw
//! from it. Noise features are independent of everything else.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, MISSING};
use crate::encode::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics;
use crate::scalar::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_rows: usize,
    /// first and last statement year, inclusive
    pub years: (i32, i32),
    pub n_informative: usize,
    pub n_noise: usize,
    pub n_categorical: usize,
    pub n_levels: usize,
    pub true_weights: Vec<f64>,
    /// Half-range of the evenly spaced log-odds effects of each categorical
    /// column's levels; columns past the end of the list get no effect.
    pub categorical_scales: Vec<f64>,
    pub intercept: f64,
    /// log-odds offset per year, starting at `years.0`
    pub macro_drift: Vec<f64>,
    /// share of noise cells blanked out
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_rows: 50_000,
            years: (2011, 2017),
            n_informative: 10,
            n_noise: 20,
            n_categorical: 3,
            n_levels: 6,
            true_weights: vec![1.0, -0.8, 0.6, -0.5, 0.4, -0.35, 0.3, -0.25, 0.2, 0.15],
            categorical_scales: vec![0.8, 0.4, 0.0],
            intercept: -5.2925,
            macro_drift: vec![0.0, 0.1, -0.1, 0.15, 0.05, -0.05, 0.1],
            missing_rate: 0.0,
            seed: 7,
        }
    }
}

impl GeneratorSpec {
    pub fn n_years(&self) -> usize {
        (self.years.1 - self.years.0 + 1).max(0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.years.1 < self.years.0 {
            return Err(Error::Config("synth years must be ascending".into()));
        }
        if self.true_weights.len() != self.n_informative {
            return Err(Error::Config(format!(
                "{} true weights for {} informative features",
                self.true_weights.len(),
                self.n_informative
            )));
        }
        if !self.macro_drift.is_empty() && self.macro_drift.len() != self.n_years() {
            return Err(Error::Config(format!(
                "macro_drift has {} entries for {} years",
                self.macro_drift.len(),
                self.n_years()
            )));
        }
        if self.n_categorical > 0 && self.n_levels < 2 {
            return Err(Error::Config("categorical columns need at least 2 levels".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config("missing_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Log-odds effect of level `k` of categorical column `c`.
    pub fn level_effect(&self, c: usize, k: usize) -> f64 {
        let s = self.categorical_scales.get(c).copied().unwrap_or(0.0);
        if self.n_levels < 2 {
            return 0.0;
        }
        -s + 2.0 * s * k as f64 / (self.n_levels - 1) as f64
    }

    pub fn informative_names(&self) -> Vec<String> {
        (0..self.n_informative).map(|k| format!("x_{k}")).collect()
    }

    pub fn noise_names(&self) -> Vec<String> {
        (0..self.n_noise).map(|k| format!("noise_{k}")).collect()
    }

    pub fn categorical_names(&self) -> Vec<String> {
        (0..self.n_categorical).map(|k| format!("cat_{k}")).collect()
    }

    pub fn level_labels(&self) -> Vec<String> {
        (0..self.n_levels).map(|k| format!("L{k}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub true_pd: Vec<f64>,
}

/// Generate a dataset; deterministic per spec.
pub fn generate(spec: &GeneratorSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_rows;
    let ny = spec.n_years();
    let mut inf = vec![Vec::with_capacity(n); spec.n_informative];
    let mut noise = vec![Vec::with_capacity(n); spec.n_noise];
    let mut cats = vec![Vec::with_capacity(n); spec.n_categorical];
    let mut year = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    let mut true_pd = Vec::with_capacity(n);

    for _ in 0..n {
        let yi = rng.gen_range(0..ny);
        let mut eta = spec.intercept + spec.macro_drift.get(yi).copied().unwrap_or(0.0);
        for (col, w) in inf.iter_mut().zip(&spec.true_weights) {
            let z: f64 = rng.sample(StandardNormal);
            eta += w * z;
            col.push(z);
        }
        for (c, col) in cats.iter_mut().enumerate() {
            let k = rng.gen_range(0..spec.n_levels);
            eta += spec.level_effect(c, k);
            col.push(k as f64);
        }
        for col in noise.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            let blank = spec.missing_rate > 0.0 && rng.gen::<f64>() < spec.missing_rate;
            col.push(if blank { MISSING } else { z });
        }
        let p = sigmoid(eta);
        target.push((rng.gen::<f64>() < p) as u8);
        true_pd.push(p);
        year.push(spec.years.0 + yi as i32);
    }

    let mut columns = Vec::new();
    for (name, v) in spec.informative_names().into_iter().zip(inf) {
        columns.push(Column::numeric(name, v));
    }
    for (name, v) in spec.noise_names().into_iter().zip(noise) {
        columns.push(Column::numeric(name, v));
    }
    let labels = spec.level_labels();
    for (name, v) in spec.categorical_names().into_iter().zip(cats) {
        columns.push(Column::categorical(name, v, labels.clone()));
    }
    Ok(Synthetic {
        dataset: Dataset::from_columns(columns, target, year)?,
        true_pd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesMetrics {
    /// AUROC of the true PD used as a score
    pub bayes_auroc: f64,
    /// mean of p(1-p): the Brier score no forecaster can beat in expectation
    pub irreducible_brier: f64,
    /// realised Brier score of the true PD
    pub true_pd_brier: f64,
}

pub fn bayes_metrics(true_pd: &[f64], y: &[u8]) -> Result<BayesMetrics> {
    if true_pd.is_empty() {
        return Err(Error::InvalidArgument("empty true_pd".into()));
    }
    let bayes_auroc = metrics::roc_auc(true_pd, y)?.auc;
    let irreducible_brier =
        true_pd.iter().map(|p| p * (1.0 - p)).sum::<f64>() / true_pd.len() as f64;
    Ok(BayesMetrics {
        bayes_auroc,
        irreducible_brier,
        true_pd_brier: metrics::brier(true_pd, y)?,
    })
}

/// Low-rank synthetic embedding vectors for `keys`: each key gets a random
/// `latent`-dimensional factor mapped to `dim` coordinates by one shared
/// Gaussian matrix, plus small isotropic noise.
pub fn synthetic_embeddings(keys: &[String], dim: usize, latent: usize, seed: u64) -> Result<EmbeddingTable> {
    if latent == 0 || dim < latent {
        return Err(Error::Config(format!(
            "embedding dim {dim} must be at least the latent dim {latent} > 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (latent as f64).sqrt();
    let a: Vec<f64> = (0..dim * latent)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    let mut table = EmbeddingTable::new(dim);
    for key in keys {
        let u: Vec<f64> = (0..latent).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = (0..dim)
            .map(|r| {
                let s: f64 = (0..latent).map(|c| a[r * latent + c] * u[c]).sum();
                0.5 * s + 0.01 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        table.insert(key.clone(), v)?;
    }
    Ok(table)
}
