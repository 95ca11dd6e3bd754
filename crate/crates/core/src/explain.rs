//! Local explanations: exact interventional Shapley values and LIME-style
//! local surrogates.
//!
//! The value of a coalition `S` for instance `x` is the mean model output
//! over background rows `b` of the composite row that takes `x` on `S` and
//! `b` elsewhere. For boosted trees the explained output is the raw log-odds
//! score, where contributions add up exactly.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::is_missing;
use crate::error::{Error, Result};
use crate::gbdt::{GbdtModel, Tree, TreeNode};
use crate::scalar::Real;

pub const DEFAULT_MAX_FEATURES: usize = 15;
pub const LIME_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation<T> {
    /// expected output over the background sample
    pub base_value: T,
    pub phi: Vec<T>,
    /// output at the instance
    pub fx: T,
    /// the explained instance
    pub x: Vec<T>,
}

impl<T: Real> ShapExplanation<T> {
    /// `fx − base − Σ φ`, zero up to rounding.
    pub fn additivity_gap(&self) -> T {
        self.fx - self.base_value - self.phi.iter().copied().sum::<T>()
    }
}

fn check_background<T>(x: &[T], background: &[Vec<T>]) -> Result<()> {
    if background.is_empty() {
        return Err(Error::Explain("background sample is empty".into()));
    }
    if let Some(b) = background.iter().find(|b| b.len() != x.len()) {
        return Err(Error::Dimension {
            expected: x.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn check_width(m: usize, max_features: usize) -> Result<()> {
    if m > max_features {
        return Err(Error::Explain(format!(
            "{m} features exceed the exact Shapley limit of {max_features}; \
             reduce the feature set (e.g. a smaller selection n_final) first"
        )));
    }
    Ok(())
}

/// Shapley values by enumerating all `2^m` coalitions of a black-box model.
pub fn exact_shapley<T, F>(f: F, x: &[T], background: &[Vec<T>], max_features: usize) -> Result<ShapExplanation<T>>
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    let m = x.len();
    check_width(m, max_features)?;
    check_background(x, background)?;
    let n_b = T::from_count(background.len());
    let value = |mask: usize| -> T {
        let mut row = vec![T::zero(); m];
        let mut acc = T::zero();
        for b in background {
            for j in 0..m {
                row[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
            }
            acc += f(&row);
        }
        acc / n_b
    };
    let v: Vec<T> = (0..1usize << m).into_par_iter().map(value).collect();

    // weight of a coalition of size s not containing the player:
    // s!(m − s − 1)!/m!
    let mut w = vec![T::zero(); m.max(1)];
    for (s, ws) in w.iter_mut().enumerate().take(m) {
        *ws = T::one() / (T::from_count(m) * binomial::<T>(m - 1, s));
    }
    let phi = (0..m)
        .map(|j| {
            let bit = 1usize << j;
            let mut acc = T::zero();
            for mask in 0..1usize << m {
                if mask & bit == 0 {
                    acc += w[mask.count_ones() as usize] * (v[mask | bit] - v[mask]);
                }
            }
            acc
        })
        .collect();
    Ok(ShapExplanation {
        base_value: v[0],
        phi,
        fx: f(x),
        x: x.to_vec(),
    })
}

fn binomial<T: Real>(n: usize, k: usize) -> T {
    let k = k.min(n - k);
    let mut c = T::one();
    for i in 0..k {
        c = c * T::from_count(n - i) / T::from_count(i + 1);
    }
    c
}

// ---------------------------------------------------------------------------
// Tree ensembles

#[inline]
fn goes_left(v: f64, threshold: f64, missing_left: bool) -> bool {
    if is_missing(v) {
        missing_left
    } else {
        v < threshold
    }
}

/// Which source row a path constrains a feature to.
#[derive(Clone, Copy, PartialEq)]
enum Side {
    Instance,
    Background,
}

/// Adds the Shapley values of one tree for the game between `x` and a single
/// background row `b`. A leaf is reached by the composite row iff every
/// feature in `A` is taken from `x` and every feature in `B` from `b`; that
/// game gives `+v/(a·C(a+b, a))` to each member of `A` and
/// `−v/(b·C(a+b, b))` to each member of `B`.
fn tree_phi(tree: &Tree, x: &[f64], b: &[f64], scale: f64, phi: &mut [f64], path: &mut Vec<(usize, Side)>) {
    fn walk(
        tree: &Tree,
        k: usize,
        x: &[f64],
        b: &[f64],
        scale: f64,
        phi: &mut [f64],
        path: &mut Vec<(usize, Side)>,
    ) {
        match &tree.nodes[k] {
            TreeNode::Leaf { value, .. } => {
                let a = path.iter().filter(|p| p.1 == Side::Instance).count();
                let nb = path.len() - a;
                if a + nb == 0 {
                    return;
                }
                let v = value * scale;
                let n = a + nb;
                for &(f, side) in path.iter() {
                    phi[f] += match side {
                        Side::Instance => v / (a as f64 * binomial::<f64>(n, a)),
                        Side::Background => -v / (nb as f64 * binomial::<f64>(n, nb)),
                    };
                }
            }
            TreeNode::Internal {
                feature,
                threshold,
                missing_left,
                left,
                right,
                ..
            } => {
                let xl = goes_left(x[*feature], *threshold, *missing_left);
                let bl = goes_left(b[*feature], *threshold, *missing_left);
                let fixed = path.iter().find(|p| p.0 == *feature).map(|p| p.1);
                for (child, is_left) in [(*left, true), (*right, false)] {
                    let x_ok = xl == is_left;
                    let b_ok = bl == is_left;
                    match fixed {
                        Some(Side::Instance) if x_ok => walk(tree, child, x, b, scale, phi, path),
                        Some(Side::Background) if b_ok => walk(tree, child, x, b, scale, phi, path),
                        Some(_) => {}
                        None => match (x_ok, b_ok) {
                            (true, true) => walk(tree, child, x, b, scale, phi, path),
                            (true, false) | (false, true) => {
                                let side = if x_ok { Side::Instance } else { Side::Background };
                                path.push((*feature, side));
                                walk(tree, child, x, b, scale, phi, path);
                                path.pop();
                            }
                            (false, false) => {}
                        },
                    }
                }
            }
        }
    }
    walk(tree, 0, x, b, scale, phi, path);
}

/// Exact interventional Shapley values of the raw score of a boosted model,
/// in `O(trees × background × leaves × depth)` per instance. Gives the same
/// values as [`exact_shapley`] applied to [`GbdtModel::raw_score_row`].
pub fn tree_shapley(model: &GbdtModel, x: &[f64], background: &[Vec<f64>], max_features: usize) -> Result<ShapExplanation<f64>> {
    let m = model.n_features;
    check_width(m, max_features)?;
    if x.len() != m {
        return Err(Error::Dimension { expected: m, got: x.len() });
    }
    check_background(x, background)?;
    let n_b = background.len() as f64;
    let mut phi = vec![0.0; m];
    let mut path = Vec::new();
    let mut base = 0.0;
    for b in background {
        for t in &model.trees {
            tree_phi(t, x, b, model.learning_rate, &mut phi, &mut path);
        }
        base += model.raw_score_row(b);
    }
    for p in &mut phi {
        *p /= n_b;
    }
    Ok(ShapExplanation {
        base_value: base / n_b,
        phi,
        fx: model.raw_score_row(x),
        x: x.to_vec(),
    })
}

/// [`tree_shapley`] for many instances, in parallel.
pub fn tree_shapley_batch(
    model: &GbdtModel,
    rows: &[Vec<f64>],
    background: &[Vec<f64>],
    max_features: usize,
) -> Result<Vec<ShapExplanation<f64>>> {
    rows.par_iter()
        .map(|x| tree_shapley(model, x, background, max_features))
        .collect()
}

// ---------------------------------------------------------------------------
// Summaries

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub instance: usize,
    pub feature: String,
    pub phi: f64,
    pub feature_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallRecord {
    pub instance: usize,
    pub step: usize,
    /// `base` for the starting point
    pub feature: String,
    pub contribution: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    /// `(feature, mean |φ|)`, largest first; ties keep column order
    pub ranking: Vec<(String, f64)>,
    /// one record per instance and feature
    pub records: Vec<SummaryRecord>,
    pub waterfall: Vec<WaterfallRecord>,
}

pub fn summary_stats(explanations: &[ShapExplanation<f64>], feature_names: &[String]) -> Result<ShapSummary> {
    if explanations.is_empty() {
        return Err(Error::Explain("no explanations to summarise".into()));
    }
    let m = feature_names.len();
    if let Some(e) = explanations.iter().find(|e| e.phi.len() != m) {
        return Err(Error::Dimension {
            expected: m,
            got: e.phi.len(),
        });
    }
    let n = explanations.len() as f64;
    let mut mean_abs = vec![0.0; m];
    let mut records = Vec::with_capacity(explanations.len() * m);
    let mut waterfall = Vec::new();
    for (i, e) in explanations.iter().enumerate() {
        for j in 0..m {
            mean_abs[j] += e.phi[j].abs() / n;
            records.push(SummaryRecord {
                instance: i,
                feature: feature_names[j].clone(),
                phi: e.phi[j],
                feature_value: e.x[j],
            });
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| e.phi[b].abs().total_cmp(&e.phi[a].abs()));
        let mut cum = e.base_value;
        waterfall.push(WaterfallRecord {
            instance: i,
            step: 0,
            feature: "base".into(),
            contribution: e.base_value,
            cumulative: cum,
        });
        for (s, &j) in order.iter().enumerate() {
            cum += e.phi[j];
            waterfall.push(WaterfallRecord {
                instance: i,
                step: s + 1,
                feature: feature_names[j].clone(),
                contribution: e.phi[j],
                cumulative: cum,
            });
        }
    }
    let mut ranking: Vec<(String, f64)> = feature_names.iter().cloned().zip(mean_abs).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ShapSummary {
        ranking,
        records,
        waterfall,
    })
}

impl ShapSummary {
    /// `(feature value, φ)` pairs of one feature, for dependence plots.
    pub fn dependence(&self, feature: &str) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.feature == feature)
            .map(|r| (r.feature_value, r.phi))
            .collect()
    }

    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_ranking_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "mean_abs_phi"])?;
        for (f, v) in &self.ranking {
            w.write_record([f.clone(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_waterfall_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.waterfall {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// LIME

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    /// number of coefficients kept
    pub k: usize,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            kernel_width: 3.0,
            k: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeExplanation {
    pub intercept: f64,
    /// `(feature index, coefficient)`, largest `|coefficient · std|` first
    pub coefficients: Vec<(usize, f64)>,
    pub kernel_width: f64,
    /// weighted R² of the full surrogate on the perturbation sample
    pub local_fit_r2: f64,
    pub n_samples: usize,
}

impl LimeExplanation {
    /// Surrogate output: intercept plus the kept coefficients.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }
}

/// Fit a weighted ridge surrogate of `f` around `x`.
///
/// Each perturbation replaces every feature, independently with probability
/// one half, by the value of a random background row. Samples are weighted by
/// `exp(−d²/width²)` with `d` the Euclidean distance on features scaled by
/// their background standard deviation.
pub fn lime_explain<F>(f: F, x: &[f64], background: &[Vec<f64>], cfg: &LimeConfig) -> Result<LimeExplanation>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(cfg.kernel_width > 0.0) {
        return Err(Error::Config(format!("kernel width must be positive, got {}", cfg.kernel_width)));
    }
    if cfg.n_samples < 2 {
        return Err(Error::Config("LIME needs at least two samples".into()));
    }
    check_background(x, background)?;
    let m = x.len();
    let nb = background.len() as f64;
    let mean: Vec<f64> = (0..m).map(|j| background.iter().map(|b| b[j]).sum::<f64>() / nb).collect();
    let std: Vec<f64> = (0..m)
        .map(|j| (background.iter().map(|b| (b[j] - mean[j]).powi(2)).sum::<f64>() / nb).sqrt())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<f64>> = (0..cfg.n_samples)
        .map(|_| {
            (0..m)
                .map(|j| {
                    if rng.gen_bool(0.5) {
                        background[rng.gen_range(0..background.len())][j]
                    } else {
                        x[j]
                    }
                })
                .collect()
        })
        .collect();
    let width2 = cfg.kernel_width * cfg.kernel_width;
    let weights: Vec<f64> = samples
        .iter()
        .map(|z| {
            let d2: f64 = (0..m)
                .filter(|&j| std[j] > 0.0)
                .map(|j| ((z[j] - x[j]) / std[j]).powi(2))
                .sum();
            (-d2 / width2).exp()
        })
        .collect();
    let perturbed_weight: f64 = samples
        .iter()
        .zip(&weights)
        .filter(|(z, _)| z.as_slice() != x)
        .map(|(_, w)| w)
        .sum();
    if perturbed_weight < 1e-6 {
        return Err(Error::Explain(format!(
            "kernel width {} gives perturbed samples no weight; use a larger width",
            cfg.kernel_width
        )));
    }
    let targets: Vec<f64> = samples.par_iter().map(|z| f(z)).collect();

    // weighted centring, then ridge on the centred system
    let sw: f64 = weights.iter().sum();
    let xbar: Vec<f64> = (0..m)
        .map(|j| samples.iter().zip(&weights).map(|(z, w)| w * z[j]).sum::<f64>() / sw)
        .collect();
    let ybar = targets.iter().zip(&weights).map(|(t, w)| w * t).sum::<f64>() / sw;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for ((z, &w), &t) in samples.iter().zip(&weights).zip(&targets) {
        for i in 0..m {
            let zi = z[i] - xbar[i];
            rhs[i] += w * zi * (t - ybar);
            for j in 0..=i {
                a[(i, j)] += w * zi * (z[j] - xbar[j]);
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            a[(j, i)] = a[(i, j)];
        }
        a[(i, i)] += LIME_RIDGE;
    }
    let beta = a
        .cholesky()
        .ok_or_else(|| Error::Explain("LIME normal equations are not positive definite".into()))?
        .solve(&rhs);
    let intercept = ybar - (0..m).map(|j| beta[j] * xbar[j]).sum::<f64>();

    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((z, &w), &t) in samples.iter().zip(&weights).zip(&targets) {
        let pred = intercept + (0..m).map(|j| beta[j] * z[j]).sum::<f64>();
        ss_res += w * (t - pred).powi(2);
        ss_tot += w * (t - ybar).powi(2);
    }
    let local_fit_r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&p, &q| (beta[q] * std[q]).abs().total_cmp(&(beta[p] * std[p]).abs()));
    let coefficients = order.into_iter().take(cfg.k).map(|j| (j, beta[j])).collect();
    Ok(LimeExplanation {
        intercept,
        coefficients,
        kernel_width: cfg.kernel_width,
        local_fit_r2,
        n_samples: cfg.n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::{fit_matrix, GbdtConfig, Matrix};
    use rand_distr::{Distribution, StandardNormal};

    /// Shapley values as the average marginal contribution over all `m!`
    /// orderings, with the value function evaluated directly.
    fn permutation_oracle(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
        let m = x.len();
        let value = |inside: &[bool]| {
            bg.iter()
                .map(|b| {
                    let row: Vec<f64> = (0..m).map(|j| if inside[j] { x[j] } else { b[j] }).collect();
                    f(&row)
                })
                .sum::<f64>()
                / bg.len() as f64
        };
        let mut perms = vec![];
        let mut p: Vec<usize> = (0..m).collect();
        permute(&mut p, 0, &mut perms);
        let mut phi = vec![0.0; m];
        for perm in &perms {
            let mut inside = vec![false; m];
            let mut prev = value(&inside);
            for &j in perm {
                inside[j] = true;
                let cur = value(&inside);
                phi[j] += cur - prev;
                prev = cur;
            }
        }
        phi.iter().map(|v| v / perms.len() as f64).collect()
    }

    fn permute(p: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == p.len() {
            out.push(p.clone());
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, out);
            p.swap(k, i);
        }
    }

    #[test]
    fn single_player() {
        let e = exact_shapley(|r: &[f64]| r[0], &[3.0], &[vec![-1.0], vec![1.0]], 15).unwrap();
        assert_eq!(e.base_value, 0.0);
        assert_eq!(e.phi, vec![3.0]);
        assert_eq!(e.fx, 3.0);
    }

    #[test]
    fn symmetric_players() {
        let e = exact_shapley(|r: &[f64]| r[0] + r[1], &[1.0, 1.0], &[vec![0.0, 0.0]], 15).unwrap();
        assert_eq!(e.phi, vec![1.0, 1.0]);
        // exchangeable features in a non-additive symmetric model
        let f = |r: &[f64]| r[0] * r[1] + (r[0] + r[1]).sin();
        let e = exact_shapley(f, &[0.7, 0.7], &[vec![0.1, 0.1], vec![-0.4, -0.4]], 15).unwrap();
        assert!((e.phi[0] - e.phi[1]).abs() < 1e-12);
    }

    fn depth_two_tree() -> Tree {
        // x0 splits first, then x1 on the left and x2 on the right
        let internal = |feature, left, right| TreeNode::Internal {
            feature,
            threshold: 0.5,
            missing_left: false,
            left,
            right,
            gain: 1.0,
        };
        Tree {
            nodes: vec![
                internal(0, 1, 2),
                internal(1, 3, 4),
                internal(2, 5, 6),
                TreeNode::Leaf { leaf_id: 0, value: 1.0 },
                TreeNode::Leaf { leaf_id: 1, value: -2.0 },
                TreeNode::Leaf { leaf_id: 2, value: 0.5 },
                TreeNode::Leaf { leaf_id: 3, value: 3.0 },
            ],
            n_leaves: 4,
        }
    }

    fn model_of(trees: Vec<Tree>, m: usize) -> GbdtModel {
        GbdtModel {
            base_score: -1.0,
            learning_rate: 0.3,
            scale_pos_weight: 1.0,
            n_features: m,
            feature_names: (0..m).map(|j| format!("f{j}")).collect(),
            trees,
            config: GbdtConfig::default(),
        }
    }

    #[test]
    fn depth_two_tree_matches_permutations() {
        let t = depth_two_tree();
        let f = |r: &[f64]| t.value(r);
        let bits: Vec<Vec<f64>> = (0..8).map(|k| (0..3).map(|j| f64::from((k >> j) & 1)).collect()).collect();
        for x in &bits {
            let bg = vec![bits[0].clone(), bits[5].clone(), bits[6].clone()];
            let e = exact_shapley(f, x, &bg, 15).unwrap();
            let oracle = permutation_oracle(&f, x, &bg);
            for (a, b) in e.phi.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
            let fast = tree_shapley(&model_of(vec![t.clone()], 3), x, &bg, 15).unwrap();
            for (a, b) in fast.phi.iter().zip(&oracle) {
                assert!((a - 0.3 * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_path_matches_enumeration_on_a_fitted_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 400;
        let m = 5;
        let mut data = Vec::with_capacity(n * m);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let r: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = r[0] - r[1] * r[2] + 0.5 * r[3];
            y.push(u8::from(rng.gen::<f64>() < crate::scalar::sigmoid(z)));
            data.extend(r);
        }
        // a missing value exercises the default direction
        data[7] = f64::NAN;
        let cfg = GbdtConfig {
            n_trees: 20,
            max_leaves: 6,
            min_samples_leaf: 5,
            ..Default::default()
        };
        let names = (0..m).map(|j| format!("f{j}")).collect();
        let model = fit_matrix(Matrix::new(&data, m), names, &y, &cfg, None).unwrap();
        let rows: Vec<Vec<f64>> = data.chunks(m).map(<[f64]>::to_vec).collect();
        let bg = rows[..25].to_vec();
        for x in rows.iter().skip(100).take(5).chain(std::iter::once(&rows[1])) {
            let slow = exact_shapley(|r: &[f64]| model.raw_score_row(r), x, &bg, 15).unwrap();
            let fast = tree_shapley(&model, x, &bg, 15).unwrap();
            assert!((slow.base_value - fast.base_value).abs() < 1e-12);
            for (a, b) in slow.phi.iter().zip(&fast.phi) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            assert!(fast.additivity_gap().abs() < 1e-9);
            assert!(slow.additivity_gap().abs() < 1e-9);
        }
    }

    #[test]
    fn unused_feature_is_a_null_player() {
        let model = model_of(vec![depth_two_tree()], 4);
        let bg = vec![vec![0.0, 1.0, 0.0, 5.0], vec![1.0, 0.0, 1.0, -5.0]];
        let e = tree_shapley(&model, &[1.0, 1.0, 0.0, 100.0], &bg, 15).unwrap();
        assert_eq!(e.phi[3], 0.0);
        let s = summary_stats(&[e], &model.feature_names).unwrap();
        assert_eq!(s.ranking.last().unwrap().0, "f3");
    }

    #[test]
    fn width_cap_and_empty_background() {
        let f = |r: &[f64]| r.iter().sum::<f64>();
        let x = vec![0.0; 16];
        let err = exact_shapley(f, &x, &[vec![0.0; 16]], 15).unwrap_err();
        assert!(err.to_string().contains("reduce the feature set"));
        assert!(exact_shapley(f, &x[..3], &[], 15).is_err());
        let model = model_of(vec![], 20);
        assert!(tree_shapley(&model, &[0.0; 20], &[vec![0.0; 20]], DEFAULT_MAX_FEATURES).is_err());
    }

    #[test]
    fn identical_batch_summary() {
        let e = ShapExplanation {
            base_value: 0.5,
            phi: vec![0.2, -0.7, 0.0],
            fx: 0.0,
            x: vec![1.0, 2.0, 3.0],
        };
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let s = summary_stats(&[e.clone(), e.clone(), e], &names).unwrap();
        assert_eq!(s.ranking.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), ["b", "a", "c"]);
        assert!((s.ranking[0].1 - 0.7).abs() < 1e-15);
        assert_eq!(s.records.len(), 9);
        assert_eq!(s.dependence("a"), vec![(1.0, 0.2); 3]);
        // base + contributions end at fx
        for w in s.waterfall.iter().filter(|w| w.step == 3) {
            assert!(w.cumulative.abs() < 1e-15);
        }
        assert!(summary_stats(&[], &names).is_err());
        let mut buf = Vec::new();
        s.write_waterfall_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("instance,step,feature,contribution,cumulative\n0,0,base,0.5,0.5\n0,1,b,-0.7"));
    }

    fn gaussian_background(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    #[test]
    fn lime_constant_model() {
        let bg = gaussian_background(3, 100, 1);
        let e = lime_explain(|_| 0.25, &[0.1, 0.2, 0.3], &bg, &LimeConfig::default()).unwrap();
        assert!(e.coefficients.iter().all(|c| c.1 == 0.0));
        assert!((e.intercept - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lime_recovers_a_linear_model() {
        let bg = gaussian_background(3, 200, 2);
        let cfg = LimeConfig {
            n_samples: 5000,
            k: 1,
            ..Default::default()
        };
        let x = [0.3, -0.2, 1.0];
        let e = lime_explain(|r| 2.0 * r[0], &x, &bg, &cfg).unwrap();
        assert_eq!(e.coefficients.len(), 1);
        assert_eq!(e.coefficients[0].0, 0);
        assert!((e.coefficients[0].1 - 2.0).abs() < 0.1);
        assert!(e.local_fit_r2 > 0.99);
        assert_eq!(e.predict(&x), e.intercept + e.coefficients[0].1 * x[0]);
        let again = lime_explain(|r| 2.0 * r[0], &x, &bg, &cfg).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn lime_tiny_width_rejected() {
        let bg = gaussian_background(3, 50, 3);
        let cfg = LimeConfig {
            kernel_width: 1e-6,
            ..Default::default()
        };
        let err = lime_explain(|r| r[0], &[0.0; 3], &bg, &cfg).unwrap_err();
        assert!(err.to_string().contains("larger width"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn coalition_formula_matches_permutations(
                m in 1usize..6,
                coef in proptest::collection::vec(-2.0f64..2.0, 12),
                x in proptest::collection::vec(-1.0f64..1.0, 5),
                bg in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 5), 1..4),
            ) {
                let x = &x[..m];
                let bg: Vec<Vec<f64>> = bg.iter().map(|b| b[..m].to_vec()).collect();
                // additive part plus pairwise interactions and a kink
                let f = |r: &[f64]| {
                    let mut s = 0.0;
                    for j in 0..r.len() {
                        s += coef[j] * r[j] + coef[j + 5] * r[j] * r[(j + 1) % r.len()];
                    }
                    s + coef[10] * r[0].max(0.0)
                };
                let e = exact_shapley(f, x, &bg, 15).unwrap();
                let oracle = permutation_oracle(&f, x, &bg);
                for (a, b) in e.phi.iter().zip(&oracle) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
                prop_assert!(e.additivity_gap().abs() < 1e-9);
            }
        }
    }
}
