//! Rating scales: contiguous PD buckets found by differential evolution.
//!
//! A scale with `K` classes is described by `K − 1` increasing cuts in
//! `(0, 1)`; class `k` holds the PDs in `[c_k, c_{k+1})` with `c_0 = 0` and
//! the last class closed at 1. The optimiser searches cut vectors with
//! DE/rand/1/bin and scores them on the calibration PDs (see [`fitness`]).

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LABELS: [&str; 9] = ["AAA", "AA", "A", "BBB", "BB", "B", "CCC", "CC", "C"];

/// Cuts are kept inside `(REPAIR_EPS, 1 − REPAIR_EPS)`.
pub const REPAIR_EPS: f64 = 1e-9;
/// Minimum distance between consecutive cuts.
pub const MIN_GAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeConfig {
    pub n_classes: usize,
    pub population: usize,
    /// differential weight F
    pub f: f64,
    /// crossover rate CR
    pub cr: f64,
    pub generations: usize,
    pub seed: u64,
    pub w_brier: f64,
    pub w_cohesion: f64,
    pub w_separation: f64,
    pub w_size: f64,
    pub w_mono: f64,
    pub min_share: f64,
    pub max_share: f64,
    /// Compare candidates by constraint violation (size and monotonicity
    /// penalties, unweighted) before fitness. With `false`, selection is
    /// greedy on the weighted fitness alone.
    pub feasibility_first: bool,
    /// Class names, best grade first; defaults to AAA…C for nine classes
    /// and R1…RK otherwise.
    pub labels: Option<Vec<String>>,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            n_classes: 9,
            population: 50,
            f: 0.8,
            cr: 0.9,
            generations: 300,
            seed: 0,
            w_brier: 1.0,
            w_cohesion: 1.0,
            w_separation: 1.0,
            w_size: 10.0,
            w_mono: 100.0,
            min_share: 0.02,
            max_share: 0.40,
            feasibility_first: true,
            labels: None,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("rating: {m}")));
        if self.n_classes < 2 {
            return bad("at least two classes are needed".into());
        }
        if self.population < 4 {
            return bad(format!("population must be at least 4, got {}", self.population));
        }
        if !(self.f > 0.0 && self.f < 2.0) {
            return bad(format!("F must lie in (0, 2), got {}", self.f));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return bad(format!("CR must lie in [0, 1], got {}", self.cr));
        }
        let w = [self.w_brier, self.w_cohesion, self.w_separation, self.w_size, self.w_mono];
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return bad("fitness weights must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.min_share) || !(0.0..=1.0).contains(&self.max_share) || self.min_share > self.max_share {
            return bad("share bounds must satisfy 0 ≤ min_share ≤ max_share ≤ 1".into());
        }
        if let Some(l) = &self.labels {
            if l.len() != self.n_classes {
                return bad(format!("{} labels for {} classes", l.len(), self.n_classes));
            }
        }
        Ok(())
    }

    pub fn class_labels(&self) -> Vec<String> {
        match &self.labels {
            Some(l) => l.clone(),
            None if self.n_classes == DEFAULT_LABELS.len() => DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
            None => (1..=self.n_classes).map(|k| format!("R{k}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub n_classes: usize,
    pub cuts: Vec<f64>,
    /// mean calibrated PD per class
    pub class_pd: Vec<f64>,
    pub labels: Vec<String>,
    /// fraction of the fitting sample per class
    pub class_share: Vec<f64>,
}

impl RatingScale {
    /// Build a scale from cuts and check every invariant.
    pub fn new(cuts: Vec<f64>, class_pd: Vec<f64>, labels: Vec<String>, class_share: Vec<f64>) -> Result<Self> {
        let k = cuts.len() + 1;
        let s = Self {
            n_classes: k,
            cuts,
            class_pd,
            labels,
            class_share,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let k = self.n_classes;
        if self.class_pd.len() != k || self.labels.len() != k || self.class_share.len() != k {
            return Err(Error::Rating(format!("scale with {k} classes has mismatched field lengths")));
        }
        if self.cuts.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return Err(Error::Rating(format!("cuts must lie in (0, 1): {:?}", self.cuts)));
        }
        if self.cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Rating(format!("cuts not strictly increasing: {:?}", self.cuts)));
        }
        if self.class_pd.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Rating(format!(
                "class PDs not strictly increasing: {:?}",
                self.class_pd
            )));
        }
        let total: f64 = self.class_share.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Rating(format!("class shares sum to {total}")));
        }
        Ok(())
    }

    /// Class index of `pd`: a PD equal to a cut belongs to the upper class.
    pub fn class_of(&self, pd: f64) -> usize {
        self.cuts.partition_point(|&c| c <= pd)
    }

    pub fn assign_rating(&self, pd: f64) -> &str {
        &self.labels[self.class_of(pd)]
    }

    /// `(low, high)` of class `k`.
    pub fn bin(&self, k: usize) -> (f64, f64) {
        let low = if k == 0 { 0.0 } else { self.cuts[k - 1] };
        let high = if k + 1 == self.n_classes { 1.0 } else { self.cuts[k] };
        (low, high)
    }

    /// CSV with columns `label,bin_low,bin_high,class_pd,share`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "bin_low", "bin_high", "class_pd", "share"])?;
        for k in 0..self.n_classes {
            let (lo, hi) = self.bin(k);
            w.write_record([
                self.labels[k].clone(),
                lo.to_string(),
                hi.to_string(),
                self.class_pd[k].to_string(),
                self.class_share[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.check()?;
        Ok(s)
    }
}

/// Free function form of [`RatingScale::assign_rating`].
pub fn assign_rating(scale: &RatingScale, pd: f64) -> &str {
    scale.assign_rating(pd)
}

// ---------------------------------------------------------------------------
// Fitness

/// PDs sorted ascending with prefix sums, so any cut vector is scored in
/// `O(K log n)`.
#[derive(Debug, Clone)]
pub struct RatingData {
    sorted: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    sy: Vec<u64>,
}

impl RatingData {
    pub fn new(pds: &[f64], y: &[u8]) -> Result<Self> {
        if pds.len() != y.len() {
            return Err(Error::Dimension {
                expected: pds.len(),
                got: y.len(),
            });
        }
        if pds.is_empty() {
            return Err(Error::InvalidArgument("no PDs to bucket".into()));
        }
        if let Some(p) = pds.iter().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidArgument(format!("PD {p} outside [0, 1]")));
        }
        let mut pairs: Vec<(f64, u8)> = pds.iter().copied().zip(y.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pairs.len();
        let mut s1 = Vec::with_capacity(n + 1);
        let mut s2 = Vec::with_capacity(n + 1);
        let mut sy = Vec::with_capacity(n + 1);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0u64);
        s1.push(a);
        s2.push(b);
        sy.push(c);
        for &(p, t) in &pairs {
            a += p;
            b += p * p;
            c += u64::from(t);
            s1.push(a);
            s2.push(b);
            sy.push(c);
        }
        Ok(Self {
            sorted: pairs.into_iter().map(|x| x.0).collect(),
            s1,
            s2,
            sy,
        })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Row ranges `[start, end)` of the sorted PDs in each class.
    fn bounds(&self, cuts: &[f64]) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(cuts.len() + 2);
        edges.push(0);
        edges.extend(cuts.iter().map(|&c| self.sorted.partition_point(|&p| p < c)));
        edges.push(self.sorted.len());
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Breakdown of the bucketing objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessTerms {
    pub brier: f64,
    pub cohesion: f64,
    pub separation: f64,
    pub size_penalty: f64,
    pub mono_penalty: f64,
    pub total: f64,
    /// classes with no members; their class PD is interpolated
    pub empty: Vec<usize>,
    pub class_pd: Vec<f64>,
    pub class_share: Vec<f64>,
    pub class_default_rate: Vec<f64>,
}

impl FitnessTerms {
    /// Unweighted size plus monotonicity penalty.
    pub fn violation(&self) -> f64 {
        self.size_penalty + self.mono_penalty
    }
}

/// Fill `None` entries from the nearest filled neighbours: linear
/// interpolation between two, a copy next to one.
fn interpolate(v: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<usize> = (0..v.len()).filter(|&i| v[i].is_some()).collect();
    (0..v.len())
        .map(|i| {
            if let Some(x) = v[i] {
                return x;
            }
            let lo = known.iter().rev().find(|&&j| j < i).copied();
            let hi = known.iter().find(|&&j| j > i).copied();
            match (lo, hi) {
                (Some(a), Some(b)) => {
                    let (xa, xb) = (v[a].unwrap(), v[b].unwrap());
                    xa + (xb - xa) * (i - a) as f64 / (b - a) as f64
                }
                (Some(a), None) => v[a].unwrap(),
                (None, Some(b)) => v[b].unwrap(),
                (None, None) => 0.0,
            }
        })
        .collect()
}

/// Weighted objective of a cut vector (lower is better):
///
/// `w_brier·BS + w_cohesion·Coh − w_separation·Sep + w_size·Size + w_mono·Mono`
///
/// * `BS`: Brier score when every member is forecast its class mean PD.
/// * `Coh`: within-class variance of the PDs, weighted by class share.
/// * `Sep`: mean gap between class mean PDs of adjacent classes.
/// * `Size`: `Σ max(0, min_share − share)² + max(0, share − max_share)²`.
/// * `Mono`: `Σ max(0, dr_k − dr_{k+1})²` over observed default rates.
pub fn fitness_terms(cuts: &[f64], data: &RatingData, cfg: &DeConfig) -> FitnessTerms {
    let n = data.len() as f64;
    let bounds = data.bounds(cuts);
    let k = bounds.len();
    let mut brier = 0.0;
    let mut cohesion = 0.0;
    let mut size = 0.0;
    let mut pd = Vec::with_capacity(k);
    let mut dr = Vec::with_capacity(k);
    let mut share = Vec::with_capacity(k);
    let mut empty = Vec::new();
    for (c, &(a, b)) in bounds.iter().enumerate() {
        let m = (b - a) as f64;
        let s = m / n;
        share.push(s);
        size += (cfg.min_share - s).max(0.0).powi(2) + (s - cfg.max_share).max(0.0).powi(2);
        if b == a {
            empty.push(c);
            pd.push(None);
            dr.push(None);
            continue;
        }
        let s1 = data.s1[b] - data.s1[a];
        let s2 = data.s2[b] - data.s2[a];
        let d = (data.sy[b] - data.sy[a]) as f64;
        let mean = s1 / m;
        // Σ (mean − y)² with y ∈ {0, 1}
        brier += m * mean * mean - 2.0 * mean * d + d;
        cohesion += (s2 - m * mean * mean).max(0.0);
        pd.push(Some(mean));
        dr.push(Some(d / m));
    }
    brier /= n;
    cohesion /= n;
    let class_pd = interpolate(&pd);
    let class_dr = interpolate(&dr);
    let separation = if k > 1 {
        class_pd.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (k - 1) as f64
    } else {
        0.0
    };
    let mono: f64 = class_dr.windows(2).map(|w| (w[0] - w[1]).max(0.0).powi(2)).sum();
    let total = cfg.w_brier * brier + cfg.w_cohesion * cohesion - cfg.w_separation * separation
        + cfg.w_size * size
        + cfg.w_mono * mono;
    FitnessTerms {
        brier,
        cohesion,
        separation,
        size_penalty: size,
        mono_penalty: mono,
        total,
        empty,
        class_pd,
        class_share: share,
        class_default_rate: class_dr,
    }
}

/// Weighted fitness of `cuts` on the given PDs and outcomes.
pub fn fitness(cuts: &[f64], pds: &[f64], y: &[u8], cfg: &DeConfig) -> Result<f64> {
    let data = RatingData::new(pds, y)?;
    Ok(fitness_terms(cuts, &data, cfg).total)
}

/// Clamp into `(ε, 1 − ε)`, sort ascending and enforce the minimum gap.
pub fn repair(genome: &mut [f64]) {
    for g in genome.iter_mut() {
        if !g.is_finite() {
            *g = 0.5;
        }
        *g = g.clamp(REPAIR_EPS, 1.0 - REPAIR_EPS);
    }
    genome.sort_by(f64::total_cmp);
    for i in 1..genome.len() {
        if genome[i] < genome[i - 1] + MIN_GAP {
            genome[i] = genome[i - 1] + MIN_GAP;
        }
    }
    // pushed past the upper bound: walk back down
    let last = genome.len().wrapping_sub(1);
    if let Some(g) = genome.last_mut() {
        *g = g.min(1.0 - REPAIR_EPS);
    }
    for i in (0..last).rev() {
        if genome[i] > genome[i + 1] - MIN_GAP {
            genome[i] = genome[i + 1] - MIN_GAP;
        }
    }
}

// ---------------------------------------------------------------------------
// Differential evolution

/// Score of one candidate: constraint violation and objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub violation: f64,
    pub value: f64,
}

impl Score {
    pub fn plain(value: f64) -> Self {
        Self { violation: 0.0, value }
    }

    /// Feasibility-first comparison: lower violation wins, objective breaks
    /// ties between equally (in)feasible candidates.
    fn no_worse_than(&self, other: &Score) -> bool {
        if self.violation != other.violation {
            return self.violation < other.violation;
        }
        self.value <= other.value
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeParams {
    pub population: usize,
    pub f: f64,
    pub cr: f64,
    pub generations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub score: Score,
    /// incumbent score after every generation
    pub history: Vec<Score>,
}

/// DE/rand/1/bin on a generic objective. Trial vectors for a generation are
/// drawn serially from one seeded stream and scored in parallel, so results
/// do not depend on the thread count.
pub fn differential_evolution<I, R, S>(dim: usize, p: &DeParams, init: I, repair: R, score: S) -> DeOutcome
where
    I: Fn(&mut ChaCha8Rng) -> Vec<f64>,
    R: Fn(&mut [f64]) + Sync,
    S: Fn(&[f64]) -> Score + Sync,
{
    let np = p.population;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            let mut x = init(&mut rng);
            repair(&mut x);
            x
        })
        .collect();
    let mut scores: Vec<Score> = pop.par_iter().map(|x| score(x)).collect();
    let incumbent = |scores: &[Score]| {
        let mut b = 0;
        for i in 1..scores.len() {
            // strict improvement only, so the lowest index wins ties
            if !scores[b].no_worse_than(&scores[i]) {
                b = i;
            }
        }
        b
    };
    let mut history = Vec::with_capacity(p.generations);
    for _ in 0..p.generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let picks: Vec<usize> = sample(&mut rng, np - 1, 3)
                    .into_iter()
                    .map(|j| if j >= i { j + 1 } else { j })
                    .collect();
                let (a, b, c) = (&pop[picks[0]], &pop[picks[1]], &pop[picks[2]]);
                let forced = rng.gen_range(0..dim.max(1));
                (0..dim)
                    .map(|d| {
                        if d == forced || rng.gen::<f64>() < p.cr {
                            a[d] + p.f * (b[d] - c[d])
                        } else {
                            pop[i][d]
                        }
                    })
                    .collect()
            })
            .collect();
        let evaluated: Vec<(Vec<f64>, Score)> = trials
            .into_par_iter()
            .map(|mut t| {
                repair(&mut t);
                let s = score(&t);
                (t, s)
            })
            .collect();
        for (i, (t, s)) in evaluated.into_iter().enumerate() {
            if s.no_worse_than(&scores[i]) {
                pop[i] = t;
                scores[i] = s;
            }
        }
        history.push(scores[incumbent(&scores)]);
    }
    let b = incumbent(&scores);
    DeOutcome {
        best: pop.swap_remove(b),
        score: scores[b],
        history,
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeTrace {
    pub terms: FitnessTerms,
    pub history: Vec<Score>,
}

/// Optimise a rating scale on calibrated PDs and outcomes.
pub fn de_optimize(pds: &[f64], y: &[u8], cfg: &DeConfig) -> Result<RatingScale> {
    Ok(de_optimize_traced(pds, y, cfg)?.0)
}

pub fn de_optimize_traced(pds: &[f64], y: &[u8], cfg: &DeConfig) -> Result<(RatingScale, DeTrace)> {
    cfg.validate()?;
    let data = RatingData::new(pds, y)?;
    let k = cfg.n_classes;
    let mut distinct = data.sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Rating(format!(
            "only {} distinct PD values for {k} classes; monotone classes are impossible, use fewer classes",
            distinct.len()
        )));
    }
    let params = DeParams {
        population: cfg.population,
        f: cfg.f,
        cr: cfg.cr,
        generations: cfg.generations,
        seed: cfg.seed,
    };
    // initial cuts at random quantiles of the sample, so that they start
    // where the PD mass is
    let init = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..k - 1).map(|_| quantile(&data.sorted, rng.gen())).collect() };
    let score = |cuts: &[f64]| {
        let t = fitness_terms(cuts, &data, cfg);
        if cfg.feasibility_first {
            Score {
                violation: t.violation(),
                value: t.total,
            }
        } else {
            Score::plain(t.total)
        }
    };
    let out = differential_evolution(k - 1, &params, init, repair, score);
    let terms = fitness_terms(&out.best, &data, cfg);
    info!(
        "rating DE: fitness {:.6} (brier {:.6}, size penalty {:.2e}, mono penalty {:.2e})",
        terms.total, terms.brier, terms.size_penalty, terms.mono_penalty
    );
    if !terms.empty.is_empty() {
        return Err(Error::Rating(format!(
            "best scale leaves classes {:?} empty (cuts {:?}); use fewer classes",
            terms.empty, out.best
        )));
    }
    if terms.violation() > 0.0 {
        warn!(
            "rating DE: best scale violates constraints (size {:.2e}, monotonicity {:.2e}); shares {:?}",
            terms.size_penalty, terms.mono_penalty, terms.class_share
        );
    }
    let scale = RatingScale::new(
        out.best.clone(),
        terms.class_pd.clone(),
        cfg.class_labels(),
        terms.class_share.clone(),
    )
    .map_err(|e| Error::Rating(format!("{e}; fitness terms {terms:?}")))?;
    Ok((
        scale,
        DeTrace {
            terms,
            history: out.history,
        },
    ))
}
