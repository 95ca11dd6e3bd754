//! Acceptance suite. Each test prints one `PASS`/`FAIL` line per criterion;
//! run with `--nocapture` to see them all.
//!
//! Criteria 1–3, the second half of 4, 10 and 11 share one full pipeline run
//! on 50,000 synthetic firms, executed once on a single worker thread.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use creditrisk::autoenc::AutoencoderParams;
use creditrisk::data::{split_out_of_time, stratified_split, Column, Dataset};
use creditrisk::encode::JamesSteinEncoder;
use creditrisk::explain::{exact_shapley, tree_shapley, tree_shapley_batch};
use creditrisk::gbdt::{self, f_beta, GbdtConfig};
use creditrisk::linmod::{objective_and_gradient, DenseMatrix, Penalty};
use creditrisk::metrics::{brier, roc_auc};
use creditrisk::pipeline::{self, assert_disjoint, load_artifact, names, Manifest, PipelineConfig, RunOutput};
use creditrisk::rating::{de_optimize, DeConfig};
use creditrisk::synth::{generate, GeneratorSpec};
use creditrisk::validate::{binomial_critical, zone_frequencies, TrafficLightParams};

// ---------------------------------------------------------------------------
// reporting

struct Check {
    what: String,
    ok: bool,
}

fn check(ok: bool, what: impl Into<String>) -> Check {
    Check { what: what.into(), ok }
}

fn report(id: &str, title: &str, checks: Vec<Check>) {
    let ok = checks.iter().all(|c| c.ok);
    let detail: Vec<String> = checks
        .iter()
        .map(|c| format!("{}{}", if c.ok { "" } else { "!! " }, c.what))
        .collect();
    println!("{} criterion {id} {title}: {}", if ok { "PASS" } else { "FAIL" }, detail.join("; "));
    assert!(ok, "criterion {id} failed: {}", detail.join("; "));
}

// ---------------------------------------------------------------------------
// the shared 50k run

const RUN_TOML: &str = r#"
[data.synth]
n_rows = 50000
years = [2011, 2017]
n_informative = 10
n_noise = 20
n_categorical = 3

[split]
oot_year = 2017
"#;

struct Shared {
    cfg: PipelineConfig,
    dir: PathBuf,
    out: RunOutput,
    wall: Duration,
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&d);
    d
}

fn shared() -> &'static Shared {
    static RUN: OnceLock<Shared> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = PipelineConfig::from_toml(RUN_TOML).unwrap();
        let dir = scratch("run_single_thread");
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let t = Instant::now();
        let out = pool.install(|| pipeline::run_pipeline(&cfg, &dir)).expect("pipeline run");
        let wall = t.elapsed();
        Shared { cfg, dir, out, wall }
    })
}

// ---------------------------------------------------------------------------
// 1–3: discrimination, calibration and reliability on the synthetic run

#[test]
fn c01_discrimination_near_the_bayes_ceiling() {
    let s = shared();
    let m = &s.out.validation.metrics;
    let bayes = m.bayes.as_ref().expect("synthetic run has ground truth");
    let auc = m.auroc_raw.unwrap();
    let rate = m.defaults as f64 / m.n as f64;
    report(
        "1",
        "discrimination ceiling",
        vec![
            check(auc >= bayes.bayes_auroc - 0.03, format!("out-of-time AUROC {auc:.4} vs Bayes {:.4} - 0.03", bayes.bayes_auroc)),
            check(s.wall <= Duration::from_secs(300), format!("single-thread wall time {:.1?} <= 300 s", s.wall)),
            check((0.01..=0.04).contains(&rate), format!("out-of-time default rate {rate:.4}")),
        ],
    );
}

#[test]
fn c02_calibration_quality() {
    let s = shared();
    let m = &s.out.validation.metrics;
    let bayes = m.bayes.as_ref().unwrap();
    let gap = (m.auroc_calibrated.unwrap() - m.auroc_raw.unwrap()).abs();
    report(
        "2",
        "calibration quality",
        vec![
            check(
                m.brier_calibrated <= bayes.irreducible_brier + 0.005,
                format!("Brier {:.5} vs irreducible {:.5} + 0.005", m.brier_calibrated, bayes.irreducible_brier),
            ),
            check(gap <= 0.01, format!("|AUROC calibrated - raw| = {gap:.4} <= 0.01")),
        ],
    );
}

#[test]
fn c03_reliability() {
    let s = shared();
    let bins = &s.out.validation.report.reliability.bins;
    let mut checks = Vec::new();
    let mut used = 0;
    for b in bins.iter().filter(|b| b.count >= 200) {
        let (p, o) = (b.mean_pred.unwrap(), b.obs_freq.unwrap());
        used += 1;
        checks.push(check(
            (o - p).abs() <= 0.05,
            format!("[{:.1}, {:.1}) n={} |{o:.4} - {p:.4}| = {:.4}", b.low, b.high, b.count, (o - p).abs()),
        ));
    }
    checks.push(check(used > 0, format!("{used} bins with >= 200 rows")));
    report("3", "reliability", checks);
}

// ---------------------------------------------------------------------------
// 4: rating optimiser

/// Fitness of a cut vector, written out member by member.
fn direct_fitness(cuts: &[f64], pds: &[f64], y: &[u8], c: &DeConfig) -> Option<f64> {
    let k = cuts.len() + 1;
    let mut members: Vec<Vec<(f64, u8)>> = vec![Vec::new(); k];
    for (&p, &t) in pds.iter().zip(y) {
        members[cuts.iter().filter(|&&x| x <= p).count()].push((p, t));
    }
    if members.iter().any(|m| m.is_empty()) {
        return None;
    }
    let n = pds.len() as f64;
    let mean: Vec<f64> = members.iter().map(|m| m.iter().map(|v| v.0).sum::<f64>() / m.len() as f64).collect();
    let rate: Vec<f64> = members.iter().map(|m| m.iter().map(|v| v.1 as f64).sum::<f64>() / m.len() as f64).collect();
    let (mut bs, mut coh) = (0.0, 0.0);
    for (m, mu) in members.iter().zip(&mean) {
        for &(p, t) in m {
            bs += (mu - t as f64).powi(2);
            coh += (p - mu).powi(2);
        }
    }
    let sep = (0..k - 1).map(|i| mean[i + 1] - mean[i]).sum::<f64>() / (k - 1) as f64;
    let size: f64 = members
        .iter()
        .map(|m| {
            let share = m.len() as f64 / n;
            (c.min_share - share).max(0.0).powi(2) + (share - c.max_share).max(0.0).powi(2)
        })
        .sum();
    let mono: f64 = (0..k - 1).map(|i| (rate[i] - rate[i + 1]).max(0.0).powi(2)).sum();
    Some(c.w_brier * bs / n + c.w_cohesion * coh / n - c.w_separation * sep + c.w_size * size + c.w_mono * mono)
}

#[test]
fn c04_rating_optimiser() {
    // three well separated clumps of 200 PDs
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut pds, mut y) = (Vec::new(), Vec::new());
    for (lo, hi, n) in [(0.01, 0.03, 80), (0.15, 0.2, 70), (0.5, 0.6, 50)] {
        for _ in 0..n {
            let p: f64 = rng.gen_range(lo..hi);
            pds.push(p);
            y.push(u8::from(rng.gen::<f64>() < p));
        }
    }
    let cfg = DeConfig {
        n_classes: 3,
        ..Default::default()
    };
    let scale = de_optimize(&pds, &y, &cfg).unwrap();
    let de = direct_fitness(&scale.cuts, &pds, &y, &cfg).unwrap();
    let grid: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
    let mut best = f64::INFINITY;
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            if let Some(f) = direct_fitness(&[grid[a], grid[b]], &pds, &y, &cfg) {
                best = best.min(f);
            }
        }
    }
    let mut checks = vec![check(de <= best + 0.01 * best.abs(), format!("K=3 DE fitness {de:.6} vs exhaustive {best:.6}"))];

    let s = shared().out.scale.clone();
    checks.push(check(s.n_classes == 9, format!("{} classes", s.n_classes)));
    let monotone = s.class_pd.windows(2).all(|w| w[0] < w[1]);
    checks.push(check(monotone, format!("class PDs increasing {:?}", s.class_pd.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>())));
    let (lo, hi) = (DeConfig::default().min_share, DeConfig::default().max_share);
    let shares_ok = s.class_share.iter().all(|&x| x >= lo && x <= hi);
    checks.push(check(
        shares_ok,
        format!("shares in [{lo}, {hi}]: {:?}", s.class_share.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>()),
    ));
    report("4", "rating optimiser", checks);
}

// ---------------------------------------------------------------------------
// 5: binomial test and traffic light

/// Smallest d whose upper binomial tail is at most `1 - alpha`, in exact
/// integer arithmetic. `pd = p_num / p_den`, `1 - alpha = t_num / t_den`.
fn exact_critical(n: u64, p_num: u64, p_den: u64, t_num: u64, t_den: u64) -> u64 {
    let a = BigUint::from(p_num);
    let b = BigUint::from(p_den - p_num);
    // tail(d) * p_den^n as an integer; compare against t_num/t_den * p_den^n
    let rhs = BigUint::from(t_num) * BigUint::from(p_den).pow(n as u32);
    let mut binom = BigUint::from(1u32); // C(n, j) for j = n downwards
    let mut tail = BigUint::from(0u32);
    let mut answer = n + 1;
    for j in (0..=n).rev() {
        tail += &binom * a.pow(j as u32) * b.pow((n - j) as u32);
        if &tail * BigUint::from(t_den) <= rhs {
            answer = j;
        } else {
            break;
        }
        // C(n, j-1) = C(n, j) * j / (n - j + 1)
        if j > 0 {
            binom = binom * BigUint::from(j) / BigUint::from(n - j + 1);
        }
    }
    answer
}

#[test]
fn c05_validation_math() {
    let pds = [(1u64, 100u64), (1, 20), (1, 10), (1, 2)];
    let alphas = [(0.9, 1u64, 10u64), (0.95, 1, 20), (0.99, 1, 100)];
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for n in 1..=200u64 {
        for &(pn, pd) in &pds {
            for &(alpha, tn, td) in &alphas {
                let want = exact_critical(n, pn, pd, tn, td);
                let got = binomial_critical(n, pn as f64 / pd as f64, alpha).unwrap();
                cases += 1;
                if got != want {
                    mismatches.push(format!("N={n} PD={pn}/{pd} alpha={alpha}: {got} vs {want}"));
                }
            }
        }
    }
    let mut checks = vec![check(
        mismatches.is_empty(),
        format!("binomial critical values agree with exact summation on {cases} cases {mismatches:?}"),
    )];

    let freq = zone_frequencies(0.01, 10_000, 100_000, &TrafficLightParams::default(), 17).unwrap();
    for (name, (got, want)) in ["green", "yellow", "orange", "red"].iter().zip(freq.iter().zip([0.5, 0.3, 0.15, 0.05])) {
        checks.push(check((got - want).abs() <= 0.02, format!("{name} {got:.4} vs {want} +- 0.02")));
    }
    report("5", "validation math", checks);
}

// ---------------------------------------------------------------------------
// 6: Shapley values

/// Shapley values by averaging marginal contributions over all orderings.
fn permutation_shapley(f: &dyn Fn(&[f64]) -> f64, x: &[f64], background: &[Vec<f64>]) -> Vec<f64> {
    let m = x.len();
    let value = |mask: &[bool]| {
        background
            .iter()
            .map(|b| {
                let z: Vec<f64> = (0..m).map(|j| if mask[j] { x[j] } else { b[j] }).collect();
                f(&z)
            })
            .sum::<f64>()
            / background.len() as f64
    };
    let mut perm: Vec<usize> = (0..m).collect();
    let mut phi = vec![0.0; m];
    let mut count = 0usize;
    // Heap's algorithm
    let mut c = vec![0usize; m];
    let visit = |perm: &[usize], phi: &mut Vec<f64>| {
        let mut mask = vec![false; m];
        let mut prev = value(&mask);
        for &j in perm {
            mask[j] = true;
            let v = value(&mask);
            phi[j] += v - prev;
            prev = v;
        }
    };
    visit(&perm, &mut phi);
    count += 1;
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm, &mut phi);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    phi.iter().map(|p| p / count as f64).collect()
}

fn random_dataset(m: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let y: Vec<u8> = (0..n)
        .map(|i| {
            let z = x[0][i] - 0.5 * x[m - 1][i] + if m > 2 { x[1][i] * x[2][i] } else { 0.0 };
            u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-z).exp()))
        })
        .collect();
    let cols = x.into_iter().enumerate().map(|(j, v)| Column::numeric(format!("f{j}"), v)).collect();
    Dataset::from_columns(cols, y, vec![2015; n]).unwrap()
}

#[test]
fn c06_shapley_correctness() {
    let mut worst_coalition: f64 = 0.0;
    let mut worst_tree: f64 = 0.0;
    for m in 1..=6 {
        let ds = random_dataset(m, 400, m as u64);
        let cfg = GbdtConfig {
            n_trees: 15,
            max_leaves: 6,
            min_samples_leaf: 5,
            ..Default::default()
        };
        let model = gbdt::fit(&ds, &cfg).unwrap();
        let background: Vec<Vec<f64>> = (0..12).map(|i| ds.row(i * 7).to_vec()).collect();
        let smooth = move |z: &[f64]| z.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v.sin()).product::<f64>() + z[0];
        for i in 0..4 {
            let mut x = ds.row(300 + i).to_vec();
            if i == 3 {
                x[m - 1] = f64::NAN;
            }
            let tree_f = |z: &[f64]| model.raw_score_row(z);
            let oracle = permutation_shapley(&tree_f, &x, &background);
            let coal = exact_shapley(tree_f, &x, &background, 15).unwrap();
            let fast = tree_shapley(&model, &x, &background, 15).unwrap();
            for j in 0..m {
                worst_coalition = worst_coalition.max((coal.phi[j] - oracle[j]).abs());
                worst_tree = worst_tree.max((fast.phi[j] - oracle[j]).abs());
            }
            if i < 3 {
                let oracle = permutation_shapley(&smooth, &x, &background);
                let coal = exact_shapley(smooth, &x, &background, 15).unwrap();
                for j in 0..m {
                    worst_coalition = worst_coalition.max((coal.phi[j] - oracle[j]).abs());
                }
            }
        }
    }
    let mut checks = vec![
        check(worst_coalition <= 1e-9, format!("coalition formula vs permutations, m <= 6: max gap {worst_coalition:.2e}")),
        check(worst_tree <= 1e-9, format!("tree path decomposition vs permutations: max gap {worst_tree:.2e}")),
    ];

    // additivity on the trained model
    let s = shared();
    let model = &s.out.model.model;
    let oot = &s.out.prepared.oot;
    let train = &s.out.prepared.train;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let rows: Vec<Vec<f64>> = (0..1000).map(|_| oot.row(rng.gen_range(0..oot.n_rows())).to_vec()).collect();
    let background: Vec<Vec<f64>> = (0..100).map(|_| train.row(rng.gen_range(0..train.n_rows())).to_vec()).collect();
    let ex = tree_shapley_batch(model, &rows, &background, 15).unwrap();
    let gap = ex
        .iter()
        .zip(&rows)
        .map(|(e, x)| (e.base_value + e.phi.iter().sum::<f64>() - model.raw_score_row(x)).abs())
        .fold(0.0, f64::max);
    checks.push(check(model.n_features <= 15, format!("{} selected features", model.n_features)));
    checks.push(check(gap <= 1e-9, format!("additivity on 1000 instances: max gap {gap:.2e}")));

    // two of them again by full coalition enumeration
    let small_bg = &background[..10];
    let mut enum_gap: f64 = 0.0;
    for x in &rows[..2] {
        let a = exact_shapley(|z: &[f64]| model.raw_score_row(z), x, small_bg, 15).unwrap();
        let b = tree_shapley(model, x, small_bg, 15).unwrap();
        enum_gap = a.phi.iter().zip(&b.phi).map(|(p, q)| (p - q).abs()).fold(enum_gap, f64::max);
    }
    checks.push(check(enum_gap <= 1e-9, format!("tree path vs 2^{} coalitions on 2 instances: {enum_gap:.2e}", model.n_features)));
    report("6", "Shapley correctness", checks);
}

// ---------------------------------------------------------------------------
// 7: gradients

fn relative_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale > 1e-8 {
                (a - n).abs() / scale
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

#[test]
fn c07_gradient_checks() {
    const H: f64 = 1e-5;
    let mut ae_worst: f64 = 0.0;
    let mut lr_worst: f64 = 0.0;
    let seeds = 0..12u64;
    for seed in seeds.clone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rows: Vec<Vec<f64>> = (0..16).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let data = DenseMatrix::from_rows(&rows).unwrap();
        let p = AutoencoderParams::<f64>::init(&[8, 6, 4, 2, 4, 6, 8], seed).unwrap();
        let (_, g) = p.loss_and_gradient(&data).unwrap();
        let theta = p.flat();
        let mut q = p.clone();
        let numeric: Vec<f64> = (0..theta.len())
            .map(|k| {
                let mut t = theta.clone();
                t[k] += H;
                q.set_flat(&t).unwrap();
                let up = q.mse(&data).unwrap();
                t[k] -= 2.0 * H;
                q.set_flat(&t).unwrap();
                let down = q.mse(&data).unwrap();
                (up - down) / (2.0 * H)
            })
            .collect();
        ae_worst = ae_worst.max(relative_gap(&g.flat(), &numeric));

        // L2 logistic objective, written out directly
        let (n, d, c) = (40, 5, 0.7);
        let xr: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<bool>())).collect();
        let x = DenseMatrix::from_rows(&xr).unwrap();
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: f64 = rng.gen_range(-1.0..1.0);
        let loss = |w: &[f64], b: f64| {
            let ll: f64 = xr
                .iter()
                .zip(&y)
                .map(|(r, &t)| {
                    let z: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
                    let p = 1.0 / (1.0 + (-z).exp());
                    -(t as f64 * p.ln() + (1.0 - t as f64) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n as f64;
            ll + w.iter().map(|v| v * v).sum::<f64>() / (2.0 * c)
        };
        let (_, gw, gb) = objective_and_gradient(&x, &y, &w, b, Penalty::L2, c);
        let mut numeric: Vec<f64> = (0..d)
            .map(|k| {
                let (mut up, mut down) = (w.clone(), w.clone());
                up[k] += H;
                down[k] -= H;
                (loss(&up, b) - loss(&down, b)) / (2.0 * H)
            })
            .collect();
        numeric.push((loss(&w, b + H) - loss(&w, b - H)) / (2.0 * H));
        let mut analytic = gw;
        analytic.push(gb);
        lr_worst = lr_worst.max(relative_gap(&analytic, &numeric));
    }
    let n_seeds = seeds.count();
    report(
        "7",
        "gradient checks",
        vec![
            check(n_seeds >= 10, format!("{n_seeds} seeds")),
            check(ae_worst < 1e-5, format!("autoencoder max relative error {ae_worst:.2e}")),
            check(lr_worst < 1e-5, format!("logistic max relative error {lr_worst:.2e}")),
        ],
    );
}

// ---------------------------------------------------------------------------
// 8, 9: metric identities and F-beta

#[test]
fn c08_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut sets = 0;
    while sets < 1000 {
        let n = rng.gen_range(2..150);
        let levels = rng.gen_range(2..30);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.3)).collect();
        let (pos, neg) = (y.iter().filter(|&&t| t == 1).count(), y.iter().filter(|&&t| t == 0).count());
        if pos == 0 || neg == 0 {
            continue;
        }
        let mut wins = 0.0;
        for i in (0..n).filter(|&i| y[i] == 1) {
            for j in (0..n).filter(|&j| y[j] == 0) {
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let rank_stat = wins / (pos * neg) as f64;
        worst = worst.max((roc_auc(&s, &y).unwrap().auc - rank_stat).abs());
        sets += 1;
    }
    let y: Vec<u8> = (0..500).map(|i| u8::from(i % 7 == 0)).collect();
    let perfect: Vec<f64> = y.iter().map(|&t| t as f64).collect();
    let inverted: Vec<f64> = y.iter().map(|&t| 1.0 - t as f64).collect();
    let (bp, bi) = (brier(&perfect, &y).unwrap(), brier(&inverted, &y).unwrap());
    report(
        "8",
        "metric identities",
        vec![
            check(worst <= 1e-12, format!("trapezoidal AUROC vs rank statistic on {sets} sets: {worst:.2e}")),
            check(bp == 0.0, format!("Brier of perfect forecast {bp}")),
            check(bi == 1.0, format!("Brier of inverted forecast {bi}")),
        ],
    );
}

#[test]
fn c09_f_beta() {
    let mut checks = Vec::new();
    let mut worst: f64 = 0.0;
    for r in [0.05, 0.3, 0.5, 0.77, 1.0] {
        worst = worst.max((f_beta(r, r, 1.0) - r).abs());
    }
    checks.push(check(worst <= 1e-9, format!("equal inputs at beta=1 return the input ({worst:.1e})")));
    let mut worst: f64 = 0.0;
    for (s, r) in [(0.8, 0.6), (0.2, 0.9), (0.55, 0.35)] {
        worst = worst.max((f_beta(s, r, 1.0) - 2.0 / (1.0 / s + 1.0 / r)).abs());
    }
    checks.push(check(worst <= 1e-9, format!("beta=1 is the harmonic mean ({worst:.1e})")));
    let v = f_beta(0.8, 0.6, 2.0);
    checks.push(check((v - 12.0 / 19.0).abs() <= 1e-9, format!("specificity .8, recall .6, beta 2 -> {v:.12}")));
    let hi = f_beta(0.9, 0.3, 4.0);
    checks.push(check((hi - 17.0 * 0.27 / (16.0 * 0.9 + 0.3)).abs() <= 1e-9, format!("beta 4 -> {hi:.9}")));
    checks.push(check(f_beta(0.0, 0.0, 1.0) == 0.0, "both zero -> 0"));
    report("9", "F-beta", checks);
}

// ---------------------------------------------------------------------------
// 10, 11: determinism and leakage

#[test]
fn c10_determinism() {
    let s = shared();
    let again = scratch("run_all_threads");
    pipeline::run_pipeline(&s.cfg, &again).unwrap();
    let manifest: Manifest = load_artifact(&s.dir.join(names::MANIFEST)).unwrap();
    let mut differing = Vec::new();
    let mut json = 0;
    for name in manifest.artifacts.iter().map(String::as_str).chain([names::MANIFEST]) {
        json += usize::from(name.ends_with(".json"));
        if fs::read(s.dir.join(name)).unwrap() != fs::read(again.join(name)).unwrap() {
            differing.push(name.to_string());
        }
    }
    report(
        "10",
        "determinism",
        vec![
            check(json >= 8, format!("{json} JSON artifacts compared")),
            check(differing.is_empty(), format!("differing artifacts across 1 and all threads {differing:?}")),
        ],
    );
}

#[test]
fn c11_leakage_guards() {
    let mut checks = Vec::new();

    // encoders through the pipeline: flipping every out-of-time outcome
    let mut cfg = PipelineConfig::from_toml(RUN_TOML).unwrap();
    cfg.data.synth = Some(GeneratorSpec {
        n_rows: 8000,
        ..Default::default()
    });
    let synth = generate(cfg.data.synth.as_ref().unwrap()).unwrap();
    let a = pipeline::prepare_input(&cfg, synth.dataset.clone(), None).unwrap();
    let flipped: Vec<u8> = synth
        .dataset
        .target()
        .iter()
        .zip(synth.dataset.year())
        .map(|(&t, &yr)| if yr == 2017 { 1 - t } else { t })
        .collect();
    let b = pipeline::prepare_input(&cfg, synth.dataset.clone().with_target(flipped).unwrap(), None).unwrap();
    checks.push(check(
        a.encoders == b.encoders && a.train == b.train && a.calib == b.calib,
        format!("{} encoders unchanged by out-of-time outcomes", a.encoders.james_stein.len()),
    ));

    // directly: flipping calibration-sample outcomes
    let ds = &synth.dataset;
    let dev = split_out_of_time(ds, 2017).unwrap().first;
    let parts = stratified_split(&dev, 0.2, 0).unwrap();
    let train_ids: std::collections::HashSet<u64> = parts.first.row_ids().iter().copied().collect();
    let mutated: Vec<u8> = dev
        .target()
        .iter()
        .zip(dev.row_ids())
        .map(|(&t, id)| if train_ids.contains(id) { t } else { 1 - t })
        .collect();
    let dev_mut = dev.clone().with_target(mutated).unwrap();
    let train_idx: Vec<usize> = (0..dev.n_rows()).filter(|&i| train_ids.contains(&dev.row_ids()[i])).collect();
    let mut same = true;
    for j in (0..ds.n_cols()).filter(|&j| ds.dictionary(j).is_some()) {
        let e1 = JamesSteinEncoder::fit_column(&dev.subset(&train_idx), j).unwrap();
        let e2 = JamesSteinEncoder::fit_column(&dev_mut.subset(&train_idx), j).unwrap();
        same &= e1 == e2 && e1.transform_column(&dev, j).unwrap() == e2.transform_column(&dev_mut, j).unwrap();
    }
    checks.push(check(same, "encoders unchanged by calibration-sample outcomes"));

    // the runtime guard
    let s = shared();
    let manifest: Manifest = load_artifact(&s.dir.join(names::MANIFEST)).unwrap();
    checks.push(check(
        manifest.leakage_check.as_deref() == Some("passed"),
        format!("run manifest leakage check {:?}", manifest.leakage_check),
    ));
    let fit_rows = &s.out.model.fit_rows;
    checks.push(check(
        assert_disjoint(fit_rows, &s.out.prepared.calib, "calibration").is_ok(),
        format!("{} boosting rows disjoint from {} calibration rows", fit_rows.len(), s.out.prepared.calib.n_rows()),
    ));
    let overlap = assert_disjoint(fit_rows, &s.out.prepared.train.subset(&[0, 1, 2]), "calibration");
    checks.push(check(overlap.is_err(), "guard fires on overlapping rows"));
    report("11", "leakage guards", checks);
}
