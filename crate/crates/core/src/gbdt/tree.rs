//! Regression trees grown leaf-wise from per-row gradients and hessians.
//!
//! Split search is exact: each open leaf keeps, for every feature, its rows in
//! ascending feature order, and every boundary between distinct values is a
//! candidate. Rows whose value is missing are tried on both sides.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::is_missing;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        missing_left: bool,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        leaf_id: usize,
        value: f64,
    },
}

/// Binary tree stored as a node array with the root at index 0.
/// Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub n_leaves: usize,
}

impl Tree {
    /// A tree with a single leaf.
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { leaf_id: 0, value }],
            n_leaves: 1,
        }
    }

    /// Index of the leaf `row` lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                TreeNode::Leaf { leaf_id, .. } => return *leaf_id,
                TreeNode::Internal {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                    ..
                } => {
                    let v = row[*feature];
                    let go_left = if is_missing(v) {
                        *missing_left
                    } else {
                        v < *threshold
                    };
                    k = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Leaf values indexed by leaf id.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_leaves];
        for n in &self.nodes {
            if let TreeNode::Leaf { leaf_id, value } = n {
                v[*leaf_id] = *value;
            }
        }
        v
    }

    pub fn value(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Internal {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                    ..
                } => {
                    let v = row[*feature];
                    let go_left = if is_missing(v) {
                        *missing_left
                    } else {
                        v < *threshold
                    };
                    k = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Internal { feature, gain, .. } => Some((*feature, *gain)),
            TreeNode::Leaf { .. } => None,
        })
    }
}

/// Row-major feature matrix view, missing cells as NaN.
#[derive(Debug, Clone, Copy)]
pub struct Matrix<'a> {
    pub data: &'a [f64],
    pub n_rows: usize,
    pub n_cols: usize,
}

impl<'a> Matrix<'a> {
    pub fn new(data: &'a [f64], n_cols: usize) -> Self {
        let n_rows = if n_cols == 0 { 0 } else { data.len() / n_cols };
        Self {
            data,
            n_rows,
            n_cols,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Per-feature row orderings by ascending value, missing rows left out,
/// plus a column-major copy of the values. Computed once per training set
/// and filtered per tree.
#[derive(Debug, Clone)]
pub struct Presorted {
    pub n_rows: usize,
    pub order: Vec<Vec<u32>>,
    columns: Vec<Vec<f64>>,
    has_missing: Vec<bool>,
}

impl Presorted {
    pub fn new(x: Matrix<'_>) -> Self {
        let columns: Vec<Vec<f64>> = (0..x.n_cols)
            .map(|j| (0..x.n_rows).map(|i| x.get(i, j)).collect())
            .collect();
        let order = columns
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..x.n_rows as u32)
                    .filter(|&i| !is_missing(col[i as usize]))
                    .collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let has_missing = columns.iter().map(|c| c.iter().any(|v| is_missing(*v))).collect();
        Self {
            n_rows: x.n_rows,
            order,
            columns,
            has_missing,
        }
    }

    #[inline]
    fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
    pub min_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitCand {
    pub feature: usize,
    pub threshold: f64,
    pub missing_left: bool,
    pub gain: f64,
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Split gain `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)]`.
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda))
}

/// One present value of a feature in a node, with the row's gradient pair
/// copied alongside so the scan is sequential.
#[derive(Clone, Copy)]
struct Entry {
    v: f64,
    g: f64,
    h: f64,
    row: u32,
}

// nodes smaller than this are scanned on the calling thread
const PAR_MIN_ROWS: usize = 4096;

fn best_for_feature(j: usize, sorted: &[Entry], total: Stats, has_missing: bool, p: &GrowParams) -> Option<SplitCand> {
    if sorted.len() < 2 {
        return None;
    }
    let present = if has_missing && sorted.len() < total.n {
        let mut s = Stats::default();
        for e in sorted {
            s.g += e.g;
            s.h += e.h;
        }
        s.n = sorted.len();
        s
    } else {
        total
    };
    let miss = Stats {
        g: total.g - present.g,
        h: total.h - present.h,
        n: total.n - present.n,
    };
    let lam = p.lambda;
    let parent = score(total.g, total.h, lam);
    let min_leaf = p.min_samples_leaf;

    // best so far as (position, missing_left, gain); strict improvement only,
    // so ties keep the earlier candidate
    let mut best: Option<(usize, bool, f64)> = None;
    let mut best_gain = p.min_gain;
    let (mut gl, mut hl) = (0.0, 0.0);
    for (k, w) in sorted.windows(2).enumerate() {
        gl += w[0].g;
        hl += w[0].h;
        if w[1].v <= w[0].v {
            continue;
        }
        let nl = k + 1;
        let nr = present.n - nl;
        let (gr, hr) = (present.g - gl, present.h - hl);
        if miss.n == 0 {
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let gain = 0.5 * (score(gl, hl, lam) + score(gr, hr, lam) - parent);
            if gain > best_gain {
                best_gain = gain;
                best = Some((k, nl >= nr, gain));
            }
        } else {
            if nl >= min_leaf && nr + miss.n >= min_leaf {
                let gain = 0.5 * (score(gl, hl, lam) + score(gr + miss.g, hr + miss.h, lam) - parent);
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((k, false, gain));
                }
            }
            if nl + miss.n >= min_leaf && nr >= min_leaf {
                let gain = 0.5 * (score(gl + miss.g, hl + miss.h, lam) + score(gr, hr, lam) - parent);
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((k, true, gain));
                }
            }
        }
    }
    best.map(|(k, missing_left, gain)| {
        let (v, next) = (sorted[k].v, sorted[k + 1].v);
        let mut threshold = v + (next - v) / 2.0;
        if threshold <= v {
            threshold = next;
        }
        SplitCand {
            feature: j,
            threshold,
            missing_left,
            gain,
        }
    })
}

/// A leaf still open for splitting. Its rows occupy `rows` in the shared row
/// buffer and `ranges[j]` in the per-feature entry buffers.
struct OpenLeaf {
    node: usize,
    rows: (usize, usize),
    ranges: Vec<(usize, usize)>,
    stats: Stats,
    best: Option<SplitCand>,
}

/// Working buffers of one tree: every open leaf owns a contiguous range of
/// each buffer, and a split partitions that range in place.
struct Buffers {
    rows: Vec<u32>,
    entries: Vec<Vec<Entry>>,
    scratch_rows: Vec<u32>,
    scratch: Vec<Entry>,
}

fn find_split(ps: &Presorted, bufs: &Buffers, leaf: &OpenLeaf, allowed: &[bool], p: &GrowParams) -> Option<SplitCand> {
    if leaf.stats.n < 2 * p.min_samples_leaf.max(1) {
        return None;
    }
    let one = |j: usize| {
        if allowed[j] {
            let (lo, hi) = leaf.ranges[j];
            best_for_feature(j, &bufs.entries[j][lo..hi], leaf.stats, ps.has_missing[j], p)
        } else {
            None
        }
    };
    let per_feature: Vec<Option<SplitCand>> = if leaf.stats.n >= PAR_MIN_ROWS && rayon::current_num_threads() > 1 {
        (0..bufs.entries.len()).into_par_iter().map(one).collect()
    } else {
        (0..bufs.entries.len()).map(one).collect()
    };
    // fixed-order reduction: ties go to the lower feature index
    let mut best: Option<SplitCand> = None;
    for c in per_feature.into_iter().flatten() {
        if best.is_none_or(|b| c.gain > b.gain) {
            best = Some(c);
        }
    }
    best
}

fn stats_of(rows: &[u32], g: &[f64], h: &[f64]) -> Stats {
    let mut s = Stats::default();
    for &i in rows {
        s.g += g[i as usize];
        s.h += h[i as usize];
    }
    s.n = rows.len();
    s
}

/// Stable in-place partition of `buf[lo..hi]`; returns the split point.
fn partition_range<T: Copy>(buf: &mut [T], scratch: &mut Vec<T>, lo: usize, hi: usize, left: impl Fn(&T) -> bool) -> usize {
    scratch.clear();
    let mut w = lo;
    for k in lo..hi {
        let e = buf[k];
        if left(&e) {
            buf[w] = e;
            w += 1;
        } else {
            scratch.push(e);
        }
    }
    buf[w..hi].copy_from_slice(scratch);
    w
}

/// Grow one tree on the rows flagged in `in_sample` (rows with zero hessian
/// weight should simply be left out). Returns `None` when the root has no
/// split with gain above `min_gain`.
pub fn grow_tree(
    presorted: &Presorted,
    in_sample: &[bool],
    allowed: &[bool],
    g: &[f64],
    h: &[f64],
    p: &GrowParams,
) -> Option<Tree> {
    let n = presorted.n_rows;
    let rows: Vec<u32> = (0..n as u32).filter(|&i| in_sample[i as usize]).collect();
    let entries: Vec<Vec<Entry>> = presorted
        .order
        .iter()
        .zip(&presorted.columns)
        .map(|(o, col)| {
            let mut s = Vec::with_capacity(rows.len().min(o.len()));
            for &i in o {
                let r = i as usize;
                if in_sample[r] {
                    s.push(Entry {
                        v: col[r],
                        g: g[r],
                        h: h[r],
                        row: i,
                    });
                }
            }
            s
        })
        .collect();
    let stats = stats_of(&rows, g, h);
    let mut bufs = Buffers {
        scratch_rows: Vec::with_capacity(rows.len()),
        scratch: Vec::with_capacity(rows.len()),
        rows,
        entries,
    };
    let mut root = OpenLeaf {
        node: 0,
        rows: (0, bufs.rows.len()),
        ranges: bufs.entries.iter().map(|e| (0, e.len())).collect(),
        stats,
        best: None,
    };
    root.best = find_split(presorted, &bufs, &root, allowed, p);
    root.best?;

    let mut nodes = vec![TreeNode::Leaf {
        leaf_id: 0,
        value: 0.0,
    }];
    let mut open = vec![root];
    let mut closed: Vec<(usize, Stats)> = Vec::new();
    let mut go_left = vec![false; n];

    while open.len() + closed.len() < p.max_leaves.max(1) {
        // best-gain-first; ties go to the earliest-created leaf
        let mut pick: Option<usize> = None;
        for (k, leaf) in open.iter().enumerate() {
            if let Some(b) = leaf.best {
                if pick.is_none_or(|q| b.gain > open[q].best.expect("candidate").gain) {
                    pick = Some(k);
                }
            }
        }
        let Some(k) = pick else { break };
        let leaf = open.remove(k);
        let split = leaf.best.expect("picked leaf has a split");

        let col = presorted.column(split.feature);
        let (lo, hi) = leaf.rows;
        for &i in &bufs.rows[lo..hi] {
            let v = col[i as usize];
            go_left[i as usize] = if is_missing(v) {
                split.missing_left
            } else {
                v < split.threshold
            };
        }
        let mid = partition_range(&mut bufs.rows, &mut bufs.scratch_rows, lo, hi, |&i| go_left[i as usize]);
        let lstats = stats_of(&bufs.rows[lo..mid], g, h);
        let rstats = stats_of(&bufs.rows[mid..hi], g, h);

        // the children of the last admissible split are never split again
        let last = open.len() + closed.len() + 2 >= p.max_leaves;
        let (mut lranges, mut rranges) = (Vec::new(), Vec::new());
        if !last {
            for (j, &(a, b)) in leaf.ranges.iter().enumerate() {
                let m = partition_range(&mut bufs.entries[j], &mut bufs.scratch, a, b, |e| go_left[e.row as usize]);
                lranges.push((a, m));
                rranges.push((m, b));
            }
        }

        let li = nodes.len();
        let ri = li + 1;
        nodes.push(TreeNode::Leaf {
            leaf_id: 0,
            value: 0.0,
        });
        nodes.push(TreeNode::Leaf {
            leaf_id: 0,
            value: 0.0,
        });
        nodes[leaf.node] = TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            missing_left: split.missing_left,
            left: li,
            right: ri,
            gain: split.gain,
        };
        for (node, rows, ranges, stats) in [(li, (lo, mid), lranges, lstats), (ri, (mid, hi), rranges, rstats)] {
            let mut child = OpenLeaf {
                node,
                rows,
                ranges,
                stats,
                best: None,
            };
            if !last {
                child.best = find_split(presorted, &bufs, &child, allowed, p);
            }
            if child.best.is_some() {
                open.push(child);
            } else {
                closed.push((node, stats));
            }
        }
    }

    let mut finals: Vec<(usize, Stats)> = closed;
    finals.extend(open.into_iter().map(|l| (l.node, l.stats)));
    // leaf ids follow node order so they do not depend on growth order
    finals.sort_by_key(|(node, _)| *node);
    for (leaf_id, (node, s)) in finals.iter().enumerate() {
        nodes[*node] = TreeNode::Leaf {
            leaf_id,
            value: -s.g / (s.h + p.lambda),
        };
    }
    Some(Tree {
        n_leaves: finals.len(),
        nodes,
    })
}
