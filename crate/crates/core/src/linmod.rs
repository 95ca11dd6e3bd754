//! Binary logistic regression with optional L1 or L2 penalty.
//!
//! Objective: mean log-loss + `(1/(2c))·‖w‖²` (L2) or `(1/c)·‖w‖₁` (L1); the
//! intercept is never penalised. L2 and unpenalised fits use L-BFGS with an
//! Armijo line search, L1 fits use proximal gradient with backtracking. Both
//! only accept steps that do not increase the objective.
//!
//! Inputs go through the [`Design`] trait so the calibrator can pass its
//! one-hot leaf matrix without densifying it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{clamp_prob, sigmoid, Real};

pub const PROBA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    None,
    L1,
    L2,
}

/// Row access used by the solvers.
pub trait Design<T: Real>: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn row_dot(&self, i: usize, w: &[T]) -> T;
    /// `out += scale * row_i`
    fn add_row(&self, i: usize, scale: T, out: &mut [T]);
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::Dimension {
                expected: n_rows * n_cols,
                got: data.len(),
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::Dimension {
                    expected: n_cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), n_cols, data)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = T> + '_ {
        (0..self.n_rows).map(move |i| self.data[i * self.n_cols + j])
    }

    /// Keep only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Self {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            data,
        }
    }
}

impl<T: Real> Design<T> for DenseMatrix<T> {
    fn n_rows(&self) -> usize {
        self.n_rows
    }
    fn n_cols(&self) -> usize {
        self.n_cols
    }
    fn row_dot(&self, i: usize, w: &[T]) -> T {
        self.row(i).iter().zip(w).map(|(&a, &b)| a * b).sum()
    }
    fn add_row(&self, i: usize, scale: T, out: &mut [T]) {
        for (o, &a) in out.iter_mut().zip(self.row(i)) {
            *o += scale * a;
        }
    }
}

/// Sparse 0/1 matrix in compressed-row form; each row lists its active columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseBinary {
    pub n_cols: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl SparseBinary {
    pub fn from_rows(n_cols: usize, rows: impl IntoIterator<Item = Vec<u32>>) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        for r in rows {
            indices.extend(r.into_iter().filter(|&c| (c as usize) < n_cols));
            offsets.push(indices.len());
        }
        Self {
            n_cols,
            offsets,
            indices,
        }
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }
}

impl<T: Real> Design<T> for SparseBinary {
    fn n_rows(&self) -> usize {
        SparseBinary::n_rows(self)
    }
    fn n_cols(&self) -> usize {
        self.n_cols
    }
    fn row_dot(&self, i: usize, w: &[T]) -> T {
        self.row(i).iter().map(|&c| w[c as usize]).sum()
    }
    fn add_row(&self, i: usize, scale: T, out: &mut [T]) {
        for &c in self.row(i) {
            out[c as usize] += scale;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig<T> {
    pub penalty: Penalty,
    /// Inverse regularisation strength.
    pub c: T,
    pub tol: T,
    pub max_iter: usize,
    /// Fit on columns scaled to mean 0 / variance 1 and report weights on the
    /// original scale. Only meaningful for dense inputs.
    pub standardize: bool,
}

impl<T: Real> Default for LogisticConfig<T> {
    fn default() -> Self {
        Self {
            penalty: Penalty::L2,
            c: T::one(),
            tol: T::lit(1e-6),
            max_iter: 500,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub penalty: Penalty,
    pub c: T,
    pub converged: bool,
    pub iterations: usize,
    /// Weights on the standardised scale, when the fit standardised.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardized_weights: Option<Vec<T>>,
}

impl<T: Real> LogisticModel<T> {
    pub fn zero(n_features: usize) -> Self {
        Self {
            weights: vec![T::zero(); n_features],
            intercept: T::zero(),
            penalty: Penalty::None,
            c: T::one(),
            converged: true,
            iterations: 0,
            standardized_weights: None,
        }
    }

    pub fn linear_score<D: Design<T>>(&self, x: &D, i: usize) -> T {
        x.row_dot(i, &self.weights) + self.intercept
    }

    /// `sigmoid(x·w + b)` clamped to `[1e-12, 1 − 1e-12]`.
    pub fn predict_proba<D: Design<T>>(&self, x: &D) -> Result<Vec<T>> {
        if x.n_cols() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                got: x.n_cols(),
            });
        }
        let eps = T::lit(PROBA_EPS);
        Ok((0..x.n_rows())
            .map(|i| clamp_prob(sigmoid(self.linear_score(x, i)), eps))
            .collect())
    }

    /// Score a single dense row.
    pub fn predict_row(&self, row: &[T]) -> T {
        let z: T = row.iter().zip(&self.weights).map(|(&a, &b)| a * b).sum::<T>() + self.intercept;
        clamp_prob(sigmoid(z), T::lit(PROBA_EPS))
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus<T: Real>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Smooth part of the objective and its gradient at `(w, b)`.
///
/// For [`Penalty::L2`] the ridge term is included; for [`Penalty::L1`] only the
/// mean log-loss is returned (the L1 term is handled by the proximal step).
pub fn objective_and_gradient<T: Real, D: Design<T>>(
    x: &D,
    y: &[u8],
    w: &[T],
    b: T,
    penalty: Penalty,
    c: T,
) -> (T, Vec<T>, T) {
    let n = T::from_count(x.n_rows());
    let mut grad = vec![T::zero(); w.len()];
    let mut gb = T::zero();
    let mut loss = T::zero();
    for (i, &yi) in y.iter().enumerate() {
        let z = x.row_dot(i, w) + b;
        let yf = T::lit(yi as f64);
        loss += softplus(z) - yf * z;
        let r = (sigmoid(z) - yf) / n;
        x.add_row(i, r, &mut grad);
        gb += r;
    }
    loss /= n;
    if penalty == Penalty::L2 {
        let inv_c = T::one() / c;
        let sq: T = w.iter().map(|&v| v * v).sum();
        loss += sq * inv_c / T::lit(2.0);
        for (g, &v) in grad.iter_mut().zip(w) {
            *g += v * inv_c;
        }
    }
    (loss, grad, gb)
}

/// Full penalised objective (including the L1 term).
pub fn objective<T: Real, D: Design<T>>(
    x: &D,
    y: &[u8],
    w: &[T],
    b: T,
    penalty: Penalty,
    c: T,
) -> T {
    let (f, _, _) = objective_and_gradient(x, y, w, b, penalty, c);
    if penalty == Penalty::L1 {
        f + w.iter().map(|v| v.abs()).sum::<T>() / c
    } else {
        f
    }
}

struct Standardizer<T> {
    mean: Vec<T>,
    scale: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    fn fit(x: &DenseMatrix<T>) -> Self {
        let n = T::from_count(x.n_rows.max(1));
        let mut mean = vec![T::zero(); x.n_cols];
        let mut scale = vec![T::one(); x.n_cols];
        for j in 0..x.n_cols {
            let m = x.column(j).sum::<T>() / n;
            let v = x.column(j).map(|a| (a - m) * (a - m)).sum::<T>() / n;
            mean[j] = m;
            if v > T::zero() {
                scale[j] = v.sqrt();
            }
        }
        Self { mean, scale }
    }

    fn apply(&self, x: &DenseMatrix<T>) -> DenseMatrix<T> {
        let mut data = x.data.clone();
        for row in data.chunks_mut(x.n_cols.max(1)) {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        DenseMatrix {
            n_rows: x.n_rows,
            n_cols: x.n_cols,
            data,
        }
    }
}

fn check_inputs<T: Real, D: Design<T>>(x: &D, y: &[u8], cfg: &LogisticConfig<T>) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::Dimension {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if !(cfg.c > T::zero()) {
        return Err(Error::InvalidArgument("c must be > 0".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("target must be 0/1".into()));
    }
    if pos == 0 || pos == y.len() {
        return Err(Error::Fit("logistic fit needs both classes".into()));
    }
    Ok(())
}

/// Fit on a dense matrix, standardising first when configured.
pub fn fit_logistic<T: Real>(
    x: &DenseMatrix<T>,
    y: &[u8],
    cfg: &LogisticConfig<T>,
) -> Result<LogisticModel<T>> {
    Ok(fit_logistic_traced(x, y, cfg)?.0)
}

/// Like [`fit_logistic`], also returning the objective after each accepted
/// iteration (on the scale the solver worked in).
pub fn fit_logistic_traced<T: Real>(
    x: &DenseMatrix<T>,
    y: &[u8],
    cfg: &LogisticConfig<T>,
) -> Result<(LogisticModel<T>, Vec<T>)> {
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("logistic input must be finite".into()));
    }
    if !cfg.standardize {
        return fit_design(x, y, cfg);
    }
    check_inputs(x, y, cfg)?;
    let st = Standardizer::fit(x);
    let xs = st.apply(x);
    let (mut model, trace) = fit_design(&xs, y, cfg)?;
    let std_w = model.weights.clone();
    let mut b = model.intercept;
    for j in 0..std_w.len() {
        model.weights[j] = std_w[j] / st.scale[j];
        b -= model.weights[j] * st.mean[j];
    }
    model.intercept = b;
    model.standardized_weights = Some(std_w);
    Ok((model, trace))
}

/// Fit on any [`Design`] without standardisation.
pub fn fit_design<T: Real, D: Design<T>>(
    x: &D,
    y: &[u8],
    cfg: &LogisticConfig<T>,
) -> Result<(LogisticModel<T>, Vec<T>)> {
    check_inputs(x, y, cfg)?;
    let p = x.n_cols();
    let state = match cfg.penalty {
        Penalty::L1 => proximal_gradient(x, y, cfg),
        Penalty::L2 | Penalty::None => lbfgs(x, y, cfg),
    };
    let mut weights = state.theta;
    let intercept = weights.pop().unwrap_or_else(T::zero);
    debug_assert_eq!(weights.len(), p);
    Ok((
        LogisticModel {
            weights,
            intercept,
            penalty: cfg.penalty,
            c: cfg.c,
            converged: state.converged,
            iterations: state.iterations,
            standardized_weights: None,
        },
        state.trace,
    ))
}

struct SolverState<T> {
    /// weights followed by the intercept
    theta: Vec<T>,
    converged: bool,
    iterations: usize,
    trace: Vec<T>,
}

fn eval<T: Real, D: Design<T>>(x: &D, y: &[u8], theta: &[T], cfg: &LogisticConfig<T>) -> (T, Vec<T>) {
    let p = theta.len() - 1;
    let (f, mut g, gb) = objective_and_gradient(x, y, &theta[..p], theta[p], cfg.penalty, cfg.c);
    g.push(gb);
    (f, g)
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| u * v).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

const LBFGS_MEMORY: usize = 10;

fn lbfgs<T: Real, D: Design<T>>(x: &D, y: &[u8], cfg: &LogisticConfig<T>) -> SolverState<T> {
    let dim = x.n_cols() + 1;
    let mut theta = vec![T::zero(); dim];
    let (mut f, mut g) = eval(x, y, &theta, cfg);
    let mut trace = vec![f];
    let mut s_hist: Vec<Vec<T>> = Vec::new();
    let mut y_hist: Vec<Vec<T>> = Vec::new();
    let c1 = T::lit(1e-4);
    let half = T::lit(0.5);

    for it in 0..cfg.max_iter {
        if norm(&g) < cfg.tol {
            return SolverState {
                theta,
                converged: true,
                iterations: it,
                trace,
            };
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, yv) in s_hist.iter().zip(&y_hist).rev() {
            let rho = T::one() / dot(yv, s);
            let a = rho * dot(s, &q);
            for (qi, &yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push((a, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(yv)) => dot(s, yv) / dot(yv, yv),
            _ => T::one() / norm(&g).max(T::one()),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, yv), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let bcoef = rho * dot(yv, &q);
            for (qi, &si) in q.iter_mut().zip(s) {
                *qi += (a - bcoef) * si;
            }
        }
        let mut dir: Vec<T> = q.iter().map(|&v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < T::zero()) {
            dir = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &dir);
            s_hist.clear();
            y_hist.clear();
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<T> = theta.iter().zip(&dir).map(|(&t, &d)| t + step * d).collect();
            let (fc, gc) = eval(x, y, &cand, cfg);
            if fc.is_finite() && fc <= f + c1 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= half;
        }
        let Some((cand, fc, gc)) = accepted else {
            // no descent possible at working precision
            let converged = norm(&g) < cfg.tol;
            return SolverState {
                theta,
                converged,
                iterations: it,
                trace,
            };
        };
        let s: Vec<T> = cand.iter().zip(&theta).map(|(&a, &b)| a - b).collect();
        let yv: Vec<T> = gc.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        if dot(&s, &yv) > T::lit(1e-12) * norm(&s) * norm(&yv) {
            if s_hist.len() == LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        let decrease = f - fc;
        theta = cand;
        f = fc;
        g = gc;
        trace.push(f);
        if decrease <= T::epsilon() * f.abs() && norm(&g) < cfg.tol.sqrt() {
            // stalled at machine precision close to the optimum
            return SolverState {
                theta,
                converged: true,
                iterations: it + 1,
                trace,
            };
        }
    }
    let converged = norm(&g) < cfg.tol;
    SolverState {
        theta,
        converged,
        iterations: cfg.max_iter,
        trace,
    }
}

fn soft_threshold<T: Real>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

fn proximal_gradient<T: Real, D: Design<T>>(
    x: &D,
    y: &[u8],
    cfg: &LogisticConfig<T>,
) -> SolverState<T> {
    let dim = x.n_cols() + 1;
    let p = dim - 1;
    let l1 = |th: &[T]| th[..p].iter().map(|v| v.abs()).sum::<T>() / cfg.c;
    let mut theta = vec![T::zero(); dim];
    let (mut f, mut g) = eval(x, y, &theta, cfg);
    let mut trace = vec![f + l1(&theta)];
    let mut step = T::one();
    let two = T::lit(2.0);

    for it in 0..cfg.max_iter {
        step *= two;
        let (cand, fc, gc) = loop {
            let mut cand: Vec<T> = theta.iter().zip(&g).map(|(&t, &gi)| t - step * gi).collect();
            for v in cand[..p].iter_mut() {
                *v = soft_threshold(*v, step / cfg.c);
            }
            let diff: Vec<T> = cand.iter().zip(&theta).map(|(&a, &b)| a - b).collect();
            let (fc, gc) = eval(x, y, &cand, cfg);
            let bound = f + dot(&g, &diff) + dot(&diff, &diff) / (two * step);
            if fc <= bound || step < T::lit(1e-20) {
                break (cand, fc, gc);
            }
            step /= two;
        };
        let moved = cand
            .iter()
            .zip(&theta)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt();
        let obj_new = fc + l1(&cand);
        if obj_new <= *trace.last().expect("trace") {
            theta = cand;
            f = fc;
            g = gc;
            trace.push(obj_new);
        }
        if moved < cfg.tol {
            return SolverState {
                theta,
                converged: true,
                iterations: it + 1,
                trace,
            };
        }
    }
    SolverState {
        theta,
        converged: false,
        iterations: cfg.max_iter,
        trace,
    }
}
