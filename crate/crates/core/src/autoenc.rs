//! Stacked autoencoder for compressing embedding vectors.
//!
//! Six dense layers, three encoding and three decoding, with `tanh` on every
//! hidden layer (the code layer included) and identity on the output. The
//! loss is the mean over samples of the per-coordinate squared error, and
//! training is plain minibatch gradient descent.

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Column, FeatureKind};
use crate::encode::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linmod::DenseMatrix;
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;
pub const N_LAYERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams<T> {
    pub version: u32,
    /// widths from input to output, symmetric
    pub layer_dims: Vec<usize>,
    /// one row-major `out × in` matrix per layer
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
    pub activation: String,
}

/// Gradient with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> Gradient<T> {
    /// Layer by layer, weights before biases.
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub seed: u64,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: T::lit(0.05),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog<T> {
    /// training-set MSE after each epoch
    pub mse: Vec<T>,
    pub epochs: usize,
    pub seed: u64,
}

fn check_dims(dims: &[usize], strict: bool) -> Result<()> {
    let n = dims.len();
    if n < 3 || dims.contains(&0) {
        return Err(Error::Config(format!("autoencoder dims {dims:?} need at least one hidden layer of positive width")));
    }
    if dims.iter().zip(dims.iter().rev()).any(|(a, b)| a != b) {
        return Err(Error::Config(format!("autoencoder dims {dims:?} are not symmetric")));
    }
    if strict && n != N_LAYERS + 1 {
        return Err(Error::Config(format!(
            "autoencoder dims {dims:?} give {} encoder layers, expected {}",
            (n - 1) / 2,
            N_LAYERS / 2
        )));
    }
    if dims[n / 2] >= dims[0] {
        return Err(Error::Config(format!(
            "code width {} must be below the input width {}",
            dims[n / 2],
            dims[0]
        )));
    }
    Ok(())
}

impl<T: Real> AutoencoderParams<T> {
    /// Xavier-uniform weights and zero biases for a six-layer network.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        Self::init_with_depth(dims, seed, true)
    }

    /// As [`Self::init`]; `strict = false` accepts any symmetric depth.
    pub fn init_with_depth(dims: &[usize], seed: u64, strict: bool) -> Result<Self> {
        check_dims(dims, strict)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| T::lit(rng.gen_range(-r..r))).collect());
            biases.push(vec![T::zero(); fan_out]);
        }
        Ok(Self {
            version: FORMAT_VERSION,
            layer_dims: dims.to_vec(),
            weights,
            biases,
            activation: "tanh".into(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn code_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() / 2]
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, input first.
    fn activations(&self, x: &[T]) -> Vec<Vec<T>> {
        let last = self.n_layers() - 1;
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let a = &acts[l];
            let w = &self.weights[l];
            let out: Vec<T> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = self.biases[l][o] + row.iter().zip(a).map(|(&p, &q)| p * q).sum::<T>();
                    if l == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// `(code, reconstruction)`.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_input(x)?;
        let mut acts = self.activations(x);
        let recon = acts.pop().expect("output layer");
        Ok((acts.swap_remove(self.n_layers() / 2), recon))
    }

    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x)?.0)
    }

    fn check_data(&self, data: &DenseMatrix<T>) -> Result<()> {
        if data.n_cols != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: data.n_cols,
            });
        }
        Ok(())
    }

    /// Mean over rows of the mean squared coordinate error.
    pub fn mse(&self, data: &DenseMatrix<T>) -> Result<T> {
        self.check_data(data)?;
        if data.n_rows == 0 {
            return Ok(T::zero());
        }
        let d = T::from_count(self.input_dim());
        let mut total = T::zero();
        for i in 0..data.n_rows {
            let x = data.row(i);
            let recon = self.activations(x).pop().expect("output layer");
            total += recon.iter().zip(x).map(|(&r, &v)| (r - v) * (r - v)).sum::<T>() / d;
        }
        Ok(total / T::from_count(data.n_rows))
    }

    fn zero_gradient(&self) -> Gradient<T> {
        Gradient {
            weights: self.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    /// Loss over `rows` of `data` and its gradient by backpropagation.
    fn batch_gradient(&self, data: &DenseMatrix<T>, rows: &[usize]) -> (T, Gradient<T>) {
        let mut grad = self.zero_gradient();
        let d = T::from_count(self.input_dim());
        let scale = T::one() / (T::from_count(rows.len()) * d);
        let last = self.n_layers() - 1;
        let mut loss = T::zero();
        for &i in rows {
            let x = data.row(i);
            let acts = self.activations(x);
            // delta = dL/dz for the current layer
            let mut delta: Vec<T> = acts[last + 1]
                .iter()
                .zip(x)
                .map(|(&r, &v)| {
                    loss += (r - v) * (r - v) * scale;
                    T::lit(2.0) * (r - v) * scale
                })
                .collect();
            for l in (0..=last).rev() {
                let n_in = self.layer_dims[l];
                let a = &acts[l];
                for (o, &dz) in delta.iter().enumerate() {
                    grad.biases[l][o] += dz;
                    let gw = &mut grad.weights[l][o * n_in..(o + 1) * n_in];
                    for (g, &ai) in gw.iter_mut().zip(a) {
                        *g += dz * ai;
                    }
                }
                if l == 0 {
                    break;
                }
                let w = &self.weights[l];
                delta = (0..n_in)
                    .map(|k| {
                        let back: T = delta.iter().enumerate().map(|(o, &dz)| w[o * n_in + k] * dz).sum();
                        back * (T::one() - a[k] * a[k])
                    })
                    .collect();
            }
        }
        (loss, grad)
    }

    /// Mean-squared reconstruction loss over all rows and its gradient.
    pub fn loss_and_gradient(&self, data: &DenseMatrix<T>) -> Result<(T, Gradient<T>)> {
        self.check_data(data)?;
        if data.n_rows == 0 {
            return Err(Error::InvalidArgument("empty training data".into()));
        }
        let rows: Vec<usize> = (0..data.n_rows).collect();
        Ok(self.batch_gradient(data, &rows))
    }

    /// Parameters in the order of [`Gradient::flat`].
    pub fn flat(&self) -> Vec<T> {
        Gradient {
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
        .flat()
    }

    pub fn set_flat(&mut self, theta: &[T]) -> Result<()> {
        let total: usize = self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>();
        if theta.len() != total {
            return Err(Error::Dimension {
                expected: total,
                got: theta.len(),
            });
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = theta[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn step(&mut self, grad: &Gradient<T>, lr: T) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            for (p, &q) in w.iter_mut().zip(g) {
                *p -= lr * q;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grad.biases) {
            for (p, &q) in b.iter_mut().zip(g) {
                *p -= lr * q;
            }
        }
    }

    /// Minibatch gradient descent with rows reshuffled every epoch.
    pub fn train(&self, data: &DenseMatrix<T>, cfg: &TrainConfig<T>) -> Result<(Self, TrainLog<T>)> {
        self.check_data(data)?;
        if data.n_rows == 0 {
            return Err(Error::InvalidArgument("empty training data".into()));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate >= T::zero()) {
            return Err(Error::Config(
                "autoencoder training needs positive epochs and batch size and a non-negative learning rate".into(),
            ));
        }
        let mut p = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.n_rows).collect();
        let mut mse = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let (_, g) = p.batch_gradient(data, batch);
                p.step(&g, cfg.learning_rate);
            }
            let e = p.mse(data)?;
            if !e.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            debug!("autoencoder epoch {epoch}: mse {e}");
            mse.push(e);
        }
        Ok((
            p,
            TrainLog {
                mse,
                epochs: cfg.epochs,
                seed: cfg.seed,
            },
        ))
    }
}

impl<T: Real + Serialize + serde::de::DeserializeOwned> AutoencoderParams<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        if p.version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported autoencoder format version {}", p.version)));
        }
        check_dims(&p.layer_dims, false)?;
        let shapes_ok = p.weights.len() == p.layer_dims.len() - 1
            && p.biases.len() == p.weights.len()
            && p.layer_dims.windows(2).zip(p.weights.iter().zip(&p.biases)).all(|(d, (w, b))| w.len() == d[0] * d[1] && b.len() == d[1]);
        if !shapes_ok {
            return Err(Error::Config("autoencoder weight shapes do not match layer_dims".into()));
        }
        Ok(p)
    }
}

/// Stack the vectors of `table` in key order.
pub fn embedding_matrix(table: &EmbeddingTable) -> DenseMatrix<f64> {
    let data = table.vectors.values().flatten().copied().collect();
    DenseMatrix {
        n_rows: table.len(),
        n_cols: table.dim,
        data,
    }
}

/// Codes of every vector in `table`, in key order, as columns
/// `emb_0 … emb_{d−1}`.
pub fn encode_all(p: &AutoencoderParams<f64>, table: &EmbeddingTable) -> Result<(Vec<String>, Vec<Column>)> {
    if !table.is_empty() && table.dim != p.input_dim() {
        return Err(Error::Dimension {
            expected: p.input_dim(),
            got: table.dim,
        });
    }
    let mut values = vec![Vec::with_capacity(table.len()); p.code_dim()];
    for v in table.vectors.values() {
        for (col, c) in values.iter_mut().zip(p.encode(v)?) {
            col.push(c);
        }
    }
    let cols = values
        .into_iter()
        .enumerate()
        .map(|(k, values)| Column {
            name: format!("emb_{k}"),
            kind: FeatureKind::Embedding,
            values,
            dictionary: None,
        })
        .collect();
    Ok((table.vectors.keys().cloned().collect(), cols))
}

/// Per-row codes for a label column: each row gets the code of its label's
/// vector, or missing values when the label has no embedding.
pub fn encode_labels<S: AsRef<str>>(
    p: &AutoencoderParams<f64>,
    table: &EmbeddingTable,
    labels: &[Option<S>],
) -> Result<Vec<Column>> {
    let (keys, codes) = encode_all(p, table)?;
    let mut cols: Vec<Column> = codes
        .iter()
        .map(|c| Column {
            name: c.name.clone(),
            kind: FeatureKind::Embedding,
            values: Vec::with_capacity(labels.len()),
            dictionary: None,
        })
        .collect();
    for l in labels {
        let pos = l.as_ref().and_then(|s| keys.binary_search_by(|k| k.as_str().cmp(s.as_ref())).ok());
        for (out, src) in cols.iter_mut().zip(&codes) {
            out.values.push(pos.map_or(f64::NAN, |k| src.values[k]));
        }
    }
    Ok(cols)
}
