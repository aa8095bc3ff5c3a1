//! Embedding + dense network over a flat parameter vector.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::gbdt::SCORE_CLAMP;

use super::MlpObjective;

/// Parameter layout and input preprocessing. Parameters live in a separate
/// flat vector so snapshots are plain copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Matrix columns fed through embeddings, with their cardinality.
    pub cat_cols: Vec<(usize, usize)>,
    /// Matrix columns fed as standardized numerics.
    pub num_cols: Vec<usize>,
    pub num_mean: Vec<f64>,
    pub num_std: Vec<f64>,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub objective: MlpObjective,
}

/// Offsets of one dense layer inside the parameter vector.
#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Network {
    /// Offset of embedding table `k` (rows `card + 1`).
    fn emb_offset(&self, k: usize) -> usize {
        self.cat_cols[..k]
            .iter()
            .map(|(_, c)| (c + 1) * self.embedding_dim)
            .sum()
    }

    fn emb_total(&self) -> usize {
        self.emb_offset(self.cat_cols.len())
    }

    pub fn input_width(&self) -> usize {
        self.cat_cols.len() * self.embedding_dim + self.num_cols.len()
    }

    fn layers(&self) -> Vec<Dense> {
        let mut out = Vec::new();
        let mut off = self.emb_total();
        let mut n_in = self.input_width();
        for &n_out in self.hidden.iter().chain(std::iter::once(&1)) {
            out.push(Dense {
                w: off,
                b: off + n_in * n_out,
                n_in,
                n_out,
            });
            off += n_in * n_out + n_out;
            n_in = n_out;
        }
        out
    }

    pub fn n_params(&self) -> usize {
        let l = self.layers();
        let last = l.last().unwrap();
        last.b + last.n_out
    }

    /// Row index of a category code inside its table; unseen codes and
    /// missing values map to row 0.
    pub fn embed_row(code: f64, cardinality: usize) -> usize {
        if code.is_nan() || code < 0.0 || code.fract() != 0.0 || code as usize >= cardinality {
            0
        } else {
            code as usize + 1
        }
    }

    /// Embedding vector of `code` in table `k`.
    pub fn embed_lookup<'p>(&self, params: &'p [f64], k: usize, code: f64) -> &'p [f64] {
        let d = self.embedding_dim;
        let row = Self::embed_row(code, self.cat_cols[k].1);
        let off = self.emb_offset(k) + row * d;
        &params[off..off + d]
    }

    /// He-style initialization: dense weights `N(0, 2/n_in)`, zero biases,
    /// embeddings `N(0, 0.05²)`.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        let emb = Normal::new(0.0, 0.05).unwrap();
        for v in &mut p[..self.emb_total()] {
            *v = emb.sample(rng);
        }
        for l in self.layers() {
            let std = (2.0 / l.n_in.max(1) as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            for v in &mut p[l.w..l.b] {
                *v = dist.sample(rng);
            }
        }
        p
    }

    /// Input vector of one matrix row.
    fn input(&self, params: &[f64], row: &[f64], x: &mut Vec<f64>) {
        x.clear();
        for (k, &(c, _)) in self.cat_cols.iter().enumerate() {
            x.extend_from_slice(self.embed_lookup(params, k, row[c]));
        }
        for (j, &c) in self.num_cols.iter().enumerate() {
            let v = row[c];
            x.push(if v.is_nan() { 0.0 } else { (v - self.num_mean[j]) / self.num_std[j] });
        }
    }

    /// Raw output (before the link) of one row.
    pub fn forward(&self, params: &[f64], row: &[f64]) -> f64 {
        let mut x = Vec::with_capacity(self.input_width());
        self.input(params, row, &mut x);
        let layers = self.layers();
        let n_layers = layers.len();
        for (li, l) in layers.iter().enumerate() {
            let mut y = params[l.b..l.b + l.n_out].to_vec();
            for i in 0..l.n_in {
                let xi = x[i];
                if xi == 0.0 {
                    continue;
                }
                let w = &params[l.w + i * l.n_out..l.w + (i + 1) * l.n_out];
                for (yo, wo) in y.iter_mut().zip(w) {
                    *yo += xi * wo;
                }
            }
            if li + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        x[0]
    }

    /// Prediction on the response scale.
    pub fn predict(&self, params: &[f64], row: &[f64]) -> f64 {
        let f = self.forward(params, row);
        match self.objective {
            MlpObjective::SquaredError => f,
            MlpObjective::Tweedie { .. } => f.clamp(-SCORE_CLAMP, SCORE_CLAMP).exp(),
        }
    }

    /// Per-example loss and its derivative with respect to the raw output.
    pub fn loss_and_dout(&self, out: f64, y: f64) -> (f64, f64) {
        match self.objective {
            MlpObjective::SquaredError => {
                let e = out - y;
                (e * e, 2.0 * e)
            }
            MlpObjective::Tweedie { power: p } => {
                let f = out.clamp(-SCORE_CLAMP, SCORE_CLAMP);
                let a = ((1.0 - p) * f).exp();
                let b = ((2.0 - p) * f).exp();
                (-y * a / (1.0 - p) + b / (2.0 - p), -y * a + b)
            }
        }
    }

    /// Mean loss over `rows` and its gradient with respect to `params`.
    pub fn loss_and_grad(&self, params: &[f64], rows: &[&[f64]], y: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; params.len()];
        let layers = self.layers();
        let n_layers = layers.len();
        let mut total = 0.0;
        let mut x0 = Vec::with_capacity(self.input_width());
        for (row, &target) in rows.iter().zip(y) {
            self.input(params, row, &mut x0);
            // Forward, keeping every layer's post-activation.
            let mut acts: Vec<Vec<f64>> = vec![x0.clone()];
            for (li, l) in layers.iter().enumerate() {
                let x = acts.last().unwrap();
                let mut z = params[l.b..l.b + l.n_out].to_vec();
                for i in 0..l.n_in {
                    let w = &params[l.w + i * l.n_out..l.w + (i + 1) * l.n_out];
                    for (zo, wo) in z.iter_mut().zip(w) {
                        *zo += x[i] * wo;
                    }
                }
                if li + 1 < n_layers {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(z);
            }
            let out = acts[n_layers][0];
            let (loss, dout) = self.loss_and_dout(out, target);
            total += loss;

            // Backward.
            let mut delta = vec![dout];
            for li in (0..n_layers).rev() {
                let l = layers[li];
                let x = &acts[li];
                for o in 0..l.n_out {
                    grad[l.b + o] += delta[o];
                }
                let mut dx = vec![0.0; l.n_in];
                for i in 0..l.n_in {
                    let w = &params[l.w + i * l.n_out..l.w + (i + 1) * l.n_out];
                    let gw = &mut grad[l.w + i * l.n_out..l.w + (i + 1) * l.n_out];
                    let mut s = 0.0;
                    for o in 0..l.n_out {
                        gw[o] += x[i] * delta[o];
                        s += w[o] * delta[o];
                    }
                    dx[i] = s;
                }
                if li > 0 {
                    // ReLU derivative of the previous layer's output.
                    for (d, a) in dx.iter_mut().zip(x) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                delta = dx;
            }
            // Embedding rows receive the input gradient slice.
            let d = self.embedding_dim;
            for (k, &(c, card)) in self.cat_cols.iter().enumerate() {
                let off = self.emb_offset(k) + Self::embed_row(row[c], card) * d;
                for j in 0..d {
                    grad[off + j] += delta[k * d + j];
                }
            }
        }
        let n = rows.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }
}
