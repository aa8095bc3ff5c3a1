//! Feed-forward regressor with categorical embeddings and snapshot
//! averaging.
//!
//! Integer-coded categorical columns go through trainable embedding tables
//! (row 0 catches unseen codes); the remaining columns are standardized with
//! training-row statistics and missing values imputed to the mean. The
//! concatenation feeds ReLU hidden layers and a single linear output, passed
//! through `exp` for the Tweedie objective. Training is mini-batch momentum
//! SGD with step decay; the parameters after each of the final
//! `snapshots_to_keep` epochs are archived and averaged at prediction time.

mod network;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub use network::Network;

/// Training window of the recent-data preset: 17 periods of 28 days.
pub const RECENT_WINDOW_DAYS: usize = 17 * 28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MlpObjective {
    SquaredError,
    Tweedie { power: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub objective: MlpObjective,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate is multiplied by `lr_decay` every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    /// Gradient-norm clip applied before each update; 0 disables.
    pub clip_norm: f64,
    pub snapshots_to_keep: usize,
    pub seed: u64,
    /// Train only on the last `window_days` days present in the matrix.
    pub window_days: Option<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            embedding_dim: 4,
            hidden: vec![32, 16],
            objective: MlpObjective::SquaredError,
            epochs: 12,
            batch_size: 256,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.5,
            lr_step: 5,
            clip_norm: 5.0,
            snapshots_to_keep: 5,
            seed: 0,
            window_days: None,
        }
    }
}

impl MlpConfig {
    /// Three squared-error presets differing in hidden widths, trained on
    /// the most recent 17×28 days, five snapshots each.
    pub fn recent_presets() -> Vec<MlpConfig> {
        [vec![32, 16], vec![48, 24], vec![24, 12]]
            .into_iter()
            .enumerate()
            .map(|(i, hidden)| MlpConfig {
                hidden,
                objective: MlpObjective::SquaredError,
                window_days: Some(RECENT_WINDOW_DAYS),
                snapshots_to_keep: 5,
                seed: i as u64,
                ..MlpConfig::default()
            })
            .collect()
    }

    /// One Tweedie model on the full training window.
    pub fn full_preset() -> MlpConfig {
        MlpConfig {
            hidden: vec![32, 16],
            objective: MlpObjective::Tweedie { power: 1.5 },
            window_days: None,
            snapshots_to_keep: 1,
            seed: 100,
            ..MlpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 1 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if self.snapshots_to_keep < 1 {
            return Err(Error::Config("snapshots_to_keep must be at least 1".into()));
        }
        if self.epochs < self.snapshots_to_keep {
            return Err(Error::Config(format!(
                "{} epochs cannot produce {} snapshots",
                self.epochs, self.snapshots_to_keep
            )));
        }
        if self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("batch size and hidden widths must be positive".into()));
        }
        if let MlpObjective::Tweedie { power } = self.objective {
            if !(power > 1.0 && power < 2.0) {
                return Err(Error::Config(format!("tweedie power must lie in (1, 2), got {power}")));
            }
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning rate must be positive and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub network: Network,
    /// Archived parameter vectors, oldest first; the last is the final one.
    pub snapshots: Vec<Vec<f64>>,
    pub schema_hash: u64,
}

/// Network layout and standardization from a training matrix.
pub fn build_network(matrix: &FeatureMatrix, rows: &[usize], config: &MlpConfig) -> Network {
    let mut cat_cols = Vec::new();
    let mut num_cols = Vec::new();
    for (c, spec) in matrix.columns().iter().enumerate() {
        match spec.cardinality {
            Some(card) => cat_cols.push((c, card)),
            None => num_cols.push(c),
        }
    }
    let mut num_mean = Vec::with_capacity(num_cols.len());
    let mut num_std = Vec::with_capacity(num_cols.len());
    for &c in &num_cols {
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
        for &r in rows {
            let v = matrix.get(r, c);
            if !v.is_nan() {
                s += v;
                s2 += v * v;
                n += 1;
            }
        }
        let mean = if n > 0 { s / n as f64 } else { 0.0 };
        let var = if n > 0 { (s2 / n as f64 - mean * mean).max(0.0) } else { 0.0 };
        num_mean.push(mean);
        num_std.push(if var > 1e-12 { var.sqrt() } else { 1.0 });
    }
    Network {
        cat_cols,
        num_cols,
        num_mean,
        num_std,
        embedding_dim: config.embedding_dim,
        hidden: config.hidden.clone(),
        objective: config.objective,
    }
}

/// Rows of `matrix` inside the configured training window.
fn window_rows(matrix: &FeatureMatrix, config: &MlpConfig) -> Vec<usize> {
    let all = 0..matrix.n_rows();
    match (config.window_days, matrix.days().iter().max()) {
        (Some(w), Some(&last)) if last > 0 => {
            let first = (last as usize + 1).saturating_sub(w);
            all.filter(|&r| matrix.days()[r] as usize >= first).collect()
        }
        _ => all.collect(),
    }
}

/// Train one network.
pub fn fit(matrix: &FeatureMatrix, config: &MlpConfig) -> Result<MlpModel> {
    config.validate()?;
    let rows = window_rows(matrix, config);
    if rows.is_empty() {
        return Err(Error::validation("cannot fit on an empty matrix"));
    }
    let y = matrix.target();
    if rows.iter().any(|&r| !y[r].is_finite()) {
        return Err(Error::validation("targets must be finite"));
    }
    if matches!(config.objective, MlpObjective::Tweedie { .. }) && rows.iter().any(|&r| y[r] < 0.0) {
        return Err(Error::validation("tweedie targets must be non-negative"));
    }
    if (0..matrix.n_rows()).any(|r| matrix.row(r).iter().any(|v| v.is_infinite())) {
        return Err(Error::validation("feature matrix has infinite values"));
    }
    let net = build_network(matrix, &rows, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = net.init_params(&mut rng);
    let mut velocity = vec![0.0; params.len()];
    let mut snapshots = Vec::with_capacity(config.snapshots_to_keep);
    let mut order = rows.clone();
    for epoch in 0..config.epochs {
        let lr = config.learning_rate * config.lr_decay.powi((epoch / config.lr_step.max(1)) as i32);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let xs: Vec<&[f64]> = batch.iter().map(|&r| matrix.row(r)).collect();
            let ys: Vec<f64> = batch.iter().map(|&r| y[r]).collect();
            let (loss, mut grad) = net.loss_and_grad(&params, &xs, &ys);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, batch {bi} (lr {lr})"
                )));
            }
            if config.clip_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > config.clip_norm {
                    let s = config.clip_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - lr * g;
                *p += *v;
            }
            epoch_loss += loss * batch.len() as f64;
        }
        log::debug!("epoch {epoch}: mean loss {:.6}", epoch_loss / order.len() as f64);
        if epoch + config.snapshots_to_keep >= config.epochs {
            snapshots.push(params.clone());
        }
    }
    Ok(MlpModel {
        config: config.clone(),
        network: net,
        snapshots,
        schema_hash: matrix.schema_hash(),
    })
}

/// Train several networks concurrently.
pub fn fit_group(matrix: &FeatureMatrix, configs: &[MlpConfig]) -> Result<Vec<MlpModel>> {
    configs.par_iter().map(|c| fit(matrix, c)).collect()
}

impl MlpModel {
    fn check(&self, matrix: &FeatureMatrix) -> Result<()> {
        if matrix.schema_hash() != self.schema_hash {
            return Err(Error::SchemaMismatch {
                expected: self.schema_hash,
                found: matrix.schema_hash(),
            });
        }
        Ok(())
    }

    /// Predictions of snapshot `k`.
    pub fn predict_snapshot(&self, matrix: &FeatureMatrix, k: usize) -> Result<Vec<f64>> {
        self.check(matrix)?;
        let p = &self.snapshots[k];
        Ok((0..matrix.n_rows())
            .into_par_iter()
            .map(|r| self.network.predict(p, matrix.row(r)))
            .collect())
    }

    /// Predictions of the final parameters.
    pub fn predict_final(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_snapshot(matrix, self.snapshots.len() - 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(MAGIC, VERSION);
        write_body(&mut w, self);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION, name)?;
        let m = read_body(&mut r)?;
        r.finish()?;
        Ok(m)
    }
}

/// Arithmetic mean over every snapshot of every model.
pub fn predict_averaged(models: &[MlpModel], matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; matrix.n_rows()];
    let mut count = 0usize;
    for m in models {
        for k in 0..m.snapshots.len() {
            for (s, p) in sum.iter_mut().zip(m.predict_snapshot(matrix, k)?) {
                *s += p;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::validation("no snapshots to average"));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

const MAGIC: &[u8; 4] = b"M5NN";
const VERSION: u32 = 1;

pub(crate) fn write_body(w: &mut Writer, m: &MlpModel) {
    w.str(&toml::to_string(&m.config).expect("mlp config serializes"));
    w.u64(m.schema_hash);
    let n = &m.network;
    w.usize(n.cat_cols.len());
    for (c, card) in &n.cat_cols {
        w.usize(*c);
        w.usize(*card);
    }
    w.usize(n.num_cols.len());
    for c in &n.num_cols {
        w.usize(*c);
    }
    w.f64s(&n.num_mean);
    w.f64s(&n.num_std);
    w.usize(m.snapshots.len());
    for s in &m.snapshots {
        w.f64s(s);
    }
}

pub(crate) fn read_body(r: &mut Reader) -> Result<MlpModel> {
    let config: MlpConfig =
        toml::from_str(&r.str()?).map_err(|e| r.fail(&format!("bad config: {e}")))?;
    let schema_hash = r.u64()?;
    let n_cat = r.usize()?;
    let mut cat_cols = Vec::new();
    for _ in 0..n_cat {
        cat_cols.push((r.usize()?, r.usize()?));
    }
    let n_num = r.usize()?;
    let num_cols = (0..n_num).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let network = Network {
        cat_cols,
        num_cols,
        num_mean: r.f64s()?,
        num_std: r.f64s()?,
        embedding_dim: config.embedding_dim,
        hidden: config.hidden.clone(),
        objective: config.objective,
    };
    if network.num_mean.len() != n_num || network.num_std.len() != n_num {
        return Err(r.fail("standardization length mismatch"));
    }
    let k = r.usize()?;
    let mut snapshots = Vec::new();
    for _ in 0..k {
        let s = r.f64s()?;
        if s.len() != network.n_params() {
            return Err(r.fail("snapshot size does not match the network"));
        }
        snapshots.push(s);
    }
    if snapshots.is_empty() {
        return Err(r.fail("model has no snapshots"));
    }
    Ok(MlpModel {
        config,
        network,
        snapshots,
        schema_hash,
    })
}
