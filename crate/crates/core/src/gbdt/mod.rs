//! Histogram-based gradient-boosted regression trees.
//!
//! Trees are grown leaf-wise with the second-order gain
//! `G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)` and λ = 1. The default
//! objective is Tweedie with a log link.

mod binning;
mod io;
mod objective;
mod tree;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{store_code_column, FeatureMatrix};

pub use binning::{build_histograms, fit_mapper, BinMapper, BinnedDataset};
pub use objective::{mean_tweedie_deviance, tweedie_deviance, tweedie_grad_hess, tweedie_loss, SCORE_CLAMP};
pub use tree::{grow_tree, Node, Tree, TreeConfig};

/// Default Tweedie power of the loss utility.
pub const DEFAULT_LOSS_POWER: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Tweedie,
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub objective: Objective,
    pub tweedie_variance_power: f64,
    pub learning_rate: f64,
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub min_sum_hessian_in_leaf: f64,
    pub lambda_l2: f64,
    pub max_depth: Option<usize>,
    pub feature_fraction: f64,
    pub subsample: f64,
    pub subsample_freq: usize,
    pub max_bin: usize,
    pub n_estimators: usize,
    /// Start from the link of the target mean instead of score 0.
    pub boost_from_average: bool,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams::desk()
    }
}

impl GbdtParams {
    /// Small profile for tests and laptop-scale runs.
    pub fn desk() -> Self {
        GbdtParams {
            objective: Objective::Tweedie,
            tweedie_variance_power: 1.1,
            learning_rate: 0.1,
            num_leaves: 31,
            min_data_in_leaf: 20,
            min_sum_hessian_in_leaf: 1e-3,
            lambda_l2: 1.0,
            max_depth: None,
            feature_fraction: 0.8,
            subsample: 0.8,
            subsample_freq: 1,
            max_bin: 100,
            n_estimators: 100,
            boost_from_average: true,
            seed: 0,
        }
    }

    /// Full-scale profile of the single global model.
    pub fn global_profile() -> Self {
        GbdtParams {
            objective: Objective::Tweedie,
            tweedie_variance_power: 1.1,
            learning_rate: 0.03,
            num_leaves: 2047,
            min_data_in_leaf: 4095,
            feature_fraction: 0.5,
            subsample: 0.5,
            subsample_freq: 1,
            max_bin: 100,
            n_estimators: 1300,
            boost_from_average: false,
            ..GbdtParams::desk()
        }
    }

    /// Full-scale profile of the per-store models; `n_estimators` is
    /// overridden per store by [`per_store_estimators`].
    pub fn per_store_profile() -> Self {
        GbdtParams {
            objective: Objective::Tweedie,
            tweedie_variance_power: 1.1,
            learning_rate: 0.02,
            num_leaves: 2047,
            min_data_in_leaf: 4095,
            feature_fraction: 0.6,
            subsample: 0.6,
            subsample_freq: 1,
            max_bin: 100,
            n_estimators: 1000,
            boost_from_average: false,
            ..GbdtParams::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        frac("feature_fraction", self.feature_fraction)?;
        frac("subsample", self.subsample)?;
        if self.num_leaves < 2 {
            return Err(Error::Config("num_leaves must be at least 2".into()));
        }
        if !(2..=255).contains(&self.max_bin) {
            return Err(Error::Config("max_bin must lie in 2..=255".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.objective == Objective::Tweedie {
            objective::check_power(self.tweedie_variance_power).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Tree counts of the per-store models at full scale.
pub fn per_store_estimators() -> BTreeMap<String, usize> {
    [
        ("CA_1", 700),
        ("CA_2", 1100),
        ("CA_3", 1600),
        ("CA_4", 1500),
        ("TX_1", 1000),
        ("TX_2", 1000),
        ("TX_3", 1000),
        ("WI_1", 1600),
        ("WI_2", 1500),
        ("WI_3", 1100),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub schema_hash: u64,
    pub n_features: usize,
}

impl GbdtModel {
    fn check(&self, matrix: &FeatureMatrix) -> Result<()> {
        if matrix.schema_hash() != self.schema_hash {
            return Err(Error::SchemaMismatch {
                expected: self.schema_hash,
                found: matrix.schema_hash(),
            });
        }
        Ok(())
    }

    /// Raw scores using the first `n_trees` trees.
    pub fn predict_raw_n(&self, matrix: &FeatureMatrix, n_trees: usize) -> Result<Vec<f64>> {
        self.check(matrix)?;
        let trees = &self.trees[..n_trees.min(self.trees.len())];
        Ok((0..matrix.n_rows())
            .map(|r| {
                let row = matrix.row(r);
                self.base_score + trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
            })
            .collect())
    }

    pub fn predict_raw(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_raw_n(matrix, self.trees.len())
    }

    fn link_inverse(&self, f: f64) -> f64 {
        match self.params.objective {
            Objective::Tweedie => f.clamp(-SCORE_CLAMP, SCORE_CLAMP).exp(),
            Objective::SquaredError => f,
        }
    }

    /// Predictions on the response scale (strictly positive for Tweedie).
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .predict_raw(matrix)?
            .into_iter()
            .map(|f| self.link_inverse(f))
            .collect())
    }

    /// Predictions using the first `n_trees` trees.
    pub fn predict_n(&self, matrix: &FeatureMatrix, n_trees: usize) -> Result<Vec<f64>> {
        Ok(self
            .predict_raw_n(matrix, n_trees)?
            .into_iter()
            .map(|f| self.link_inverse(f))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        io::encode(self)
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        io::decode(bytes, name)
    }
}

fn grad_hess(objective: Objective, p: f64, y: &[f64], score: &[f64], grad: &mut [f64], hess: &mut [f64]) {
    for i in 0..y.len() {
        let (g, h) = match objective {
            Objective::Tweedie => tweedie_grad_hess(y[i], score[i], p),
            Objective::SquaredError => (score[i] - y[i], 1.0),
        };
        grad[i] = g;
        hess[i] = h;
    }
}

/// Fit a boosted ensemble on all rows of `matrix`.
pub fn fit(matrix: &FeatureMatrix, params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    let n = matrix.n_rows();
    if n == 0 {
        return Err(Error::validation("cannot fit on an empty matrix"));
    }
    let y = matrix.target();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("targets must be finite"));
    }
    if params.objective == Objective::Tweedie && y.iter().any(|v| *v < 0.0) {
        return Err(Error::validation("tweedie targets must be non-negative"));
    }
    let data = build_histograms(matrix, params.max_bin)?;
    let mean = y.iter().sum::<f64>() / n as f64;
    let base_score = match (params.boost_from_average, params.objective) {
        (false, _) => 0.0,
        (true, Objective::Tweedie) => mean.max(1e-12).ln(),
        (true, Objective::SquaredError) => mean,
    };
    let cfg = TreeConfig {
        num_leaves: params.num_leaves,
        min_data_in_leaf: params.min_data_in_leaf.max(1),
        min_sum_hessian: params.min_sum_hessian_in_leaf,
        lambda: params.lambda_l2,
        max_depth: params.max_depth,
        shrinkage: params.learning_rate,
    };
    let n_feat = matrix.n_cols();
    let n_pick = ((params.feature_fraction * n_feat as f64).ceil() as usize).clamp(1, n_feat.max(1));

    let mut score = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut bag: Vec<u32> = (0..n as u32).collect();
    for it in 0..params.n_estimators {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(it as u64);
        if params.subsample < 1.0 && params.subsample_freq > 0 && it % params.subsample_freq == 0 {
            bag = (0..n as u32)
                .filter(|_| rng.random::<f64>() < params.subsample)
                .collect();
            if bag.is_empty() {
                bag.push(rng.random_range(0..n as u32));
            }
        }
        let features: Vec<usize> = if n_pick < n_feat {
            let mut f = sample(&mut rng, n_feat, n_pick).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..n_feat).collect()
        };
        grad_hess(params.objective, params.tweedie_variance_power, y, &score, &mut grad, &mut hess);
        let tree = grow_tree(&data, bag.clone(), &features, &grad, &hess, &cfg);
        for (r, s) in score.iter_mut().enumerate() {
            *s += tree.predict_binned(&data, r);
        }
        if score.iter().any(|s| !s.is_finite()) {
            return Err(Error::Divergence(format!("non-finite score after tree {it}")));
        }
        trees.push(tree);
    }
    Ok(GbdtModel {
        params: params.clone(),
        base_score,
        trees,
        schema_hash: matrix.schema_hash(),
        n_features: n_feat,
    })
}

/// One model per store, routed by the store-code column.
#[derive(Debug, Clone, PartialEq)]
pub struct PerStoreModel {
    pub store_column: usize,
    /// (store code, store id, model), ascending by code.
    pub models: Vec<(u32, String, GbdtModel)>,
}

impl PerStoreModel {
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        let mut out = vec![f64::NAN; matrix.n_rows()];
        for (code, name, model) in &self.models {
            let rows: Vec<usize> = (0..matrix.n_rows())
                .filter(|&r| matrix.get(r, self.store_column) == *code as f64)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let preds = model.predict(&matrix.select_rows(&rows))?;
            for (r, p) in rows.into_iter().zip(preds) {
                out[r] = p;
            }
            log::trace!("store {name}: predicted");
        }
        if let Some(r) = out.iter().position(|v| v.is_nan()) {
            return Err(Error::missing(
                "store model",
                format!("code {}", matrix.get(r, self.store_column)),
            ));
        }
        Ok(out)
    }

    pub fn get(&self, store: &str) -> Option<&GbdtModel> {
        self.models.iter().find(|m| m.1 == store).map(|m| &m.2)
    }
}

/// Fit one model per store on that store's rows. `stores[code]` names the
/// store with that code; `estimators` overrides `n_estimators` per store.
pub fn fit_per_store(
    matrix: &FeatureMatrix,
    params: &GbdtParams,
    stores: &[String],
    estimators: &BTreeMap<String, usize>,
) -> Result<PerStoreModel> {
    let col = store_code_column(matrix.columns())
        .ok_or_else(|| Error::Config("per-store models need the store code feature".into()))?;
    let mut models = Vec::with_capacity(stores.len());
    for (code, name) in stores.iter().enumerate() {
        let rows: Vec<usize> = (0..matrix.n_rows())
            .filter(|&r| matrix.get(r, col) == code as f64)
            .collect();
        if rows.is_empty() {
            return Err(Error::validation(format!("store {name} has no training rows")));
        }
        let p = GbdtParams {
            n_estimators: estimators.get(name).copied().unwrap_or(params.n_estimators),
            ..params.clone()
        };
        log::info!("fitting store {name}: {} rows, {} trees", rows.len(), p.n_estimators);
        models.push((code as u32, name.clone(), fit(&matrix.select_rows(&rows), &p)?));
    }
    Ok(PerStoreModel {
        store_column: col,
        models,
    })
}
