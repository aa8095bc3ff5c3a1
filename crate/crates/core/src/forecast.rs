//! Validation splits, model-group training and the recursive 28-day
//! forecast.
//!
//! A forecast starting at day `d` never sees observed sales from `d`
//! onwards: features for day `d + t` read observed sales up to `d − 1` and
//! the model's own clipped predictions for `d .. d + t − 1`.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use crate::binio::{Reader, Writer};
use crate::blend::{exponential_smooth, exponential_smooth_with_history, geometric_blend, role, BlendSpec, SmoothingMode};
use crate::config::{ModelsConfig, PipelineConfig, SmoothingConfig};
use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::features::{FeatureContext, FeatureMatrix, SalesView};
use crate::gbdt::{self, GbdtModel, PerStoreModel};
use crate::grid::{bottom_keys, ForecastGrid};
use crate::hierarchy::{build_hierarchy, compute_weights, HierarchyIndex, WeightTable};
use crate::metrics::{evaluate_point, HierarchyHistory, ScaleOptions, ScoreReport};
use crate::mlp::{self, predict_averaged, MlpModel};
use crate::HORIZON;

/// Days between the panel's last day and the last validation day of each
/// split.
pub const SPLIT_OFFSETS: [usize; 3] = [0, 28, 336];

/// Shortest training range a split may keep.
pub const MIN_TRAIN_DAYS: usize = 28;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationSplit {
    pub name: String,
    pub train: RangeInclusive<usize>,
    pub valid: RangeInclusive<usize>,
}

impl ValidationSplit {
    pub fn train_end(&self) -> usize {
        *self.train.end()
    }

    pub fn valid_start(&self) -> usize {
        *self.valid.start()
    }
}

/// The three validation splits counted back from day `n_days`. Split 1
/// trains up to the day before its window unless `strict_split_one` is set,
/// in which case it trains through `n_days − 1`. Splits that do not fit are
/// left out with a warning.
pub fn make_splits(n_days: usize, strict_split_one: bool) -> Vec<ValidationSplit> {
    let mut out = Vec::new();
    for (k, off) in SPLIT_OFFSETS.iter().enumerate() {
        let name = format!("split{}", k + 1);
        let Some(end) = n_days.checked_sub(*off).filter(|e| *e >= HORIZON) else {
            log::warn!("{name} omitted: panel of {n_days} days is too short");
            continue;
        };
        let start = end + 1 - HORIZON;
        let train_end = if k == 0 && strict_split_one { n_days - 1 } else { start - 1 };
        if train_end < MIN_TRAIN_DAYS {
            log::warn!("{name} omitted: only {train_end} training days before d_{start}");
            continue;
        }
        out.push(ValidationSplit {
            name,
            train: 1..=train_end,
            valid: start..=end,
        });
    }
    out
}

/// Anything that predicts one value per matrix row.
pub trait PointModel: Sync {
    fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>>;
}

impl PointModel for GbdtModel {
    fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        GbdtModel::predict(self, matrix)
    }
}

impl PointModel for PerStoreModel {
    fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        PerStoreModel::predict(self, matrix)
    }
}

/// Closure adapter, mainly for oracle models in tests.
pub struct FnModel<F>(pub F);

impl<F> PointModel for FnModel<F>
where
    F: Fn(&FeatureMatrix) -> Result<Vec<f64>> + Sync,
{
    fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        (self.0)(matrix)
    }
}

/// A trained model group.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedGroup {
    PerStore(PerStoreModel),
    Global(GbdtModel),
    /// Networks whose snapshots are averaged.
    Mlp(Vec<MlpModel>),
}

impl PointModel for FittedGroup {
    fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            FittedGroup::PerStore(m) => m.predict(matrix),
            FittedGroup::Global(m) => m.predict(matrix),
            FittedGroup::Mlp(m) => predict_averaged(m, matrix),
        }
    }
}

const GROUP_MAGIC: &[u8; 4] = b"M5MG";
const GROUP_VERSION: u32 = 1;

impl FittedGroup {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(GROUP_MAGIC, GROUP_VERSION);
        match self {
            FittedGroup::PerStore(m) => {
                w.u8(0);
                w.usize(m.store_column);
                w.usize(m.models.len());
                for (code, name, model) in &m.models {
                    w.u32(*code);
                    w.str(name);
                    w.bytes(&model.to_bytes());
                }
            }
            FittedGroup::Global(m) => {
                w.u8(1);
                w.bytes(&m.to_bytes());
            }
            FittedGroup::Mlp(ms) => {
                w.u8(2);
                w.usize(ms.len());
                for m in ms {
                    w.bytes(&m.to_bytes());
                }
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let mut r = Reader::open(bytes, GROUP_MAGIC, GROUP_VERSION, name)?;
        let g = match r.u8()? {
            0 => {
                let store_column = r.usize()?;
                let n = r.usize()?;
                let mut models = Vec::new();
                for _ in 0..n {
                    let code = r.u32()?;
                    let store = r.str()?;
                    models.push((code, store, GbdtModel::from_bytes(&r.bytes()?, name)?));
                }
                FittedGroup::PerStore(PerStoreModel { store_column, models })
            }
            1 => FittedGroup::Global(GbdtModel::from_bytes(&r.bytes()?, name)?),
            2 => {
                let n = r.usize()?;
                let mut models = Vec::new();
                for _ in 0..n {
                    models.push(MlpModel::from_bytes(&r.bytes()?, name)?);
                }
                FittedGroup::Mlp(models)
            }
            _ => return Err(r.fail("unknown model group tag")),
        };
        r.finish()?;
        Ok(g)
    }
}

/// Every enabled group trained on one range, with the feature context they
/// share.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub context: FeatureContext,
    /// Keyed by role name.
    pub groups: BTreeMap<String, FittedGroup>,
}

impl FittedModels {
    pub fn train_end(&self) -> usize {
        *self.context.train_days().end()
    }
}

/// Train every enabled group on days `first_day..=train_end`.
pub fn fit_models(config: &PipelineConfig, panel: &PanelDataset, train_end: usize) -> Result<FittedModels> {
    let first = config.training.first_day;
    if train_end < first {
        return Err(Error::validation(format!("training range {first}..={train_end} is empty")));
    }
    let context = FeatureContext::new(panel, &config.features, first..=train_end)?;
    let matrix = context.assemble_training(panel, first..=train_end)?;
    log::info!("training matrix: {} rows × {} columns through d_{train_end}", matrix.n_rows(), matrix.n_cols());
    let groups = fit_groups(&config.effective_models(), panel, &matrix)?;
    Ok(FittedModels { context, groups })
}

/// Train the enabled groups on one training matrix.
pub fn fit_groups(models: &ModelsConfig, panel: &PanelDataset, matrix: &FeatureMatrix) -> Result<BTreeMap<String, FittedGroup>> {
    let mut out = BTreeMap::new();
    if let Some(g) = &models.gbdt_store {
        let m = gbdt::fit_per_store(matrix, &g.params, &panel.vocab().store, &g.estimators)?;
        out.insert(role::GBDT_STORE.to_string(), FittedGroup::PerStore(m));
    }
    if let Some(p) = &models.gbdt_global {
        out.insert(role::GBDT_GLOBAL.to_string(), FittedGroup::Global(gbdt::fit(matrix, p)?));
    }
    for (name, g) in [(role::MLP_RECENT, &models.mlp_recent), (role::MLP_FULL, &models.mlp_full)] {
        if let Some(g) = g {
            out.insert(name.to_string(), FittedGroup::Mlp(mlp::fit_group(matrix, &g.members)?));
        }
    }
    Ok(out)
}

/// How sales after the forecast origin are supplied to the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    /// Own predictions fill the days after the origin.
    Recursive,
    /// Days after the origin are missing. Only meaningful when no feature
    /// reads them; used as an oracle for the recursive path.
    Direct,
}

/// A level-12 forecast with the number of feature values that were read
/// from the forecast buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub grid: ForecastGrid,
    pub buffer_reads: usize,
}

/// Forecast days `start .. start + horizon` one day at a time. Predictions
/// are clipped at 0; series not yet active get 0.
pub fn recursive_forecast(
    context: &FeatureContext,
    model: &dyn PointModel,
    panel: &PanelDataset,
    start: usize,
    horizon: usize,
    mode: InferenceMode,
) -> Result<ForecastRun> {
    if start < 2 || start - 1 > panel.n_days() {
        return Err(Error::validation(format!(
            "forecast origin d_{start} needs observed sales through d_{}",
            start.saturating_sub(1)
        )));
    }
    let n = panel.n_series();
    let mut buffer: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon); n];
    let mut buffer_reads = 0;
    for t in 0..horizon {
        let day = start + t;
        let matrix = {
            let view = match mode {
                InferenceMode::Recursive => SalesView::with_buffer(panel, start - 1, &buffer),
                InferenceMode::Direct => SalesView::truncated(panel, start - 1),
            };
            context.assemble_day(&view, day)?
        };
        buffer_reads += matrix.buffer_reads();
        let preds = model.predict(&matrix)?;
        if preds.len() != matrix.n_rows() {
            return Err(Error::validation("model returned the wrong number of predictions"));
        }
        let mut today = vec![0.0; n];
        for (r, p) in preds.into_iter().enumerate() {
            if p.is_nan() {
                return Err(Error::Divergence(format!("NaN forecast for day {day}")));
            }
            today[matrix.series()[r] as usize] = p.max(0.0);
        }
        for (b, v) in buffer.iter_mut().zip(today) {
            b.push(v);
        }
    }
    let grid = ForecastGrid::new(12, bottom_keys(panel.series()), start, buffer)?;
    Ok(ForecastRun { grid, buffer_reads })
}

/// Recursive forecasts of every fitted group.
pub fn forecast_groups(
    models: &FittedModels,
    panel: &PanelDataset,
    start: usize,
    horizon: usize,
) -> Result<BTreeMap<String, ForecastGrid>> {
    let mut out = BTreeMap::new();
    for (name, g) in &models.groups {
        let run = recursive_forecast(&models.context, g, panel, start, horizon, InferenceMode::Recursive)?;
        log::info!("{name}: forecast d_{start}.. ({} buffer reads)", run.buffer_reads);
        out.insert(name.clone(), run.grid);
    }
    Ok(out)
}

/// Geometric blend of the available groups (the spec is restricted to them).
pub fn blend_groups(grids: &BTreeMap<String, ForecastGrid>, spec: &BlendSpec) -> Result<ForecastGrid> {
    let names: Vec<&String> = grids.keys().collect();
    let spec = spec.restricted_to(&names)?;
    geometric_blend(grids, &spec)
}

/// Exponential smoothing per the config; history mode reads the observed
/// days right before the grid's first day.
pub fn smooth(grid: &ForecastGrid, panel: &PanelDataset, cfg: &SmoothingConfig) -> Result<ForecastGrid> {
    match cfg.mode {
        SmoothingMode::Horizon => exponential_smooth(grid, cfg.alpha),
        SmoothingMode::HistoryAndHorizon => {
            let end = (grid.first_day() - 1).min(panel.n_days());
            let begin = end.saturating_sub(cfg.history_days);
            let hist: Vec<&[f64]> = (0..panel.n_series()).map(|s| &panel.sales(s)[begin..end]).collect();
            exponential_smooth_with_history(grid, &hist, cfg.alpha)
        }
    }
}

/// Observed level-12 sales over `days` as a grid.
pub fn actual_grid(panel: &PanelDataset, days: RangeInclusive<usize>) -> Result<ForecastGrid> {
    if *days.end() > panel.n_days() || *days.start() == 0 {
        return Err(Error::validation(format!(
            "actuals for d_{}..d_{} are not observed",
            days.start(),
            days.end()
        )));
    }
    let rows = (0..panel.n_series())
        .map(|s| panel.sales(s)[*days.start() - 1..*days.end()].to_vec())
        .collect();
    ForecastGrid::new(12, bottom_keys(panel.series()), *days.start(), rows)
}

/// Weights, histories and actuals used to score one validation window.
#[derive(Debug, Clone)]
pub struct SplitScorer {
    pub index: HierarchyIndex,
    pub weights: WeightTable,
    pub history: HierarchyHistory,
    pub actual: ForecastGrid,
    pub opts: ScaleOptions,
}

impl SplitScorer {
    /// Weights and scales use the days before the validation window.
    pub fn new(panel: &PanelDataset, valid: RangeInclusive<usize>, opts: ScaleOptions) -> Result<Self> {
        let index = build_hierarchy(panel)?;
        let last = *valid.start() - 1;
        Ok(SplitScorer {
            weights: compute_weights(panel, &index, last)?,
            history: HierarchyHistory::from_panel(panel, &index, last)?,
            actual: actual_grid(panel, valid)?,
            index,
            opts,
        })
    }

    pub fn score(&self, forecast: &ForecastGrid) -> Result<ScoreReport> {
        evaluate_point(&self.index, &self.weights, &self.history, &self.actual, forecast, self.opts)
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub split: ValidationSplit,
    /// Per group, then the blend under the name `ensemble`.
    pub scores: Vec<(String, ScoreReport)>,
    pub ensemble: ForecastGrid,
}

impl SplitResult {
    pub fn total(&self, name: &str) -> Option<f64> {
        self.scores.iter().find(|(n, _)| n == name).map(|(_, r)| r.total)
    }
}

pub const ENSEMBLE: &str = "ensemble";

#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub splits: Vec<SplitResult>,
}

impl BacktestReport {
    /// Column names: the groups, then `ensemble`.
    pub fn columns(&self) -> Vec<String> {
        self.splits
            .first()
            .map(|s| s.scores.iter().map(|(n, _)| n.clone()).collect())
            .unwrap_or_default()
    }

    pub fn mean(&self, name: &str) -> f64 {
        let v: Vec<f64> = self.splits.iter().filter_map(|s| s.total(name)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Population standard deviation across splits.
    pub fn std(&self, name: &str) -> f64 {
        let v: Vec<f64> = self.splits.iter().filter_map(|s| s.total(name)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    /// `split,<col>...` rows, then `mean` and `std` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let cols = self.columns();
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Format {
            path: "<backtest report>".into(),
            message: e.to_string(),
        };
        let mut header = vec!["split".to_string()];
        header.extend(cols.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for s in &self.splits {
            let mut row = vec![s.split.name.clone()];
            row.extend(cols.iter().map(|c| format!("{}", s.total(c).unwrap_or(f64::NAN))));
            w.write_record(&row).map_err(err)?;
        }
        for (label, f) in [("mean", Self::mean as fn(&Self, &str) -> f64), ("std", Self::std)] {
            let mut row = vec![label.to_string()];
            row.extend(cols.iter().map(|c| format!("{}", f(self, c))));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<backtest report>".into(),
            source: e,
        })
    }
}

/// Score already-produced group forecasts on one split: each group, then
/// their blend (smoothed when the config applies smoothing to point output).
pub fn score_split(
    config: &PipelineConfig,
    panel: &PanelDataset,
    split: &ValidationSplit,
    grids: &BTreeMap<String, ForecastGrid>,
) -> Result<SplitResult> {
    let scorer = SplitScorer::new(panel, split.valid.clone(), config.training.scale_options())?;
    let mut scores = Vec::new();
    for (name, g) in grids {
        scores.push((name.clone(), scorer.score(g)?));
    }
    let mut ensemble = blend_groups(grids, &config.blend)?;
    if config.smoothing.apply_to_point {
        ensemble = smooth(&ensemble, panel, &config.smoothing)?;
    }
    scores.push((ENSEMBLE.to_string(), scorer.score(&ensemble)?));
    Ok(SplitResult {
        split: split.clone(),
        scores,
        ensemble,
    })
}

/// Train, forecast and score each split.
pub fn backtest(config: &PipelineConfig, panel: &PanelDataset, splits: &[ValidationSplit]) -> Result<BacktestReport> {
    let mut out = Vec::new();
    for split in splits {
        log::info!("{}: train ..=d_{}, validate {:?}", split.name, split.train_end(), split.valid);
        let models = fit_models(config, panel, split.train_end())?;
        let grids = forecast_groups(&models, panel, split.valid_start(), HORIZON)?;
        let r = score_split(config, panel, split, &grids)?;
        log::info!("{}: ensemble WRMSSE {:.5}", split.name, r.total(ENSEMBLE).unwrap_or(f64::NAN));
        out.push(r);
    }
    Ok(BacktestReport { splits: out })
}

/// The splits selected by the config.
pub fn configured_splits(config: &PipelineConfig, n_days: usize) -> Vec<ValidationSplit> {
    make_splits(n_days, config.training.strict_split_one)
        .into_iter()
        .filter(|s| {
            let k: usize = s.name.trim_start_matches("split").parse().unwrap_or(0);
            config.training.splits.contains(&k)
        })
        .collect()
}

/// Train every group on all observed days.
pub fn full_train(config: &PipelineConfig, panel: &PanelDataset) -> Result<FittedModels> {
    fit_models(config, panel, panel.n_days())
}

/// Blended (and optionally smoothed) level-12 point forecast for the
/// horizon after the panel's last day.
pub fn point_forecast(config: &PipelineConfig, panel: &PanelDataset, models: &FittedModels) -> Result<(ForecastGrid, BTreeMap<String, ForecastGrid>)> {
    let start = models.train_end() + 1;
    let grids = forecast_groups(models, panel, start, HORIZON)?;
    let mut blended = blend_groups(&grids, &config.blend)?;
    if config.smoothing.apply_to_point {
        blended = smooth(&blended, panel, &config.smoothing)?;
    }
    Ok((blended, grids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{test_panel, FeatureConfig, LagConfig, LagRollingConfig, RollingConfig, Toggle};

    #[test]
    fn canonical_split_ranges() {
        let s = make_splits(1941, false);
        let valid: Vec<_> = s.iter().map(|s| s.valid.clone()).collect();
        assert_eq!(valid, vec![1914..=1941, 1886..=1913, 1578..=1605]);
        let trains: Vec<_> = s.iter().map(|s| s.train_end()).collect();
        assert_eq!(trains, vec![1913, 1885, 1577]);
        assert_eq!(make_splits(1941, true)[0].train_end(), 1940);
        assert_eq!(make_splits(1941, true)[1].train_end(), 1885);
    }

    #[test]
    fn truncated_panel_splits_use_the_same_offsets() {
        for n in [700usize, 400, 1000, 1941] {
            let s = make_splits(n, false);
            assert_eq!(s.len(), 3);
            for (split, off) in s.iter().zip(SPLIT_OFFSETS) {
                assert_eq!(*split.valid.end(), n - off);
                assert_eq!(split.valid.clone().count(), 28);
                assert!(split.train_end() < split.valid_start());
            }
        }
        let v: Vec<_> = make_splits(700, false).iter().map(|s| s.valid.clone()).collect();
        assert_eq!(v, vec![673..=700, 645..=672, 337..=364]);
        let short = make_splits(100, false);
        assert_eq!(short.len(), 2);
        assert_eq!(short[1].valid, 45..=72);
        assert!(make_splits(40, false).is_empty());
    }

    fn lag_only(lags: Vec<usize>) -> FeatureConfig {
        FeatureConfig {
            price: Toggle { enabled: false },
            rolling: RollingConfig {
                windows: vec![],
                ..RollingConfig::default()
            },
            lag_rolling: LagRollingConfig {
                lags: vec![],
                windows: vec![],
            },
            lag: LagConfig { base: 28, k: lags.iter().map(|l| l - 28).collect() },
            ..FeatureConfig::default()
        }
    }

    #[test]
    fn lag_29_model_reproduces_shifted_history_without_buffer_reads() {
        let panel = test_panel();
        let cfg = lag_only(vec![29]);
        let ctx = FeatureContext::new(&panel, &cfg, 1..=100).unwrap();
        let col = ctx.columns().iter().position(|c| c.name == "lag_29").unwrap();
        let model = FnModel(move |m: &FeatureMatrix| {
            Ok((0..m.n_rows()).map(|r| m.get(r, col)).map(|v| if v.is_nan() { 0.0 } else { v }).collect())
        });
        let run = recursive_forecast(&ctx, &model, &panel, 101, 28, InferenceMode::Recursive).unwrap();
        assert_eq!(run.buffer_reads, 0);
        for s in 0..panel.n_series() {
            for t in 0..28 {
                let day = 101 + t;
                let expect = if panel.is_active(s, day) && panel.is_active(s, day - 29) {
                    panel.sale(s, day - 29)
                } else {
                    0.0
                };
                assert_eq!(run.grid.get(s, t), expect, "series {s} day {day}");
            }
        }
        let direct = recursive_forecast(&ctx, &model, &panel, 101, 28, InferenceMode::Direct).unwrap();
        assert!(direct.grid.values().iter().zip(run.grid.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn short_lags_read_the_buffer_and_ignore_later_actuals() {
        let panel = test_panel();
        let cfg = FeatureConfig {
            lag: LagConfig { base: 0, k: vec![1, 7] },
            ..lag_only(vec![])
        };
        let ctx = FeatureContext::new(&panel, &cfg, 1..=100).unwrap();
        let col = ctx.columns().iter().position(|c| c.name == "lag_1").unwrap();
        let model = FnModel(move |m: &FeatureMatrix| Ok((0..m.n_rows()).map(|r| 0.5 * m.get(r, col).max(0.0) + 0.25).collect()));
        let a = recursive_forecast(&ctx, &model, &panel, 101, 28, InferenceMode::Recursive).unwrap();
        assert!(a.buffer_reads > 0);
        // perturb every actual from the origin on
        let mut sales: Vec<Vec<f64>> = (0..panel.n_series()).map(|s| panel.sales(s).to_vec()).collect();
        for row in &mut sales {
            for v in &mut row[100..] {
                *v += 7.0;
            }
        }
        let perturbed = panel.with_sales(sales).unwrap();
        let b = recursive_forecast(&ctx, &model, &perturbed, 101, 28, InferenceMode::Recursive).unwrap();
        assert_eq!(a, b);
        // day 2 of the horizon reads day 1's prediction
        let s = (0..panel.n_series()).find(|&s| panel.is_active(s, 100)).unwrap();
        assert_eq!(a.grid.get(s, 1), 0.5 * a.grid.get(s, 0) + 0.25);
    }

    #[test]
    fn constant_and_negative_models() {
        let panel = test_panel();
        let ctx = FeatureContext::new(&panel, &lag_only(vec![29]), 1..=100).unwrap();
        let c = FnModel(|m: &FeatureMatrix| Ok(vec![3.25; m.n_rows()]));
        let run = recursive_forecast(&ctx, &c, &panel, 101, 28, InferenceMode::Recursive).unwrap();
        for s in (0..panel.n_series()).filter(|&s| panel.is_active(s, 101)) {
            assert!(run.grid.row(s).iter().all(|v| *v == 3.25));
        }
        let neg = FnModel(|m: &FeatureMatrix| Ok(vec![-1.0; m.n_rows()]));
        let run = recursive_forecast(&ctx, &neg, &panel, 101, 28, InferenceMode::Recursive).unwrap();
        assert!(run.grid.values().iter().all(|v| *v == 0.0));
        assert!(recursive_forecast(&ctx, &c, &panel, 500, 28, InferenceMode::Recursive).is_err());
    }

    #[test]
    fn perfect_oracle_scores_zero() {
        let panel = test_panel();
        let cfg = PipelineConfig::default();
        for split in make_splits(panel.n_days(), false) {
            let actual = actual_grid(&panel, split.valid.clone()).unwrap();
            let grids: BTreeMap<String, ForecastGrid> =
                role::ALL.iter().map(|r| (r.to_string(), actual.clone())).collect();
            let cfg = PipelineConfig {
                smoothing: SmoothingConfig {
                    apply_to_point: false,
                    ..cfg.smoothing.clone()
                },
                ..cfg.clone()
            };
            let r = score_split(&cfg, &panel, &split, &grids).unwrap();
            for (name, rep) in &r.scores {
                if name == ENSEMBLE {
                    // zero actuals become the blend floor
                    assert!(rep.total < 1e-5, "{}", rep.total);
                } else {
                    assert_eq!(rep.total, 0.0, "{name}");
                }
            }
        }
    }

    #[test]
    fn group_serialization_round_trip() {
        let m = FeatureMatrix::from_rows(FeatureMatrix::numeric_columns(1), (0..50).map(|i| vec![i as f64]).collect(), (0..50).map(|i| (i % 5) as f64).collect()).unwrap();
        let g = FittedGroup::Global(gbdt::fit(&m, &crate::gbdt::GbdtParams { n_estimators: 3, min_data_in_leaf: 5, ..Default::default() }).unwrap());
        assert_eq!(FittedGroup::from_bytes(&g.to_bytes(), "g").unwrap(), g);
        let nets = FittedGroup::Mlp(mlp::fit_group(&m, &[crate::mlp::MlpConfig { epochs: 2, snapshots_to_keep: 1, ..Default::default() }]).unwrap());
        assert_eq!(FittedGroup::from_bytes(&nets.to_bytes(), "n").unwrap(), nets);
        let mut bytes = nets.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(FittedGroup::from_bytes(&bytes, "n").is_err());
    }
}
