//! Scaled accuracy metrics over the hierarchy.
//!
//! * RMSSE: root of the mean squared horizon error divided by the mean
//!   squared one-step difference of the in-sample history.
//! * WRMSSE: `Σ w_i · RMSSE_i` over every series of every level.
//! * SPL: mean pinball loss over the horizon divided by the mean absolute
//!   one-step difference of the history.
//! * WSPL: `Σ w_i · (1/9) Σ_j SPL_i(u_j)`.
//!
//! Leading zeros of a history are trimmed before the scale is computed
//! (products not yet on sale); [`ScaleOptions::trim_leading_zeros`] turns
//! that off. Every reduction runs serially in weight-table order so scores
//! are bit-reproducible.

use std::collections::HashMap;
use std::io::Write;

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::grid::{ForecastGrid, QuantileGrid};
use crate::hierarchy::{HierarchyIndex, WeightTable, N_LEVELS};

/// Quantile levels of the probabilistic forecast.
pub const QUANTILES: [f64; 9] = [0.005, 0.025, 0.165, 0.25, 0.5, 0.75, 0.835, 0.975, 0.995];

/// Position of the median in [`QUANTILES`].
pub const MEDIAN_INDEX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleOptions {
    pub trim_leading_zeros: bool,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        ScaleOptions {
            trim_leading_zeros: true,
        }
    }
}

fn trimmed(hist: &[f64], opts: ScaleOptions) -> &[f64] {
    if opts.trim_leading_zeros {
        let start = hist.iter().position(|&v| v != 0.0).unwrap_or(hist.len());
        &hist[start..]
    } else {
        hist
    }
}

fn diff_scale(hist: &[f64], opts: ScaleOptions, f: impl Fn(f64) -> f64) -> Result<f64> {
    let h = trimmed(hist, opts);
    if h.len() < 2 {
        return Err(Error::DegenerateSeries(format!(
            "history has {} observations after trimming",
            h.len()
        )));
    }
    let sum: f64 = h.windows(2).map(|w| f(w[1] - w[0])).sum();
    let scale = sum / (h.len() - 1) as f64;
    if scale > 0.0 {
        Ok(scale)
    } else {
        Err(Error::DegenerateSeries("constant history".into()))
    }
}

/// `(1/(n−1)) Σ_{t=2..n} (y_t − y_{t−1})²` over the (trimmed) history.
pub fn scale_denominator(hist: &[f64], opts: ScaleOptions) -> Result<f64> {
    diff_scale(hist, opts, |d| d * d)
}

/// `(1/(n−1)) Σ_{t=2..n} |y_t − y_{t−1}|`, the SPL scale.
pub fn abs_scale_denominator(hist: &[f64], opts: ScaleOptions) -> Result<f64> {
    diff_scale(hist, opts, f64::abs)
}

fn check_pair(actual: &[f64], forecast: &[f64]) -> Result<()> {
    if actual.is_empty() || actual.len() != forecast.len() {
        return Err(Error::validation(format!(
            "horizon mismatch: {} actuals vs {} forecasts",
            actual.len(),
            forecast.len()
        )));
    }
    Ok(())
}

pub fn rmsse(hist: &[f64], actual: &[f64], forecast: &[f64], opts: ScaleOptions) -> Result<f64> {
    check_pair(actual, forecast)?;
    let scale = scale_denominator(hist, opts)?;
    Ok(rmsse_with_scale(scale, actual, forecast))
}

fn rmsse_with_scale(scale: f64, actual: &[f64], forecast: &[f64]) -> f64 {
    let mse = actual
        .iter()
        .zip(forecast)
        .map(|(y, f)| (y - f) * (y - f))
        .sum::<f64>()
        / actual.len() as f64;
    (mse / scale).sqrt()
}

/// Per-series metric values keyed by `(level, series key)`.
pub type SeriesScores = HashMap<(usize, String), f64>;

/// `Σ w_i · RMSSE_i`. Series with zero weight may be absent.
pub fn wrmsse(scores: &SeriesScores, weights: &WeightTable) -> Result<f64> {
    weighted_sum(scores, weights)
}

fn weighted_sum(scores: &SeriesScores, weights: &WeightTable) -> Result<f64> {
    let mut total = 0.0;
    for (level, key, w) in weights.iter() {
        match scores.get(&(level, key.to_string())) {
            Some(v) => total += w * v,
            None if w == 0.0 => {}
            None => return Err(Error::missing("series score", format!("level {level} {key}"))),
        }
    }
    Ok(total)
}

pub fn pinball(actual: f64, q: f64, u: f64) -> f64 {
    if q <= actual {
        u * (actual - q)
    } else {
        (1.0 - u) * (q - actual)
    }
}

pub fn spl(hist: &[f64], actual: &[f64], q_forecast: &[f64], u: f64, opts: ScaleOptions) -> Result<f64> {
    check_pair(actual, q_forecast)?;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("quantile level {u} outside (0, 1)")));
    }
    let scale = abs_scale_denominator(hist, opts)?;
    Ok(spl_with_scale(scale, actual, q_forecast, u))
}

pub(crate) fn spl_with_scale(scale: f64, actual: &[f64], q: &[f64], u: f64) -> f64 {
    let loss: f64 = actual.iter().zip(q).map(|(y, q)| pinball(*y, *q, u)).sum();
    loss / actual.len() as f64 / scale
}

/// Per-series SPL values, one per quantile level.
pub type QuantileScores = HashMap<(usize, String), Vec<f64>>;

/// `Σ w_i · (1/9) Σ_j SPL_i(u_j)`.
pub fn wspl(scores: &QuantileScores, weights: &WeightTable) -> Result<f64> {
    let mut total = 0.0;
    for (level, key, w) in weights.iter() {
        match scores.get(&(level, key.to_string())) {
            Some(v) if v.len() == QUANTILES.len() => {
                total += w * (v.iter().sum::<f64>() / QUANTILES.len() as f64);
            }
            Some(v) => {
                return Err(Error::missing(
                    "quantile",
                    format!("level {level} {key} has {} of {} quantiles", v.len(), QUANTILES.len()),
                ))
            }
            None if w == 0.0 => {}
            None => return Err(Error::missing("series score", format!("level {level} {key}"))),
        }
    }
    Ok(total)
}

/// Histories of every series of every level over days `1..=last_day`.
#[derive(Debug, Clone)]
pub struct HierarchyHistory {
    levels: Vec<Vec<Vec<f64>>>,
}

impl HierarchyHistory {
    pub fn from_panel(panel: &PanelDataset, index: &HierarchyIndex, last_day: usize) -> Result<Self> {
        if last_day > panel.n_days() {
            return Err(Error::validation(format!(
                "history end d_{last_day} beyond observed {} days",
                panel.n_days()
            )));
        }
        let bottom: Vec<&[f64]> = (0..panel.n_series())
            .map(|s| &panel.sales(s)[..last_day])
            .collect();
        Ok(Self::from_bottom(index, &bottom))
    }

    pub fn from_bottom<R: AsRef<[f64]>>(index: &HierarchyIndex, bottom: &[R]) -> Self {
        HierarchyHistory {
            levels: (1..=N_LEVELS).map(|l| index.aggregate_rows(l, bottom)).collect(),
        }
    }

    pub fn series(&self, level: usize, i: usize) -> &[f64] {
        &self.levels[level - 1][i]
    }
}

/// One scored series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesScore {
    pub level: usize,
    pub key: String,
    pub weight: f64,
    /// `None` when the history is degenerate; such series are excluded
    /// with weight 0.
    pub value: Option<f64>,
}

/// Full-hierarchy score with its per-level breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub metric: &'static str,
    pub series: Vec<SeriesScore>,
    /// `Σ_{i in level} w_i · score_i`; these sum to `total`.
    pub per_level: [f64; N_LEVELS],
    pub total: f64,
}

impl ScoreReport {
    /// `level,series_id,metric,value` rows, then one row per level and a
    /// total row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Format {
            path: "<score report>".into(),
            message: e.to_string(),
        };
        w.write_record(["level", "series_id", "metric", "value"]).map_err(err)?;
        for s in &self.series {
            let v = s.value.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
            w.write_record([s.level.to_string(), s.key.clone(), self.metric.to_lowercase(), v])
                .map_err(err)?;
        }
        let weighted = format!("w{}", self.metric.to_lowercase());
        for (l, v) in self.per_level.iter().enumerate() {
            w.write_record([(l + 1).to_string(), "_level".into(), weighted.clone(), format!("{v}")])
                .map_err(err)?;
        }
        w.write_record(["all".to_string(), "_total".into(), weighted, format!("{}", self.total)])
            .map_err(err)?;
        w.flush().map_err(|e| Error::io("<score report>", e))
    }
}

fn build_report(
    metric: &'static str,
    weights: &WeightTable,
    mut score: impl FnMut(usize, usize) -> Result<Option<f64>>,
    index: &HierarchyIndex,
) -> Result<ScoreReport> {
    let mut series = Vec::new();
    let mut per_level = [0.0; N_LEVELS];
    for level in 1..=N_LEVELS {
        for (i, agg) in index.level(level).iter().enumerate() {
            let w = weights
                .get(level, &agg.key)
                .ok_or_else(|| Error::missing("weight", format!("level {level} {}", agg.key)))?;
            let value = score(level, i)?;
            match value {
                Some(v) => per_level[level - 1] += w * v,
                None if w > 0.0 => log::warn!(
                    "degenerate history for level {level} series {}; excluded with weight 0",
                    agg.key
                ),
                None => {}
            }
            series.push(SeriesScore {
                level,
                key: agg.key.clone(),
                weight: if value.is_some() { w } else { 0.0 },
                value,
            });
        }
    }
    let total = per_level.iter().sum();
    Ok(ScoreReport {
        metric,
        series,
        per_level,
        total,
    })
}

fn degenerate_to_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateSeries(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// WRMSSE of a bottom-level forecast against bottom-level actuals, scored
/// over all 12 levels.
pub fn evaluate_point(
    index: &HierarchyIndex,
    weights: &WeightTable,
    history: &HierarchyHistory,
    actual: &ForecastGrid,
    forecast: &ForecastGrid,
    opts: ScaleOptions,
) -> Result<ScoreReport> {
    if actual.horizon() != forecast.horizon() {
        return Err(Error::validation("actual and forecast horizons differ"));
    }
    let actual = index.aggregate_all(actual)?;
    let forecast = index.aggregate_all(forecast)?;
    build_report(
        "RMSSE",
        weights,
        |level, i| {
            degenerate_to_none(
                scale_denominator(history.series(level, i), opts)
                    .map(|s| rmsse_with_scale(s, actual[level - 1].row(i), forecast[level - 1].row(i))),
            )
        },
        index,
    )
}

/// WSPL of per-level quantile forecasts (levels 1..=12 in order).
pub fn evaluate_quantiles(
    index: &HierarchyIndex,
    weights: &WeightTable,
    history: &HierarchyHistory,
    actual: &ForecastGrid,
    quantiles: &[QuantileGrid],
    opts: ScaleOptions,
) -> Result<ScoreReport> {
    if quantiles.len() != N_LEVELS {
        return Err(Error::missing("quantile level grids", format!("{} of 12", quantiles.len())));
    }
    let actual = index.aggregate_all(actual)?;
    for (l, q) in quantiles.iter().enumerate() {
        if q.n_quantiles() != QUANTILES.len() {
            return Err(Error::missing("quantile", format!("level {} has {}", l + 1, q.n_quantiles())));
        }
        if q.keys() != actual[l].keys() || q.horizon() != actual[l].horizon() {
            return Err(Error::validation(format!("quantile grid of level {} has the wrong shape", l + 1)));
        }
    }
    build_report(
        "SPL",
        weights,
        |level, i| {
            degenerate_to_none(abs_scale_denominator(history.series(level, i), opts).map(|s| {
                let q = &quantiles[level - 1];
                QUANTILES
                    .iter()
                    .enumerate()
                    .map(|(j, &u)| spl_with_scale(s, actual[level - 1].row(i), q.quantile(j).row(i), u))
                    .sum::<f64>()
                    / QUANTILES.len() as f64
            }))
        },
        index,
    )
}
