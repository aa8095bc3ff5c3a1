//! Quantile forecasts from a median point forecast.
//!
//! Every level's median grid is multiplied by a per-level factor for each of
//! the nine quantile levels ([`apply_factors`]); the factors are either the
//! published table or fitted against WSPL on a validation window
//! ([`optimize_factors`]). Levels 12 and 11 are then pulled towards
//! empirical sales quantiles of recent history ([`correct_level12`],
//! [`correct_level11`]).
//!
//! Empirical quantiles use linear interpolation between order statistics:
//! for sorted values `x_0..x_{n−1}` the `u` quantile is taken at position
//! `(n − 1)·u`.

use std::io::{Read, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::grid::{ForecastGrid, QuantileGrid};
use crate::hierarchy::{HierarchyIndex, WeightTable, N_LEVELS};
use crate::metrics::{abs_scale_denominator, evaluate_quantiles, pinball, HierarchyHistory, ScaleOptions, MEDIAN_INDEX, QUANTILES};

const NQ: usize = QUANTILES.len();

/// Allowed multipliers of the highest quantile.
pub const EXTRA_MULTIPLIERS: [f64; 3] = [1.0, 1.02, 1.03];

/// Outer weights of the level-12 correction: factor estimate, daily
/// empirical blend, weekly empirical blend.
pub const LEVEL12_WEIGHTS: [f64; 3] = [0.2, 0.7, 0.1];
/// Outer weights of the level-11 correction: factor estimate, daily
/// empirical blend.
pub const LEVEL11_WEIGHTS: [f64; 2] = [0.91, 0.09];
/// Weight of the short daily window relative to the long one.
pub const SHORT_WINDOW_WEIGHT: f64 = 1.75;

const PUBLISHED: [[f64; NQ]; N_LEVELS] = [
    [0.890, 0.922, 0.963, 0.973, 1.000, 1.027, 1.037, 1.078, 1.143],
    [0.869, 0.907, 0.956, 0.969, 1.000, 1.031, 1.043, 1.093, 1.166],
    [0.848, 0.893, 0.950, 0.964, 1.000, 1.036, 1.049, 1.107, 1.186],
    [0.869, 0.907, 0.951, 0.969, 1.000, 1.031, 1.043, 1.093, 1.166],
    [0.827, 0.878, 0.943, 0.960, 1.000, 1.040, 1.057, 1.123, 1.209],
    [0.827, 0.878, 0.943, 0.960, 1.000, 1.040, 1.057, 1.123, 1.209],
    [0.787, 0.850, 0.930, 0.951, 1.000, 1.048, 1.070, 1.150, 1.251],
    [0.767, 0.835, 0.924, 0.947, 1.000, 1.053, 1.076, 1.166, 1.272],
    [0.707, 0.793, 0.905, 0.934, 1.000, 1.066, 1.095, 1.208, 1.335],
    [0.249, 0.416, 0.707, 0.795, 1.000, 1.218, 1.323, 1.720, 2.041],
    [0.111, 0.254, 0.590, 0.708, 1.000, 1.336, 1.504, 2.158, 2.662],
    [0.005, 0.055, 0.295, 0.446, 1.000, 1.884, 2.328, 3.548, 4.066],
];

/// Per-level multiplicative factors of the nine quantiles, plus a per-level
/// multiplier of the highest quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFactorTable {
    pub factors: [[f64; NQ]; N_LEVELS],
    pub extra: [f64; N_LEVELS],
}

impl QuantileFactorTable {
    pub fn identity() -> Self {
        QuantileFactorTable {
            factors: [[1.0; NQ]; N_LEVELS],
            extra: [1.0; N_LEVELS],
        }
    }

    /// The published factor table, verbatim, with no extra multiplier.
    pub fn published() -> Self {
        QuantileFactorTable {
            factors: PUBLISHED,
            extra: [1.0; N_LEVELS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (l, row) in self.factors.iter().enumerate() {
            let level = l + 1;
            if row.iter().any(|f| !f.is_finite() || *f < 0.0) {
                return Err(Error::validation(format!("level {level} has a negative or non-finite factor")));
            }
            if row[MEDIAN_INDEX] != 1.0 {
                return Err(Error::validation(format!("level {level} median factor is {}, not 1", row[MEDIAN_INDEX])));
            }
            if row.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::validation(format!("level {level} factors decrease across quantiles")));
            }
            if !EXTRA_MULTIPLIERS.contains(&self.extra[l]) {
                return Err(Error::validation(format!(
                    "level {level} extra multiplier {} is not one of {EXTRA_MULTIPLIERS:?}",
                    self.extra[l]
                )));
            }
        }
        Ok(())
    }

    /// Factor applied to quantile `j` of `level`, extra multiplier included.
    pub fn effective(&self, level: usize, j: usize) -> f64 {
        let f = self.factors[level - 1][j];
        if j == NQ - 1 {
            f * self.extra[level - 1]
        } else {
            f
        }
    }

    /// `level,0.005,...,0.995,extra`, one row per level.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["level".to_string()];
        header.extend(QUANTILES.iter().map(|u| format!("{u:.3}")));
        header.push("extra".into());
        w.write_record(&header).map_err(csv_err)?;
        for l in 0..N_LEVELS {
            let mut rec = vec![(l + 1).to_string()];
            rec.extend(self.factors[l].iter().map(|f| format!("{f}")));
            rec.push(format!("{}", self.extra[l]));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<factor table>", e))
    }

    pub fn read_csv<R: Read>(input: R, name: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.len() != NQ + 2 || headers.get(0) != Some("level") {
            return Err(Error::Parse {
                file: name.into(),
                row: 1,
                message: format!("expected level, {NQ} quantile columns and extra"),
            });
        }
        let mut table = QuantileFactorTable::identity();
        let mut seen = [false; N_LEVELS];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let perr = |m: String| Error::Parse {
                file: name.into(),
                row: i + 2,
                message: m,
            };
            let nums = rec
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| perr(e.to_string()))?;
            if nums.len() != NQ + 2 {
                return Err(perr(format!("{} fields", nums.len())));
            }
            let level = nums[0] as usize;
            if nums[0].fract() != 0.0 || !(1..=N_LEVELS).contains(&level) || seen[level - 1] {
                return Err(perr(format!("bad or repeated level {}", nums[0])));
            }
            seen[level - 1] = true;
            table.factors[level - 1].copy_from_slice(&nums[1..=NQ]);
            table.extra[level - 1] = nums[NQ + 1];
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return Err(Error::missing("factor table level", (l + 1).to_string()));
        }
        table.validate()?;
        Ok(table)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        path: "<csv>".into(),
        message: e.to_string(),
    }
}

/// `Q(u) = median × factor(level, u)` for every level.
pub fn apply_factors(medians: &[ForecastGrid], table: &QuantileFactorTable) -> Result<Vec<QuantileGrid>> {
    table.validate()?;
    if medians.len() != N_LEVELS {
        return Err(Error::missing("median level grids", format!("{} of {N_LEVELS}", medians.len())));
    }
    medians
        .iter()
        .enumerate()
        .map(|(l, m)| {
            if m.values().iter().any(|v| *v < 0.0) {
                return Err(Error::Domain(format!("level {} median is negative", l + 1)));
            }
            QuantileGrid::new(
                (0..NQ)
                    .map(|j| {
                        let f = table.effective(l + 1, j);
                        if j == MEDIAN_INDEX {
                            m.clone()
                        } else {
                            m.map(|v| v * f)
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

/// How mirrored quantile pairs are fitted on levels 1–9.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Levels 1–9 fit `(1 − δ, 1 + δ)` per pair `(u, 1 − u)`; levels 10–12
    /// fit each quantile freely.
    #[default]
    Symmetric,
    /// Every quantile of every level is fitted freely.
    Free,
}

/// Levels whose pairs are tied in symmetric mode.
pub const SYMMETRIC_LEVELS: std::ops::RangeInclusive<usize> = 1..=9;

/// Outcome of a factor fit, with the split WSPL before and after.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub table: QuantileFactorTable,
    pub wspl_identity: f64,
    pub wspl_fitted: f64,
}

/// Scored data of one level: `(coef, median row, actual row)` per usable
/// series, `coef = w / (scale · h)`.
struct LevelSlice<'a> {
    series: Vec<(f64, &'a [f64], &'a [f64])>,
}

impl LevelSlice<'_> {
    fn loss(&self, factor: f64, u: f64) -> f64 {
        self.series
            .iter()
            .map(|(c, m, y)| c * m.iter().zip(*y).map(|(m, y)| pinball(*y, factor * m, u)).sum::<f64>())
            .sum()
    }

    fn row_loss(&self, row: &[f64; NQ], extra: f64) -> f64 {
        (0..NQ)
            .map(|j| {
                let f = if j == NQ - 1 { row[j] * extra } else { row[j] };
                self.loss(f, QUANTILES[j])
            })
            .sum()
    }

    /// Largest actual/median ratio; the pinball optimum never exceeds it.
    fn max_ratio(&self) -> f64 {
        self.series
            .iter()
            .flat_map(|(_, m, y)| m.iter().zip(*y).filter(|(m, _)| **m > 0.0).map(|(m, y)| y / m))
            .fold(1.0, f64::max)
    }
}

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

/// Pool-adjacent-violators projection onto non-decreasing sequences
/// (unit weights).
pub fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
}

/// Keep `candidate` only when it is strictly better than `current`.
fn better(loss: impl Fn(f64) -> f64, current: f64, candidate: f64) -> f64 {
    if loss(candidate) < loss(current) {
        candidate
    } else {
        current
    }
}

fn fit_level(slice: &LevelSlice<'_>, symmetric: bool, tol: f64) -> ([f64; NQ], f64) {
    let mut row = [1.0; NQ];
    let hi = slice.max_ratio();
    if symmetric {
        for j in 0..MEDIAN_INDEX {
            let (ul, uh) = (QUANTILES[j], QUANTILES[NQ - 1 - j]);
            let pair = |d: f64| slice.loss(1.0 - d, ul) + slice.loss(1.0 + d, uh);
            let d = better(pair, 0.0, golden_section(pair, 0.0, 1.0, tol));
            row[j] = 1.0 - d;
            row[NQ - 1 - j] = 1.0 + d;
        }
    } else {
        for (j, &u) in QUANTILES.iter().enumerate() {
            let loss = |f: f64| slice.loss(f, u);
            row[j] = match j.cmp(&MEDIAN_INDEX) {
                std::cmp::Ordering::Less => better(loss, 1.0, golden_section(loss, 0.0, 1.0, tol)),
                std::cmp::Ordering::Equal => 1.0,
                std::cmp::Ordering::Greater => better(loss, 1.0, golden_section(loss, 1.0, hi, tol)),
            };
        }
    }
    let projected = isotonic(&row);
    row.copy_from_slice(&projected);
    row[MEDIAN_INDEX] = 1.0;
    let top = QUANTILES[NQ - 1];
    let mut extra = 1.0;
    for m in EXTRA_MULTIPLIERS {
        if slice.loss(row[NQ - 1] * m, top) < slice.loss(row[NQ - 1] * extra, top) {
            extra = m;
        }
    }
    (row, extra)
}

/// Fit the factor table on one validation window. `median` and `actual` are
/// level-12 grids over the window; `history` ends the day before it.
#[allow(clippy::too_many_arguments)]
pub fn optimize_factors(
    index: &HierarchyIndex,
    weights: &WeightTable,
    history: &HierarchyHistory,
    median: &ForecastGrid,
    actual: &ForecastGrid,
    opts: ScaleOptions,
    mode: FitMode,
    tol: f64,
) -> Result<FactorFit> {
    if !median.same_shape(actual) {
        return Err(Error::validation("median and actual grids differ in shape"));
    }
    let medians = index.aggregate_all(median)?;
    let actuals = index.aggregate_all(actual)?;
    let h = median.horizon() as f64;
    let mut table = QuantileFactorTable::identity();
    for level in 1..=N_LEVELS {
        let (m, a) = (&medians[level - 1], &actuals[level - 1]);
        let mut series = Vec::new();
        for (i, agg) in index.level(level).iter().enumerate() {
            let w = weights.get(level, &agg.key).unwrap_or(0.0);
            if w <= 0.0 {
                continue;
            }
            if let Ok(scale) = abs_scale_denominator(history.series(level, i), opts) {
                series.push((w / (scale * h), m.row(i), a.row(i)));
            }
        }
        let slice = LevelSlice { series };
        if slice.series.is_empty() || actuals[level - 1].values().iter().all(|v| *v == 0.0) {
            log::warn!("level {level}: nothing to fit (zero weights or all-zero actuals); identity factors kept");
            continue;
        }
        let symmetric = mode == FitMode::Symmetric && SYMMETRIC_LEVELS.contains(&level);
        let (row, extra) = fit_level(&slice, symmetric, tol);
        if slice.row_loss(&row, extra) <= slice.row_loss(&[1.0; NQ], 1.0) {
            table.factors[level - 1] = row;
            table.extra[level - 1] = extra;
        } else {
            log::warn!("level {level}: fitted factors do not beat identity; identity kept");
        }
    }
    table.validate()?;
    let score = |t: &QuantileFactorTable| -> Result<f64> {
        let q = apply_factors(&medians, t)?;
        Ok(evaluate_quantiles(index, weights, history, actual, &q, opts)?.total)
    };
    let wspl_identity = score(&QuantileFactorTable::identity())?;
    let wspl_fitted = score(&table)?;
    if wspl_fitted > wspl_identity {
        log::warn!("fitted factors raise WSPL ({wspl_fitted} > {wspl_identity})");
    }
    Ok(FactorFit {
        table,
        wspl_identity,
        wspl_fitted,
    })
}

/// Linearly interpolated `u` quantile of ascending `sorted`.
pub fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = (sorted.len() - 1) as f64 * u;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nine empirical quantiles per series (the median slot is filled too but
/// the corrections never use it).
#[derive(Debug, Clone, PartialEq)]
pub struct StatQuantiles {
    pub values: Vec<[f64; NQ]>,
}

fn quantiles_of(mut v: Vec<f64>) -> [f64; NQ] {
    v.sort_by(f64::total_cmp);
    QUANTILES.map(|u| empirical_quantile(&v, u))
}

/// Daily values, or per-day means of consecutive 7-day blocks ending at the
/// last value, from `values` (oldest first).
fn window_sample(values: &[f64], weekly: bool) -> Vec<f64> {
    if weekly {
        values.rchunks_exact(7).map(|c| c.iter().sum::<f64>() / 7.0).collect()
    } else {
        values.to_vec()
    }
}

/// Empirical quantiles of each level-12 series over the `window` days
/// ending at `last_day`, using active days only. Weekly mode uses per-day
/// means of 7-day blocks. A window longer than the history is shortened
/// with a warning.
pub fn statistical_quantiles(panel: &PanelDataset, last_day: usize, window: usize, weekly: bool) -> Result<StatQuantiles> {
    if last_day == 0 || last_day > panel.n_days() {
        return Err(Error::validation(format!("statistics end d_{last_day} is not observed")));
    }
    if window == 0 {
        return Err(Error::validation("statistics window is empty"));
    }
    let window = if window > last_day {
        log::warn!("statistics window of {window} days shortened to the {last_day} observed days");
        last_day
    } else {
        window
    };
    let first = last_day + 1 - window;
    let values = (0..panel.n_series())
        .map(|s| {
            let from = panel.first_active_day(s).map_or(last_day + 1, |f| f.max(first));
            let days = if from <= last_day { &panel.sales(s)[from - 1..last_day] } else { &[][..] };
            quantiles_of(window_sample(days, weekly))
        })
        .collect();
    Ok(StatQuantiles { values })
}

/// Same statistics over arbitrary histories (one slice per series, ending
/// at the day before the horizon).
pub fn series_quantiles<R: AsRef<[f64]>>(histories: &[R], window: usize, weekly: bool) -> StatQuantiles {
    StatQuantiles {
        values: histories
            .iter()
            .map(|h| {
                let h = h.as_ref();
                quantiles_of(window_sample(&h[h.len().saturating_sub(window)..], weekly))
            })
            .collect(),
    }
}

/// Window lengths (days) of the empirical statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatWindows {
    pub daily_long: usize,
    pub daily_short: usize,
    pub weekly_long: usize,
    pub weekly_short: usize,
}

impl Default for StatWindows {
    fn default() -> Self {
        StatWindows {
            daily_long: 13 * 28,
            daily_short: 28,
            weekly_long: 13 * 28,
            weekly_short: 3 * 28,
        }
    }
}

/// The four statistics of the level-12 correction.
#[derive(Debug, Clone, PartialEq)]
pub struct StatSet {
    pub daily_long: StatQuantiles,
    pub daily_short: StatQuantiles,
    pub weekly_long: StatQuantiles,
    pub weekly_short: StatQuantiles,
}

impl StatSet {
    pub fn compute(panel: &PanelDataset, last_day: usize, w: &StatWindows) -> Result<Self> {
        Ok(StatSet {
            daily_long: statistical_quantiles(panel, last_day, w.daily_long, false)?,
            daily_short: statistical_quantiles(panel, last_day, w.daily_short, false)?,
            weekly_long: statistical_quantiles(panel, last_day, w.weekly_long, true)?,
            weekly_short: statistical_quantiles(panel, last_day, w.weekly_short, true)?,
        })
    }
}

fn daily_blend(long: f64, short: f64) -> f64 {
    (long + SHORT_WINDOW_WEIGHT * short) / (1.0 + SHORT_WINDOW_WEIGHT)
}

fn check_stats(est: &QuantileGrid, stats: &[&StatQuantiles]) -> Result<()> {
    if est.n_quantiles() != NQ {
        return Err(Error::missing("quantile", format!("{} of {NQ}", est.n_quantiles())));
    }
    let n = est.keys().len();
    if let Some(s) = stats.iter().find(|s| s.values.len() != n) {
        return Err(Error::missing("statistics", format!("{} series for {n}", s.values.len())));
    }
    Ok(())
}

/// Apply `f(i, j, estimate)` to every non-median quantile, then restore
/// monotonicity: the eight corrected values are sorted and those below
/// (above) the median slot are capped (floored) at the median, which stays
/// fixed.
fn correct(est: &QuantileGrid, f: impl Fn(usize, usize, f64) -> f64) -> Result<QuantileGrid> {
    let mut out = est.clone();
    for i in 0..est.keys().len() {
        for t in 0..est.horizon() {
            let cell = est.cell(i, t);
            let median = cell[MEDIAN_INDEX];
            let mut others: Vec<f64> = (0..NQ)
                .filter(|&j| j != MEDIAN_INDEX)
                .map(|j| f(i, j, cell[j]))
                .collect();
            others.sort_by(f64::total_cmp);
            let (lo, hi) = others.split_at(MEDIAN_INDEX);
            let mut fixed: Vec<f64> = lo.iter().map(|v| v.min(median)).collect();
            fixed.push(median);
            fixed.extend(hi.iter().map(|v| v.max(median)));
            out.set_cell(i, t, &fixed);
        }
    }
    Ok(out)
}

/// `0.2·estimate + 0.7·(daily_long + 1.75·daily_short)/2.75 +
/// 0.1·(weekly_long + weekly_short)/2` on every non-median quantile.
pub fn correct_level12(est: &QuantileGrid, stats: &StatSet) -> Result<QuantileGrid> {
    check_stats(est, &[&stats.daily_long, &stats.daily_short, &stats.weekly_long, &stats.weekly_short])?;
    let [a, b, c] = LEVEL12_WEIGHTS;
    correct(est, |i, j, v| {
        a * v
            + b * daily_blend(stats.daily_long.values[i][j], stats.daily_short.values[i][j])
            + c * (stats.weekly_long.values[i][j] + stats.weekly_short.values[i][j]) / 2.0
    })
}

/// `0.91·estimate + 0.09·(daily_long + 1.75·daily_short)/2.75` on every
/// non-median quantile.
pub fn correct_level11(est: &QuantileGrid, long: &StatQuantiles, short: &StatQuantiles) -> Result<QuantileGrid> {
    check_stats(est, &[long, short])?;
    let [a, b] = LEVEL11_WEIGHTS;
    correct(est, |i, j, v| a * v + b * daily_blend(long.values[i][j], short.values[i][j]))
}

/// Source of the level-11 statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level11Stats {
    /// Sum of the member level-12 quantiles. An approximation: quantiles
    /// are not additive.
    #[default]
    SumOfMembers,
    /// Empirical quantiles of the aggregated level-11 histories.
    Direct,
}

impl Level11Stats {
    /// `(long, short)` daily statistics of every level-11 series.
    pub fn compute(
        self,
        panel: &PanelDataset,
        index: &HierarchyIndex,
        last_day: usize,
        windows: &StatWindows,
    ) -> Result<(StatQuantiles, StatQuantiles)> {
        match self {
            Level11Stats::SumOfMembers => {
                let sum = |s: StatQuantiles| StatQuantiles {
                    values: index
                        .aggregate_rows(11, &s.values)
                        .into_iter()
                        .map(|v| v.try_into().expect("nine quantiles"))
                        .collect(),
                };
                Ok((
                    sum(statistical_quantiles(panel, last_day, windows.daily_long, false)?),
                    sum(statistical_quantiles(panel, last_day, windows.daily_short, false)?),
                ))
            }
            Level11Stats::Direct => {
                let hist = HierarchyHistory::from_panel(panel, index, last_day)?;
                let series: Vec<&[f64]> = (0..index.level_count(11)).map(|i| hist.series(11, i)).collect();
                Ok((
                    series_quantiles(&series, windows.daily_long, false),
                    series_quantiles(&series, windows.daily_short, false),
                ))
            }
        }
    }
}

/// Where the factor table comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSource {
    /// Fitted on validation split 1.
    #[default]
    Fit,
    /// The published table.
    Published,
    /// Read from `factor_file`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub factors: FactorSource,
    pub factor_file: Option<PathBuf>,
    pub fit_mode: FitMode,
    /// Golden-section tolerance on a factor.
    pub tolerance: f64,
    /// Apply the level-11 and level-12 corrections.
    pub correct: bool,
    pub level11_stats: Level11Stats,
    pub windows: StatWindows,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            factors: FactorSource::Fit,
            factor_file: None,
            fit_mode: FitMode::Symmetric,
            tolerance: 1e-4,
            correct: true,
            level11_stats: Level11Stats::SumOfMembers,
            windows: StatWindows::default(),
        }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors == FactorSource::File && self.factor_file.is_none() {
            return Err(Error::Config("uncertainty.factors = \"file\" needs uncertainty.factor_file".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("uncertainty.tolerance must be positive".into()));
        }
        let w = &self.windows;
        if [w.daily_long, w.daily_short, w.weekly_long, w.weekly_short].contains(&0) {
            return Err(Error::Config("statistics windows must be non-empty".into()));
        }
        Ok(())
    }
}

/// Median → per-level factors → corrections of levels 12 and 11. `median`
/// is the level-12 forecast starting the day after `panel`'s statistics
/// end (`median.first_day() − 1`).
pub fn quantile_forecast(
    panel: &PanelDataset,
    index: &HierarchyIndex,
    median: &ForecastGrid,
    table: &QuantileFactorTable,
    config: &UncertaintyConfig,
) -> Result<Vec<QuantileGrid>> {
    let medians = index.aggregate_all(median)?;
    let mut q = apply_factors(&medians, table)?;
    if config.correct {
        let last = median.first_day() - 1;
        let stats = StatSet::compute(panel, last, &config.windows)?;
        q[11] = correct_level12(&q[11], &stats)?;
        let (long, short) = config.level11_stats.compute(panel, index, last, &config.windows)?;
        q[10] = correct_level11(&q[10], &long, &short)?;
    }
    debug_assert!(q.iter().all(QuantileGrid::is_monotone));
    Ok(q)
}

/// Id of one submission row.
pub fn submission_id(key: &str, u: f64, suffix: Option<&str>) -> String {
    match suffix {
        Some(s) => format!("{key}_{u:.3}_{s}"),
        None => format!("{key}_{u:.3}"),
    }
}

/// `(id, values)` rows: quantile-major, then level, then series.
pub fn submission_rows(grids: &[QuantileGrid], suffix: Option<&str>) -> Result<Vec<(String, Vec<f64>)>> {
    if grids.len() != N_LEVELS {
        return Err(Error::missing("quantile level grids", format!("{} of {N_LEVELS}", grids.len())));
    }
    let mut rows = Vec::new();
    for (j, &u) in QUANTILES.iter().enumerate() {
        for (l, q) in grids.iter().enumerate() {
            if q.n_quantiles() != NQ {
                return Err(Error::missing("quantile", format!("level {} has {}", l + 1, q.n_quantiles())));
            }
            if !q.is_monotone() {
                return Err(Error::validation(format!("level {} quantiles are not monotone", l + 1)));
            }
            let g = q.quantile(j);
            for (k, row) in g.keys().iter().zip(g.rows()) {
                rows.push((submission_id(k, u, suffix), row.to_vec()));
            }
        }
    }
    Ok(rows)
}

/// Uncertainty submission CSV: `id,F1..Fh`.
pub fn write_submission<W: Write>(grids: &[QuantileGrid], suffix: Option<&str>, out: W) -> Result<()> {
    let rows = submission_rows(grids, suffix)?;
    let h = grids[0].horizon();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((1..=h).map(|t| format!("F{t}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, vals) in rows {
        let mut rec = vec![id];
        rec.extend(vals.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<submission>", e))
}

/// Read a submission written by [`write_submission`] back into per-level
/// grids ordered like `index`.
pub fn read_submission<R: Read>(input: R, index: &HierarchyIndex, first_day: usize, suffix: Option<&str>) -> Result<Vec<QuantileGrid>> {
    let all = ForecastGrid::read_csv(input, 0, first_day)?;
    let pos = all.key_index();
    let mut out = Vec::with_capacity(N_LEVELS);
    for level in 1..=N_LEVELS {
        let keys = index.keys(level);
        let mut slices = Vec::with_capacity(NQ);
        for &u in &QUANTILES {
            let rows = keys
                .iter()
                .map(|k| {
                    let id = submission_id(k, u, suffix);
                    pos.get(id.as_str())
                        .map(|&r| all.row(r).to_vec())
                        .ok_or_else(|| Error::missing("submission row", id))
                })
                .collect::<Result<Vec<_>>>()?;
            slices.push(ForecastGrid::new(level, keys.clone(), first_day, rows)?);
        }
        out.push(QuantileGrid::new(slices)?);
    }
    if all.n_series() != index.total_series() * NQ {
        return Err(Error::validation(format!(
            "submission has {} rows, expected {}",
            all.n_series(),
            index.total_series() * NQ
        )));
    }
    Ok(out)
}
