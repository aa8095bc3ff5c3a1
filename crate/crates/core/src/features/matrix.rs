//! Assembly of the (series, day) design matrix.

use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::binio::hash64;
use crate::data::PanelDataset;
use crate::error::{Error, Result};

use super::compute::{
    calendar_features, mean_target_encode, rolling_stats, weekly_price_table, SalesSource, SalesView,
    TargetEncoding,
};
use super::spec::{CalendarField, FeatureConfig, FeatureKind, FeatureSpec, PriceStat, SnapMode};

/// Bumped whenever the meaning of a column changes.
pub const FEATURE_VERSION: u32 = 1;

/// Precomputed, data-dependent state shared by every matrix assembled for
/// one training range: target encodings and weekly price statistics.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    config: FeatureConfig,
    columns: Vec<FeatureSpec>,
    schema_hash: u64,
    train_days: RangeInclusive<usize>,
    encodings: Vec<TargetEncoding>,
    price_table: Vec<Vec<[f64; 6]>>,
}

impl FeatureContext {
    /// Build the context. Target encodings use observed rows in `train_days`.
    pub fn new(panel: &PanelDataset, config: &FeatureConfig, train_days: RangeInclusive<usize>) -> Result<Self> {
        config.validate()?;
        if *train_days.start() == 0 || train_days.is_empty() || *train_days.end() > panel.n_days() {
            return Err(Error::validation(format!(
                "training range {}..={} outside observed days 1..={}",
                train_days.start(),
                train_days.end(),
                panel.n_days()
            )));
        }
        let columns = config.columns(panel);
        let schema_hash = schema_hash(&columns);
        let encodings = if config.categorical.target_encoding {
            (0..5)
                .map(|c| mean_target_encode(panel, c, train_days.clone()))
                .collect()
        } else {
            Vec::new()
        };
        let price_table = if config.price.enabled {
            (0..panel.n_series())
                .into_par_iter()
                .map(|s| weekly_price_table(panel, s))
                .collect()
        } else {
            Vec::new()
        };
        Ok(FeatureContext {
            config: config.clone(),
            columns,
            schema_hash,
            train_days,
            encodings,
            price_table,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn columns(&self) -> &[FeatureSpec] {
        &self.columns
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn train_days(&self) -> RangeInclusive<usize> {
        self.train_days.clone()
    }

    pub fn encoding(&self, column: usize) -> Option<&TargetEncoding> {
        self.encodings.get(column)
    }

    /// Feature values of one cell in column order, appended to `out`.
    fn row_into(&self, panel: &PanelDataset, src: &impl SalesSource, s: usize, day: usize, out: &mut Vec<f64>) {
        let codes = panel.codes(s);
        let cal = panel.calendar_day(day).expect("day checked against calendar");
        let state = &panel.series()[s].state_id;
        let cal_values = if self.config.calendar.enabled {
            calendar_features(cal, state, self.config.calendar.snap)
        } else {
            Vec::new()
        };
        let price = self
            .price_table
            .get(s)
            .map(|t| t[panel.week_ordinal(day)])
            .unwrap_or([f64::NAN; 6]);
        let mut pending_std: Option<(usize, usize, f64)> = None;
        for col in &self.columns {
            let v = match col.kind {
                FeatureKind::Code(c) => codes[c] as f64,
                FeatureKind::TargetEncoding(c) => self.encodings[c].encode(codes[c]),
                FeatureKind::Price(stat) => price[price_index(stat)],
                FeatureKind::Calendar(field) => cal_values[calendar_index(field, self.config.calendar.snap)],
                FeatureKind::Lag(lag) => super::compute::lag_value(src, s, day, lag),
                FeatureKind::RollingMean { lag, window } => {
                    let (m, sd) = rolling_stats(src, s, day, lag, window);
                    pending_std = Some((lag, window, sd));
                    m
                }
                FeatureKind::RollingStd { lag, window } => match pending_std.take() {
                    Some((l, w, sd)) if l == lag && w == window => sd,
                    _ => rolling_stats(src, s, day, lag, window).1,
                },
            };
            out.push(v);
        }
    }

    fn check_day(&self, panel: &PanelDataset, day: usize) -> Result<()> {
        if day == 0 || panel.calendar_day(day).is_none() {
            return Err(Error::validation(format!(
                "day {day} is beyond the calendar ({} days)",
                panel.calendar().len()
            )));
        }
        Ok(())
    }

    /// Training rows: every active observed (series, day) with day in `days`.
    pub fn assemble_training(&self, panel: &PanelDataset, days: RangeInclusive<usize>) -> Result<FeatureMatrix> {
        if *days.end() > panel.n_days() {
            return Err(Error::validation(format!(
                "training rows requested up to day {} but only {} days are observed",
                days.end(),
                panel.n_days()
            )));
        }
        self.check_day(panel, (*days.start()).max(1))?;
        let view = SalesView::observed(panel);
        let lo = (*days.start()).max(1);
        let hi = *days.end();
        let ncol = self.columns.len();
        let parts: Vec<(Vec<f64>, Vec<u32>, Vec<u32>, Vec<f64>)> = (0..panel.n_series())
            .into_par_iter()
            .map(|s| {
                let mut data = Vec::new();
                let mut series = Vec::new();
                let mut dayv = Vec::new();
                let mut target = Vec::new();
                if let Some(first) = panel.first_active_day(s) {
                    let start = lo.max(first);
                    if start <= hi {
                        data.reserve((hi - start + 1) * ncol);
                        for day in start..=hi {
                            self.row_into(panel, &view, s, day, &mut data);
                            series.push(s as u32);
                            dayv.push(day as u32);
                            target.push(panel.sale(s, day));
                        }
                    }
                }
                (data, series, dayv, target)
            })
            .collect();
        Ok(self.concat(parts, 0))
    }

    /// Inference rows for every series active on `day`, reading sales through
    /// `view`. Targets are the observed sales where known, `NaN` otherwise.
    pub fn assemble_day(&self, view: &SalesView<'_>, day: usize) -> Result<FeatureMatrix> {
        let panel = view.panel();
        self.check_day(panel, day)?;
        let before = view.buffer_reads();
        let parts: Vec<(Vec<f64>, Vec<u32>, Vec<u32>, Vec<f64>)> = (0..panel.n_series())
            .into_par_iter()
            .map(|s| {
                if !panel.is_active(s, day) {
                    return Default::default();
                }
                let mut data = Vec::with_capacity(self.columns.len());
                self.row_into(panel, view, s, day, &mut data);
                let y = if day <= panel.n_days() { panel.sale(s, day) } else { f64::NAN };
                (data, vec![s as u32], vec![day as u32], vec![y])
            })
            .collect();
        Ok(self.concat(parts, view.buffer_reads() - before))
    }

    fn concat(&self, parts: Vec<(Vec<f64>, Vec<u32>, Vec<u32>, Vec<f64>)>, buffer_reads: usize) -> FeatureMatrix {
        let n_rows = parts.iter().map(|p| p.1.len()).sum();
        let mut m = FeatureMatrix {
            columns: self.columns.clone(),
            schema_hash: self.schema_hash,
            n_rows,
            data: Vec::with_capacity(n_rows * self.columns.len()),
            series: Vec::with_capacity(n_rows),
            days: Vec::with_capacity(n_rows),
            target: Vec::with_capacity(n_rows),
            buffer_reads,
        };
        for (d, s, dd, t) in parts {
            m.data.extend(d);
            m.series.extend(s);
            m.days.extend(dd);
            m.target.extend(t);
        }
        m
    }
}

fn price_index(stat: PriceStat) -> usize {
    match stat {
        PriceStat::Current => 0,
        PriceStat::Max => 1,
        PriceStat::Min => 2,
        PriceStat::Mean => 3,
        PriceStat::Std => 4,
        PriceStat::NUnique => 5,
    }
}

fn calendar_index(field: CalendarField, snap: SnapMode) -> usize {
    let own = usize::from(matches!(snap, SnapMode::Own | SnapMode::OwnAndAll));
    match field {
        CalendarField::Wday => 0,
        CalendarField::Month => 1,
        CalendarField::Year => 2,
        CalendarField::EventType1 => 3,
        CalendarField::EventType2 => 4,
        CalendarField::SnapOwn => 5,
        CalendarField::Snap(i) => 5 + own + i,
    }
}

/// Hash of the ordered column roster (names, kinds, cardinalities).
pub fn schema_hash(columns: &[FeatureSpec]) -> u64 {
    let mut text = format!("v{FEATURE_VERSION}\n");
    for c in columns {
        text.push_str(&format!("{}|{:?}|{:?}|{:?}\n", c.name, c.group, c.kind, c.cardinality));
    }
    hash64(text.as_bytes())
}

/// Row-major design matrix with row identifiers and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub(crate) columns: Vec<FeatureSpec>,
    pub(crate) schema_hash: u64,
    pub(crate) n_rows: usize,
    pub(crate) data: Vec<f64>,
    pub(crate) series: Vec<u32>,
    pub(crate) days: Vec<u32>,
    pub(crate) target: Vec<f64>,
    pub(crate) buffer_reads: usize,
}

impl FeatureMatrix {
    /// Matrix from raw parts, mainly for tests and synthetic problems.
    pub fn from_rows(columns: Vec<FeatureSpec>, rows: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        if rows.len() != target.len() {
            return Err(Error::validation("row and target counts differ"));
        }
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::validation("row width differs from column count"));
        }
        let n_rows = rows.len();
        Ok(FeatureMatrix {
            schema_hash: schema_hash(&columns),
            columns,
            n_rows,
            data: rows.into_iter().flatten().collect(),
            series: vec![0; n_rows],
            days: vec![0; n_rows],
            target,
            buffer_reads: 0,
        })
    }

    /// Plain numeric columns named `x0, x1, ...`.
    pub fn numeric_columns(n: usize) -> Vec<FeatureSpec> {
        (0..n)
            .map(|i| FeatureSpec {
                name: format!("x{i}"),
                group: super::spec::FeatureGroup::Lag,
                kind: FeatureKind::Lag(i + 1),
                cardinality: None,
            })
            .collect()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[FeatureSpec] {
        &self.columns
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.columns.len();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.columns.len() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, c)).collect()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn series(&self) -> &[u32] {
        &self.series
    }

    pub fn days(&self) -> &[u32] {
        &self.days
    }

    /// Reads served from the forecast buffer while assembling this matrix.
    pub fn buffer_reads(&self) -> usize {
        self.buffer_reads
    }

    /// Index of a column by name.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let w = self.columns.len();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            schema_hash: self.schema_hash,
            n_rows: rows.len(),
            data,
            series: rows.iter().map(|&r| self.series[r]).collect(),
            days: rows.iter().map(|&r| self.days[r]).collect(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            buffer_reads: 0,
        }
    }

    /// Rows whose day lies in `days`.
    pub fn filter_days(&self, days: RangeInclusive<usize>) -> FeatureMatrix {
        let rows: Vec<usize> = (0..self.n_rows)
            .filter(|&r| days.contains(&(self.days[r] as usize)))
            .collect();
        self.select_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute::{lag_features, price_features};
    use crate::features::test_panel;

    #[test]
    fn training_rows_cover_active_days() {
        let panel = test_panel();
        let ctx = FeatureContext::new(&panel, &FeatureConfig::default(), 1..=panel.n_days()).unwrap();
        let m = ctx.assemble_training(&panel, 1..=panel.n_days()).unwrap();
        assert_eq!(m.n_rows(), panel.active_row_count());
        assert_eq!(m.n_cols(), ctx.columns().len());
        for r in (0..m.n_rows()).step_by(17) {
            let (s, d) = (m.series()[r] as usize, m.days()[r] as usize);
            assert_eq!(m.target()[r], panel.sale(s, d));
        }
    }

    #[test]
    fn matrix_cells_match_single_cell_functions() {
        let panel = test_panel();
        let cfg = FeatureConfig::default();
        let ctx = FeatureContext::new(&panel, &cfg, 1..=panel.n_days()).unwrap();
        let m = ctx.assemble_training(&panel, 50..=panel.n_days()).unwrap();
        let view = SalesView::observed(&panel);
        let lag0 = m.column_index("lag_29").unwrap();
        let p0 = m.column_index("price").unwrap();
        for r in (0..m.n_rows()).step_by(11) {
            let (s, d) = (m.series()[r] as usize, m.days()[r] as usize);
            let lags = lag_features(&view, s, d, 28, &cfg.lag.k);
            for (k, v) in lags.iter().enumerate() {
                let got = m.get(r, lag0 + k);
                assert!(got == *v || (got.is_nan() && v.is_nan()));
            }
            let p = price_features(&panel, s, d);
            for (k, v) in p.iter().enumerate() {
                let got = m.get(r, p0 + k);
                assert!(got == *v || (got.is_nan() && v.is_nan()), "{got} vs {v}");
            }
        }
    }

    #[test]
    fn target_encoding_ignores_days_outside_range() {
        let panel = test_panel();
        let a = mean_target_encode(&panel, 0, 1..=40);
        let spiked: Vec<Vec<f64>> = (0..panel.n_series())
            .map(|s| {
                let mut v = panel.sales(s).to_vec();
                for x in v.iter_mut().skip(40) {
                    *x += 1000.0;
                }
                v
            })
            .collect();
        let b = mean_target_encode(&panel.with_sales(spiked).unwrap(), 0, 1..=40);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn day_beyond_calendar_is_an_error() {
        let panel = test_panel();
        let ctx = FeatureContext::new(&panel, &FeatureConfig::default(), 1..=panel.n_days()).unwrap();
        let view = SalesView::observed(&panel);
        assert!(ctx.assemble_day(&view, panel.calendar().len() + 1).is_err());
        assert!(ctx.assemble_day(&view, panel.n_days() + 28).is_ok());
    }

    #[test]
    fn buffer_reads_are_counted() {
        let panel = test_panel();
        let ctx = FeatureContext::new(&panel, &FeatureConfig::default(), 1..=panel.n_days()).unwrap();
        let start = panel.n_days() - 27;
        let buffer: Vec<Vec<f64>> = vec![vec![1.0; 28]; panel.n_series()];
        let view = SalesView::with_buffer(&panel, start - 1, &buffer);
        assert_eq!(ctx.assemble_day(&view, start).unwrap().buffer_reads(), 0);
        assert_eq!(ctx.assemble_day(&view, start + 27).unwrap().buffer_reads(), 0);
        let mut cfg = FeatureConfig::default();
        cfg.lag.base = 0;
        let ctx = FeatureContext::new(&panel, &cfg, 1..=panel.n_days()).unwrap();
        assert_eq!(ctx.assemble_day(&view, start).unwrap().buffer_reads(), 0);
        assert!(ctx.assemble_day(&view, start + 1).unwrap().buffer_reads() > 0);
    }
}
