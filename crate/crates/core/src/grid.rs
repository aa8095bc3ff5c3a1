//! Series × horizon matrices of point forecasts (or actuals).

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::data::SeriesIds;
use crate::error::{Error, Result};

/// Dense row-major grid: one row per series of a hierarchy level, one column
/// per day starting at `first_day`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastGrid {
    level: usize,
    keys: Vec<String>,
    first_day: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl ForecastGrid {
    pub fn new(level: usize, keys: Vec<String>, first_day: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if keys.len() != rows.len() {
            return Err(Error::validation(format!(
                "grid has {} keys but {} rows",
                keys.len(),
                rows.len()
            )));
        }
        let horizon = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(Error::validation("grid rows have unequal lengths"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("grid contains non-finite values"));
        }
        Ok(ForecastGrid {
            level,
            keys,
            first_day,
            horizon,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn filled(level: usize, keys: Vec<String>, first_day: usize, horizon: usize, value: f64) -> Self {
        let n = keys.len();
        ForecastGrid {
            level,
            keys,
            first_day,
            horizon,
            values: vec![value; n * horizon],
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn first_day(&self) -> usize {
        self.first_day
    }

    /// Number of day columns.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_series(&self) -> usize {
        self.keys.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.horizon.max(1)).take(self.keys.len())
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.values[i * self.horizon + t]
    }

    pub fn set(&mut self, i: usize, t: usize, v: f64) {
        self.values[i * self.horizon + t] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ForecastGrid {
        let mut g = self.clone();
        g.values.iter_mut().for_each(|v| *v = f(*v));
        g
    }

    pub fn key_index(&self) -> HashMap<&str, usize> {
        self.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect()
    }

    /// True when `other` has the same level, keys and day range.
    pub fn same_shape(&self, other: &ForecastGrid) -> bool {
        self.level == other.level
            && self.keys == other.keys
            && self.first_day == other.first_day
            && self.horizon == other.horizon
    }

    /// Submission shape: `id,F1..Fh`, one row per series.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.horizon).map(|t| format!("F{t}")));
        w.write_record(&header).map_err(csv_error)?;
        for (k, row) in self.keys.iter().zip(self.rows()) {
            let mut rec = Vec::with_capacity(self.horizon + 1);
            rec.push(k.clone());
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io("<grid writer>", e))
    }

    /// Read a grid written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(input: R, level: usize, first_day: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        if headers.get(0) != Some("id") || headers.len() < 2 {
            return Err(Error::validation("forecast file must have columns id,F1..Fh"));
        }
        let mut keys = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_error)?;
            keys.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    file: "<forecast>".into(),
                    row: i + 2,
                    message: e.to_string(),
                })?;
            rows.push(row);
        }
        if keys.is_empty() {
            return Err(Error::validation("forecast file has no rows"));
        }
        ForecastGrid::new(level, keys, first_day, rows)
    }
}

/// Nine quantile forecasts of one hierarchy level, one grid per quantile
/// level in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    grids: Vec<ForecastGrid>,
}

impl QuantileGrid {
    pub fn new(grids: Vec<ForecastGrid>) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::validation("quantile grid needs at least one quantile"));
        }
        if grids.iter().any(|g| !g.same_shape(&grids[0])) {
            return Err(Error::validation("quantile slices differ in shape"));
        }
        Ok(QuantileGrid { grids })
    }

    pub fn level(&self) -> usize {
        self.grids[0].level()
    }

    pub fn keys(&self) -> &[String] {
        self.grids[0].keys()
    }

    pub fn first_day(&self) -> usize {
        self.grids[0].first_day()
    }

    pub fn horizon(&self) -> usize {
        self.grids[0].horizon()
    }

    pub fn n_quantiles(&self) -> usize {
        self.grids.len()
    }

    /// Grid of quantile index `j`.
    pub fn quantile(&self, j: usize) -> &ForecastGrid {
        &self.grids[j]
    }

    pub fn quantile_mut(&mut self, j: usize) -> &mut ForecastGrid {
        &mut self.grids[j]
    }

    pub fn grids(&self) -> &[ForecastGrid] {
        &self.grids
    }

    /// Quantile values of one (series, day) cell.
    pub fn cell(&self, i: usize, t: usize) -> Vec<f64> {
        self.grids.iter().map(|g| g.get(i, t)).collect()
    }

    pub fn set_cell(&mut self, i: usize, t: usize, values: &[f64]) {
        for (g, v) in self.grids.iter_mut().zip(values) {
            g.set(i, t, *v);
        }
    }

    /// Every cell non-decreasing across quantiles and non-negative.
    pub fn is_monotone(&self) -> bool {
        (0..self.grids[0].n_series()).all(|i| {
            (0..self.horizon()).all(|t| {
                let c = self.cell(i, t);
                c[0] >= 0.0 && c.windows(2).all(|w| w[0] <= w[1])
            })
        })
    }
}

/// Keys of the bottom-level series in panel order.
pub fn bottom_keys(series: &[SeriesIds]) -> Vec<String> {
    series.iter().map(SeriesIds::key).collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format {
        path: "<csv>".into(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = ForecastGrid::new(
            12,
            vec!["A".into(), "B".into()],
            10,
            vec![vec![0.1 + 0.2, 1.0 / 3.0], vec![1e-300, 12345.678901234567]],
        )
        .unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = ForecastGrid::read_csv(buf.as_slice(), 12, 10).unwrap();
        assert_eq!(back, g);
        assert!(back
            .values()
            .iter()
            .zip(g.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(ForecastGrid::new(12, vec!["A".into(), "B".into()], 1, vec![vec![1.0], vec![]]).is_err());
    }

    #[test]
    fn empty_file_rejected() {
        assert!(ForecastGrid::read_csv("id,F1\n".as_bytes(), 12, 1).is_err());
        assert!(ForecastGrid::read_csv("".as_bytes(), 12, 1).is_err());
    }
}
