//! Per-group feature computations for a single (series, day) cell.
//!
//! Missing values are `NaN` throughout.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::data::{CalendarRow, PanelDataset, SNAP_STATES};

use super::spec::SnapMode;

/// Read access to daily sales of the bottom-level series.
pub trait SalesSource: Sync {
    /// Sales of series `s` on a 1-based day, `None` when unavailable.
    fn sale(&self, s: usize, day: usize) -> Option<f64>;
}

/// Observed sales up to `observed_until`, optionally followed by a buffer of
/// forecasts. Counts how many reads were served from the buffer.
pub struct SalesView<'a> {
    panel: &'a PanelDataset,
    observed_until: usize,
    buffer: Option<&'a [Vec<f64>]>,
    buffer_reads: AtomicUsize,
}

impl<'a> SalesView<'a> {
    /// All observed days.
    pub fn observed(panel: &'a PanelDataset) -> Self {
        SalesView {
            panel,
            observed_until: panel.n_days(),
            buffer: None,
            buffer_reads: AtomicUsize::new(0),
        }
    }

    /// Observed days up to `last_day`; later days are missing.
    pub fn truncated(panel: &'a PanelDataset, last_day: usize) -> Self {
        SalesView {
            panel,
            observed_until: last_day.min(panel.n_days()),
            buffer: None,
            buffer_reads: AtomicUsize::new(0),
        }
    }

    /// Observed days up to `last_day`, then `buffer[s][k]` for day
    /// `last_day + 1 + k`.
    pub fn with_buffer(panel: &'a PanelDataset, last_day: usize, buffer: &'a [Vec<f64>]) -> Self {
        SalesView {
            buffer: Some(buffer),
            ..SalesView::truncated(panel, last_day)
        }
    }

    pub fn panel(&self) -> &'a PanelDataset {
        self.panel
    }

    pub fn observed_until(&self) -> usize {
        self.observed_until
    }

    pub fn buffer_reads(&self) -> usize {
        self.buffer_reads.load(Ordering::Relaxed)
    }
}

impl SalesSource for SalesView<'_> {
    fn sale(&self, s: usize, day: usize) -> Option<f64> {
        if day == 0 || !self.panel.is_active(s, day) {
            return None;
        }
        if day <= self.observed_until {
            return Some(self.panel.sale(s, day));
        }
        let buf = self.buffer?;
        let v = *buf[s].get(day - self.observed_until - 1)?;
        self.buffer_reads.fetch_add(1, Ordering::Relaxed);
        Some(v)
    }
}

/// Mean target per category of one id column over a training day range.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEncoding {
    /// Mean per code; `NaN` for codes absent from the training range.
    pub means: Vec<f64>,
    pub global_mean: f64,
}

impl TargetEncoding {
    pub fn encode(&self, code: u32) -> f64 {
        match self.means.get(code as usize) {
            Some(m) if !m.is_nan() => *m,
            _ => self.global_mean,
        }
    }

    /// Named view using the panel vocabulary of `column`.
    pub fn by_name(&self, panel: &PanelDataset, column: usize) -> BTreeMap<String, f64> {
        let v = panel.vocab();
        let names = [&v.item, &v.dept, &v.cat, &v.store, &v.state][column];
        names
            .iter()
            .enumerate()
            .map(|(c, n)| (n.clone(), self.encode(c as u32)))
            .collect()
    }
}

/// Mean sales per category of id column `column` over active observed rows
/// whose day lies in `train_days`.
pub fn mean_target_encode(panel: &PanelDataset, column: usize, train_days: RangeInclusive<usize>) -> TargetEncoding {
    let card = panel.vocab().cardinalities()[column];
    let mut sum = vec![0.0; card];
    let mut cnt = vec![0usize; card];
    let (mut tsum, mut tcnt) = (0.0, 0usize);
    let lo = *train_days.start();
    let hi = (*train_days.end()).min(panel.n_days());
    for s in 0..panel.n_series() {
        let Some(first) = panel.first_active_day(s) else {
            continue;
        };
        let c = panel.codes(s)[column] as usize;
        for day in lo.max(first).max(1)..=hi {
            let y = panel.sale(s, day);
            sum[c] += y;
            cnt[c] += 1;
            tsum += y;
            tcnt += 1;
        }
    }
    let global_mean = if tcnt == 0 { 0.0 } else { tsum / tcnt as f64 };
    TargetEncoding {
        means: sum
            .iter()
            .zip(&cnt)
            .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect(),
        global_mean,
    }
}

/// Price statistics `[current, max, min, mean, std, n_unique]` over all
/// priced weeks up to and including the week of `day`. Std is the
/// population standard deviation across weeks.
pub fn price_features(panel: &PanelDataset, s: usize, day: usize) -> [f64; 6] {
    let w = panel.week_ordinal(day);
    let history: Vec<f64> = panel.weekly_prices(s)[..=w]
        .iter()
        .copied()
        .filter(|p| !p.is_nan())
        .collect();
    let current = panel.weekly_prices(s)[w];
    if history.is_empty() {
        return [f64::NAN; 6];
    }
    let n = history.len() as f64;
    let mean = history.iter().sum::<f64>() / n;
    let var = history.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    let mut uniq = history.clone();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    [
        current,
        history.iter().copied().fold(f64::MIN, f64::max),
        history.iter().copied().fold(f64::MAX, f64::min),
        mean,
        var.sqrt(),
        uniq.len() as f64,
    ]
}

/// Price statistics for every week ordinal of series `s`, built in one pass.
/// Agrees with [`price_features`] for every day of the week.
pub(crate) fn weekly_price_table(panel: &PanelDataset, s: usize) -> Vec<[f64; 6]> {
    let prices = panel.weekly_prices(s);
    let mut out = Vec::with_capacity(prices.len());
    let mut seen: Vec<f64> = Vec::new();
    let (mut max, mut min) = (f64::MIN, f64::MAX);
    for &p in prices {
        if !p.is_nan() {
            seen.push(p);
            max = max.max(p);
            min = min.min(p);
        }
        if seen.is_empty() {
            out.push([f64::NAN; 6]);
            continue;
        }
        let n = seen.len() as f64;
        let mean = seen.iter().sum::<f64>() / n;
        let var = seen.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n;
        let mut uniq = seen.clone();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        out.push([p, max, min, mean, var.sqrt(), uniq.len() as f64]);
    }
    out
}

/// Event class code: 0 for no event, 1..=4 for the four event types.
fn event_code(t: Option<crate::data::EventType>) -> f64 {
    t.map_or(0.0, |e| e.code() as f64)
}

/// Calendar columns in roster order: wday, month, year, event type of both
/// slots, then SNAP columns according to `snap`.
pub fn calendar_features(row: &CalendarRow, state_id: &str, snap: SnapMode) -> Vec<f64> {
    let mut out = vec![
        row.wday as f64,
        row.month as f64,
        row.year as f64,
        event_code(row.event_type_1),
        event_code(row.event_type_2),
    ];
    if matches!(snap, SnapMode::Own | SnapMode::OwnAndAll) {
        out.push(row.snap_for(state_id) as f64);
    }
    if matches!(snap, SnapMode::All | SnapMode::OwnAndAll) {
        out.extend((0..SNAP_STATES.len()).map(|i| row.snap[i] as f64));
    }
    out
}

/// Sales `lag` days before `day`.
pub fn lag_value(src: &impl SalesSource, s: usize, day: usize, lag: usize) -> f64 {
    day.checked_sub(lag)
        .and_then(|d| src.sale(s, d))
        .unwrap_or(f64::NAN)
}

/// Sales at `base + k` days back for each `k`.
pub fn lag_features(src: &impl SalesSource, s: usize, day: usize, base: usize, ks: &[usize]) -> Vec<f64> {
    ks.iter().map(|k| lag_value(src, s, day, base + k)).collect()
}

/// Mean and population std of the `window` days ending `lag` days before
/// `day`. Missing when any day of the window is unavailable.
pub fn rolling_stats(src: &impl SalesSource, s: usize, day: usize, lag: usize, window: usize) -> (f64, f64) {
    let Some(end) = day.checked_sub(lag) else {
        return (f64::NAN, f64::NAN);
    };
    if end < window {
        return (f64::NAN, f64::NAN);
    }
    let mut vals = Vec::with_capacity(window);
    for d in end + 1 - window..=end {
        match src.sale(s, d) {
            Some(v) => vals.push(v),
            None => return (f64::NAN, f64::NAN),
        }
    }
    let n = window as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `[mean_w1, std_w1, mean_w2, std_w2, ...]` for windows ending `lag` days
/// back.
pub fn lag_rolling_features(src: &impl SalesSource, s: usize, day: usize, lag: usize, windows: &[usize]) -> Vec<f64> {
    windows
        .iter()
        .flat_map(|&w| {
            let (m, sd) = rolling_stats(src, s, day, lag, w);
            [m, sd]
        })
        .collect()
}

/// Rolling statistics ending 28 days back.
pub fn rolling_features(src: &impl SalesSource, s: usize, day: usize, windows: &[usize]) -> Vec<f64> {
    lag_rolling_features(src, s, day, crate::HORIZON, windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<Option<f64>>);

    impl SalesSource for Fixed {
        fn sale(&self, _s: usize, day: usize) -> Option<f64> {
            self.0.get(day.checked_sub(1)?).copied().flatten()
        }
    }

    fn ramp(n: usize) -> Fixed {
        Fixed((1..=n).map(|d| Some(d as f64)).collect())
    }

    #[test]
    fn lags_read_the_right_day() {
        let src = ramp(100);
        assert_eq!(lag_features(&src, 0, 60, 28, &[1, 2, 14]), vec![31.0, 30.0, 18.0]);
        let early = lag_features(&src, 0, 30, 28, &[1, 2]);
        assert_eq!(early[0], 1.0);
        assert!(early[1].is_nan());
    }

    #[test]
    fn constant_window_has_zero_std() {
        let src = Fixed(vec![Some(3.0); 100]);
        let f = rolling_features(&src, 0, 90, &[7, 56]);
        assert_eq!(f, vec![3.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn rolling_matches_hand_values() {
        let src = ramp(100);
        // window ending day 50 - 28 = 22, length 4: days 19..=22
        let (m, sd) = rolling_stats(&src, 0, 50, 28, 4);
        assert_eq!(m, 20.5);
        assert!((sd - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn window_reaching_missing_day_is_missing() {
        let mut v: Vec<Option<f64>> = vec![Some(1.0); 100];
        v[9] = None;
        let src = Fixed(v);
        assert!(rolling_stats(&src, 0, 45, 28, 8).0.is_nan());
        assert!(!rolling_stats(&src, 0, 46, 28, 7).0.is_nan());
        assert!(rolling_stats(&src, 0, 20, 28, 7).0.is_nan());
    }

    #[test]
    fn lag_rolling_at_horizon_equals_rolling() {
        let src = ramp(200);
        assert_eq!(
            lag_rolling_features(&src, 0, 150, 28, &[7, 14]),
            rolling_features(&src, 0, 150, &[7, 14])
        );
    }
}
