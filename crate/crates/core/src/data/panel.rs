//! Validated in-memory panel joining sales, calendar and prices.

use std::collections::{BTreeSet, HashMap};

use super::calendar::CalendarRow;
use super::prices::PriceRow;
use super::sales::{SalesWide, SeriesIds};
use crate::error::{Error, Result};
use crate::HORIZON;

/// Sorted vocabularies of the five categorical id columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoricalVocab {
    pub item: Vec<String>,
    pub dept: Vec<String>,
    pub cat: Vec<String>,
    pub store: Vec<String>,
    pub state: Vec<String>,
}

impl CategoricalVocab {
    fn build(series: &[SeriesIds]) -> Self {
        fn uniq<'a>(it: impl Iterator<Item = &'a String>) -> Vec<String> {
            it.cloned().collect::<BTreeSet<_>>().into_iter().collect()
        }
        CategoricalVocab {
            item: uniq(series.iter().map(|s| &s.item_id)),
            dept: uniq(series.iter().map(|s| &s.dept_id)),
            cat: uniq(series.iter().map(|s| &s.cat_id)),
            store: uniq(series.iter().map(|s| &s.store_id)),
            state: uniq(series.iter().map(|s| &s.state_id)),
        }
    }

    /// Cardinalities in code order (item, dept, cat, store, state).
    pub fn cardinalities(&self) -> [usize; 5] {
        [
            self.item.len(),
            self.dept.len(),
            self.cat.len(),
            self.store.len(),
            self.state.len(),
        ]
    }
}

/// Index of each categorical code inside [`PanelDataset::codes`].
pub mod code {
    pub const ITEM: usize = 0;
    pub const DEPT: usize = 1;
    pub const CAT: usize = 2;
    pub const STORE: usize = 3;
    pub const STATE: usize = 4;
}

/// Long-format sales panel of the bottom-level series with calendar and
/// price side tables. Immutable after construction.
///
/// A series is *inactive* on days before the first calendar week in which it
/// has a price; inactive days are excluded from training rows.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    series: Vec<SeriesIds>,
    codes: Vec<[u32; 5]>,
    vocab: CategoricalVocab,
    sales: Vec<Vec<f64>>,
    first_active: Vec<Option<usize>>,
    calendar: Vec<CalendarRow>,
    week_of_day: Vec<usize>,
    weeks: Vec<u32>,
    weekly_price: Vec<Vec<f64>>,
    prices: Vec<PriceRow>,
    n_days: usize,
}

/// Join the three inputs into a panel.
pub fn build_panel(
    sales: SalesWide,
    calendar: Vec<CalendarRow>,
    prices: Vec<PriceRow>,
) -> Result<PanelDataset> {
    let n_days = sales.n_days;
    if sales.series.is_empty() {
        return Err(Error::validation("sales table has no series"));
    }
    if calendar.len() < n_days + HORIZON {
        return Err(Error::validation(format!(
            "calendar has {} days but {} observed days + {HORIZON}-day horizon are required",
            calendar.len(),
            n_days
        )));
    }
    for (i, r) in calendar.iter().enumerate() {
        if r.d_index != i + 1 {
            return Err(Error::validation(format!(
                "calendar day index gap at position {}",
                i + 1
            )));
        }
    }

    let mut weeks: Vec<u32> = Vec::new();
    let mut week_pos: HashMap<u32, usize> = HashMap::new();
    let mut week_of_day = Vec::with_capacity(calendar.len());
    for r in &calendar {
        let w = *week_pos.entry(r.wm_yr_wk).or_insert_with(|| {
            weeks.push(r.wm_yr_wk);
            weeks.len() - 1
        });
        if w + 1 != weeks.len() {
            return Err(Error::validation(format!(
                "calendar week {} is not contiguous (d_{})",
                r.wm_yr_wk, r.d_index
            )));
        }
        week_of_day.push(w);
    }

    let index: HashMap<(&str, &str), usize> = sales
        .series
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.store_id.as_str(), s.item_id.as_str()), i))
        .collect();
    let mut weekly_price = vec![vec![f64::NAN; weeks.len()]; sales.series.len()];
    let mut orphan = 0usize;
    for p in &prices {
        match (
            index.get(&(p.store_id.as_str(), p.item_id.as_str())),
            week_pos.get(&p.wm_yr_wk),
        ) {
            (Some(&s), Some(&w)) => weekly_price[s][w] = p.sell_price,
            _ => orphan += 1,
        }
    }
    if orphan > 0 {
        log::debug!("{orphan} price rows do not join to any series/calendar week");
    }

    let last_observed_week = week_of_day[n_days - 1];
    let mut first_active = Vec::with_capacity(sales.series.len());
    for (s, wp) in weekly_price.iter().enumerate() {
        let first_week = wp.iter().position(|p| !p.is_nan());
        if let Some(fw) = first_week {
            if let Some(gap) = (fw..=last_observed_week).find(|&w| wp[w].is_nan()) {
                return Err(Error::validation(format!(
                    "series {} has no price in week {} after its first priced week {}",
                    sales.series[s].key(),
                    weeks[gap],
                    weeks[fw]
                )));
            }
        }
        first_active.push(first_week.map(|fw| {
            week_of_day
                .iter()
                .position(|&w| w == fw)
                .expect("week came from the calendar")
                + 1
        }));
    }

    let vocab = CategoricalVocab::build(&sales.series);
    let pos = |v: &[String], k: &str| v.binary_search_by(|x| x.as_str().cmp(k)).unwrap() as u32;
    let codes = sales
        .series
        .iter()
        .map(|s| {
            [
                pos(&vocab.item, &s.item_id),
                pos(&vocab.dept, &s.dept_id),
                pos(&vocab.cat, &s.cat_id),
                pos(&vocab.store, &s.store_id),
                pos(&vocab.state, &s.state_id),
            ]
        })
        .collect();

    Ok(PanelDataset {
        series: sales.series,
        codes,
        vocab,
        sales: sales.values,
        first_active,
        calendar,
        week_of_day,
        weeks,
        weekly_price,
        prices,
        n_days,
    })
}

impl PanelDataset {
    /// Number of observed days (last day with known sales).
    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn series(&self) -> &[SeriesIds] {
        &self.series
    }

    pub fn codes(&self, s: usize) -> [u32; 5] {
        self.codes[s]
    }

    pub fn vocab(&self) -> &CategoricalVocab {
        &self.vocab
    }

    pub fn calendar(&self) -> &[CalendarRow] {
        &self.calendar
    }

    /// Calendar row of a 1-based day.
    pub fn calendar_day(&self, day: usize) -> Option<&CalendarRow> {
        day.checked_sub(1).and_then(|i| self.calendar.get(i))
    }

    pub fn price_rows(&self) -> &[PriceRow] {
        &self.prices
    }

    /// Observed sales of series `s`, index `d - 1` for day `d`.
    pub fn sales(&self, s: usize) -> &[f64] {
        &self.sales[s]
    }

    /// Sales on a 1-based day. Panics when the day is not observed.
    pub fn sale(&self, s: usize, day: usize) -> f64 {
        self.sales[s][day - 1]
    }

    /// First day with a price, searched over the whole calendar.
    pub fn first_active_day(&self, s: usize) -> Option<usize> {
        self.first_active[s]
    }

    pub fn is_active(&self, s: usize, day: usize) -> bool {
        self.first_active[s].is_some_and(|f| day >= f)
    }

    /// Week ordinal (0-based position in the calendar's week sequence).
    pub fn week_ordinal(&self, day: usize) -> usize {
        self.week_of_day[day - 1]
    }

    pub fn week_key(&self, ordinal: usize) -> u32 {
        self.weeks[ordinal]
    }

    /// Prices per week ordinal, `NaN` where the item was not on sale.
    pub fn weekly_prices(&self, s: usize) -> &[f64] {
        &self.weekly_price[s]
    }

    pub fn price(&self, s: usize, day: usize) -> Option<f64> {
        let p = self.weekly_price[s][self.week_of_day[day - 1]];
        (!p.is_nan()).then_some(p)
    }

    /// Active observed (series, day, sales) triples in series-major order.
    pub fn long_rows(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.active_row_count());
        for s in 0..self.n_series() {
            if let Some(f) = self.first_active[s] {
                for day in f..=self.n_days {
                    out.push((s, day, self.sales[s][day - 1]));
                }
            }
        }
        out
    }

    pub fn active_row_count(&self) -> usize {
        self.first_active
            .iter()
            .map(|f| f.map_or(0, |f| (self.n_days + 1).saturating_sub(f)))
            .sum()
    }

    /// Re-widen the panel to the sales table it was built from.
    pub fn to_wide(&self) -> SalesWide {
        SalesWide {
            series: self.series.clone(),
            n_days: self.n_days,
            values: self.sales.clone(),
        }
    }

    /// Panel restricted to the first `n_days` observed days. The calendar and
    /// prices are kept whole.
    pub fn truncate(&self, n_days: usize) -> Result<PanelDataset> {
        if n_days == 0 || n_days > self.n_days {
            return Err(Error::validation(format!(
                "cannot truncate a {}-day panel to {n_days} days",
                self.n_days
            )));
        }
        let mut p = self.clone();
        p.n_days = n_days;
        for row in &mut p.sales {
            row.truncate(n_days);
        }
        Ok(p)
    }

    /// Same panel with the observed sales replaced. Shape must match.
    pub fn with_sales(&self, values: Vec<Vec<f64>>) -> Result<PanelDataset> {
        if values.len() != self.n_series() || values.iter().any(|r| r.len() != self.n_days) {
            return Err(Error::validation("replacement sales have the wrong shape"));
        }
        if values.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(Error::validation("replacement sales must be non-negative"));
        }
        let mut p = self.clone();
        p.sales = values;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_calendar, parse_prices, parse_sales};

    pub(crate) fn calendar_csv(n: usize) -> String {
        let mut s = String::from("date,wm_yr_wk,weekday,wday,month,year,d,event_name_1,event_type_1,event_name_2,event_type_2,snap_CA,snap_TX,snap_WI\n");
        let start = chrono::NaiveDate::from_ymd_opt(2011, 1, 29).unwrap();
        for d in 1..=n {
            let date = start + chrono::Duration::days(d as i64 - 1);
            let week = 11101 + ((d - 1) / 7) as u32;
            s += &format!(
                "{},{week},Saturday,1,1,2011,d_{d},,,,,{},0,0\n",
                date.format("%Y-%m-%d"),
                (d % 2)
            );
        }
        s
    }

    fn panel(sales: &str, prices: &str, cal_days: usize) -> Result<PanelDataset> {
        build_panel(
            parse_sales(sales.as_bytes(), "s")?,
            parse_calendar(calendar_csv(cal_days).as_bytes(), "c")?,
            parse_prices(prices.as_bytes(), "p")?,
        )
    }

    const HDR: &str = "item_id,dept_id,cat_id,store_id,state_id";

    #[test]
    fn fully_priced_item() {
        let p = panel(
            &format!("{HDR},d_1,d_2,d_3,d_4,d_5\nI1,D,C,S1,CA,1,0,2,0,1\n"),
            "store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11101,2.0\n",
            33,
        )
        .unwrap();
        assert_eq!(p.long_rows().len(), 5);
        assert_eq!(p.first_active_day(0), Some(1));
        assert_eq!(p.price(0, 3), Some(2.0));
    }

    #[test]
    fn pre_release_days_are_inactive() {
        // Week 1 = days 1..7, week 2 = days 8..14. Priced only from week 2.
        let days: Vec<String> = (1..=10).map(|d| format!("d_{d}")).collect();
        let p = panel(
            &format!("{HDR},{}\nI1,D,C,S1,CA,0,0,0,0,0,0,0,1,2,3\n", days.join(",")),
            "store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11102,1.5\nS1,I1,11103,1.5\nS1,I1,11104,1.5\nS1,I1,11105,1.5\nS1,I1,11106,1.5\n",
            38,
        )
        .unwrap();
        assert_eq!(p.first_active_day(0), Some(8));
        assert!(!p.is_active(0, 7));
        assert!(p.is_active(0, 8));
        assert_eq!(p.active_row_count(), 3);
        assert_eq!(p.price(0, 1), None);
    }

    #[test]
    fn calendar_without_horizon_rejected() {
        let err = panel(
            &format!("{HDR},d_1,d_2,d_3,d_4,d_5\nI1,D,C,S1,CA,1,0,2,0,1\n"),
            "store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11101,2.0\n",
            5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn price_gap_rejected() {
        let days: Vec<String> = (1..=21).map(|d| format!("d_{d}")).collect();
        let zeros = vec!["0"; 21].join(",");
        let err = panel(
            &format!("{HDR},{}\nI1,D,C,S1,CA,{zeros}\n", days.join(",")),
            "store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11101,1\nS1,I1,11103,1\n",
            49,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn round_trip_and_row_count() {
        let p = panel(
            &format!("{HDR},d_1,d_2,d_3\nI1,D,C,S1,CA,1,2,3\nI2,D,C,S1,CA,0,0,4\n"),
            "store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11101,2.0\nS1,I2,11101,1.0\n",
            31,
        )
        .unwrap();
        let wide = p.to_wide();
        for (s, d, y) in p.long_rows() {
            assert_eq!(wide.values[s][d - 1], y);
        }
        assert_eq!(p.active_row_count(), 6);
        assert_eq!(p.vocab().item, vec!["I1", "I2"]);
        assert_eq!(p.codes(1)[code::ITEM], 1);
        // snap flags survive the join
        assert_eq!(p.calendar_day(1).unwrap().snap, [1, 0, 0]);
        assert_eq!(p.calendar_day(2).unwrap().snap, [0, 0, 0]);
    }
}
