//! The 12-level aggregation scheme and the dollar-sales series weights.
//!
//! | level | grouping          | M5 count |
//! |-------|-------------------|----------|
//! | 1     | total             | 1        |
//! | 2     | state             | 3        |
//! | 3     | store             | 10       |
//! | 4     | category          | 3        |
//! | 5     | department        | 7        |
//! | 6     | state, category   | 9        |
//! | 7     | state, department | 21       |
//! | 8     | store, category   | 30       |
//! | 9     | store, department | 70       |
//! | 10    | item              | 3,049    |
//! | 11    | item, state       | 9,147    |
//! | 12    | item, store       | 30,490   |
//!
//! Every aggregate series is the plain sum of its bottom-level members.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::data::{PanelDataset, SeriesIds};
use crate::error::{Error, Result};
use crate::grid::ForecastGrid;

pub const N_LEVELS: usize = 12;

/// Bottom level (product × store).
pub const BOTTOM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    State,
    Store,
    Category,
    Department,
    Item,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSpec {
    pub level: usize,
    pub keys: &'static [GroupKey],
    /// Series count on the full M5 key set.
    pub full_count: usize,
    pub description: &'static str,
}

use GroupKey::*;

pub const LEVELS: [LevelSpec; N_LEVELS] = [
    LevelSpec { level: 1, keys: &[], full_count: 1, description: "Total" },
    LevelSpec { level: 2, keys: &[State], full_count: 3, description: "State" },
    LevelSpec { level: 3, keys: &[Store], full_count: 10, description: "Store" },
    LevelSpec { level: 4, keys: &[Category], full_count: 3, description: "Category" },
    LevelSpec { level: 5, keys: &[Department], full_count: 7, description: "Department" },
    LevelSpec { level: 6, keys: &[State, Category], full_count: 9, description: "State/Category" },
    LevelSpec { level: 7, keys: &[State, Department], full_count: 21, description: "State/Department" },
    LevelSpec { level: 8, keys: &[Store, Category], full_count: 30, description: "Store/Category" },
    LevelSpec { level: 9, keys: &[Store, Department], full_count: 70, description: "Store/Department" },
    LevelSpec { level: 10, keys: &[Item], full_count: 3049, description: "Product" },
    LevelSpec { level: 11, keys: &[Item, State], full_count: 9147, description: "Product/State" },
    LevelSpec { level: 12, keys: &[Item, Store], full_count: 30490, description: "Product/Store" },
];

pub fn level_spec(level: usize) -> &'static LevelSpec {
    &LEVELS[level - 1]
}

/// Series id of the aggregate containing `ids` at `level`, following the
/// M5 naming (`Total_X`, `CA_X`, `CA_1_FOODS`, `FOODS_1_001_CA_1`, ...).
pub fn series_key(level: usize, ids: &SeriesIds) -> String {
    let part = |k: &GroupKey| match k {
        State => ids.state_id.as_str(),
        Store => ids.store_id.as_str(),
        Category => ids.cat_id.as_str(),
        Department => ids.dept_id.as_str(),
        Item => ids.item_id.as_str(),
    };
    let keys = level_spec(level).keys;
    match keys {
        [] => "Total_X".to_string(),
        [one] => format!("{}_X", part(one)),
        // item-first levels
        [Item, other] => format!("{}_{}", ids.item_id, part(other)),
        [a, b] => format!("{}_{}", part(a), part(b)),
        _ => unreachable!("at most two grouping keys"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub key: String,
    /// Bottom-level series indices (panel order), ascending.
    pub members: Vec<usize>,
}

/// Membership of every bottom-level series in each of the 12 levels.
///
/// Level 12 keeps the panel's series order; the other levels are sorted by
/// key.
#[derive(Debug, Clone)]
pub struct HierarchyIndex {
    levels: Vec<Vec<AggregateSeries>>,
    group_of: Vec<Vec<usize>>,
}

pub fn build_hierarchy(panel: &PanelDataset) -> Result<HierarchyIndex> {
    HierarchyIndex::from_series(panel.series())
}

impl HierarchyIndex {
    pub fn from_series(series: &[SeriesIds]) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::validation("cannot build a hierarchy over zero series"));
        }
        let mut levels = Vec::with_capacity(N_LEVELS);
        let mut group_of = Vec::with_capacity(N_LEVELS);
        for level in 1..=N_LEVELS {
            let groups: Vec<AggregateSeries> = if level == BOTTOM {
                series
                    .iter()
                    .enumerate()
                    .map(|(s, ids)| AggregateSeries {
                        key: series_key(level, ids),
                        members: vec![s],
                    })
                    .collect()
            } else {
                let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
                for (s, ids) in series.iter().enumerate() {
                    map.entry(series_key(level, ids)).or_default().push(s);
                }
                map.into_iter()
                    .map(|(key, members)| AggregateSeries { key, members })
                    .collect()
            };
            let mut of = vec![usize::MAX; series.len()];
            for (g, agg) in groups.iter().enumerate() {
                for &m in &agg.members {
                    of[m] = g;
                }
            }
            levels.push(groups);
            group_of.push(of);
        }
        Ok(HierarchyIndex { levels, group_of })
    }

    pub fn level(&self, level: usize) -> &[AggregateSeries] {
        &self.levels[level - 1]
    }

    pub fn level_count(&self, level: usize) -> usize {
        self.levels[level - 1].len()
    }

    pub fn counts(&self) -> [usize; N_LEVELS] {
        std::array::from_fn(|i| self.levels[i].len())
    }

    pub fn total_series(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn n_bottom(&self) -> usize {
        self.group_of[0].len()
    }

    /// Aggregate index of bottom-level series `s` at `level`.
    pub fn group_of(&self, level: usize, s: usize) -> usize {
        self.group_of[level - 1][s]
    }

    pub fn keys(&self, level: usize) -> Vec<String> {
        self.level(level).iter().map(|a| a.key.clone()).collect()
    }

    /// Sum bottom-level rows (indexed by panel series) into `level`.
    /// Reductions run in ascending member order.
    pub fn aggregate_rows<R: AsRef<[f64]>>(&self, level: usize, bottom: &[R]) -> Vec<Vec<f64>> {
        let width = bottom.first().map_or(0, |r| r.as_ref().len());
        self.level(level)
            .iter()
            .map(|agg| {
                let mut acc = vec![0.0; width];
                for &m in &agg.members {
                    for (a, v) in acc.iter_mut().zip(bottom[m].as_ref()) {
                        *a += v;
                    }
                }
                acc
            })
            .collect()
    }

    /// Aggregate a bottom-level grid to `level`. The input may list the
    /// bottom series in any order but must contain all of them.
    pub fn aggregate(&self, grid: &ForecastGrid, level: usize) -> Result<ForecastGrid> {
        if grid.level() != BOTTOM {
            return Err(Error::validation(format!(
                "aggregation needs a level-12 grid, got level {}",
                grid.level()
            )));
        }
        let idx = grid.key_index();
        let bottom_keys = self.keys(BOTTOM);
        let mut rows: Vec<&[f64]> = Vec::with_capacity(bottom_keys.len());
        for k in &bottom_keys {
            let i = idx
                .get(k.as_str())
                .ok_or_else(|| Error::missing("member series", k.clone()))?;
            rows.push(grid.row(*i));
        }
        ForecastGrid::new(
            level,
            self.keys(level),
            grid.first_day(),
            self.aggregate_rows(level, &rows),
        )
    }

    /// All 12 levels of a bottom-level grid.
    pub fn aggregate_all(&self, grid: &ForecastGrid) -> Result<Vec<ForecastGrid>> {
        (1..=N_LEVELS).map(|l| self.aggregate(grid, l)).collect()
    }
}

/// Per-series weights `w_i`: share of dollar sales in a 28-day window,
/// normalized so each level sums to 1/12.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    levels: Vec<Vec<(String, f64)>>,
    lookup: HashMap<(usize, String), usize>,
}

/// Weight window length in days.
pub const WEIGHT_WINDOW: usize = 28;

pub fn compute_weights(panel: &PanelDataset, index: &HierarchyIndex, last_day: usize) -> Result<WeightTable> {
    if last_day < WEIGHT_WINDOW {
        return Err(Error::validation(format!(
            "weight window needs last_day >= {WEIGHT_WINDOW}, got {last_day}"
        )));
    }
    if last_day > panel.n_days() {
        return Err(Error::validation(format!(
            "weight window ends at day {last_day} beyond the observed {} days",
            panel.n_days()
        )));
    }
    let first = last_day + 1 - WEIGHT_WINDOW;
    let mut dollars = Vec::with_capacity(panel.n_series());
    for s in 0..panel.n_series() {
        let mut total = 0.0;
        for day in first..=last_day {
            let units = panel.sale(s, day);
            if units == 0.0 {
                continue;
            }
            let price = panel.price(s, day).ok_or_else(|| {
                Error::missing(
                    "price for sold units",
                    format!("{} on d_{day}", panel.series()[s].key()),
                )
            })?;
            total += units * price;
        }
        dollars.push(total);
    }
    WeightTable::from_bottom_dollars(index, &dollars)
}

impl WeightTable {
    /// Weights from bottom-level dollar sales (panel order).
    pub fn from_bottom_dollars(index: &HierarchyIndex, dollars: &[f64]) -> Result<Self> {
        let grand: f64 = dollars.iter().sum();
        if !(grand > 0.0) {
            return Err(Error::validation("zero dollar sales in the weighting window"));
        }
        let rows: Vec<[f64; 1]> = dollars.iter().map(|d| [*d]).collect();
        let mut levels = Vec::with_capacity(N_LEVELS);
        for level in 1..=N_LEVELS {
            let sums = index.aggregate_rows(level, &rows);
            let entries = index
                .level(level)
                .iter()
                .zip(sums)
                .map(|(agg, d)| (agg.key.clone(), d[0] / grand / N_LEVELS as f64))
                .collect();
            levels.push(entries);
        }
        Ok(Self::from_levels(levels))
    }

    /// Build from explicit per-level `(key, weight)` lists (level 1 first).
    pub fn from_levels(levels: Vec<Vec<(String, f64)>>) -> Self {
        let mut lookup = HashMap::new();
        for (l, entries) in levels.iter().enumerate() {
            for (i, (k, _)) in entries.iter().enumerate() {
                lookup.insert((l + 1, k.clone()), i);
            }
        }
        WeightTable { levels, lookup }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, level: usize) -> &[(String, f64)] {
        &self.levels[level - 1]
    }

    pub fn get(&self, level: usize, key: &str) -> Option<f64> {
        self.lookup
            .get(&(level, key.to_string()))
            .map(|&i| self.levels[level - 1][i].1)
    }

    /// `(level, key, weight)` in level-then-hierarchy order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, f64)> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(l, e)| e.iter().map(move |(k, w)| (l + 1, k.as_str(), *w)))
    }

    pub fn level_total(&self, level: usize) -> f64 {
        self.levels[level - 1].iter().map(|(_, w)| w).sum()
    }

    pub fn total(&self) -> f64 {
        self.iter().map(|(_, _, w)| w).sum()
    }

    /// Audit export: `level,series_id,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Format {
            path: "<weights>".into(),
            message: e.to_string(),
        };
        w.write_record(["level", "series_id", "weight"]).map_err(err)?;
        for (l, k, v) in self.iter() {
            w.write_record([l.to_string(), k.to_string(), format!("{v}")])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<weights>", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(item: &str, dept: &str, cat: &str, store: &str, state: &str) -> SeriesIds {
        SeriesIds {
            item_id: item.into(),
            dept_id: dept.into(),
            cat_id: cat.into(),
            store_id: store.into(),
            state_id: state.into(),
        }
    }

    #[test]
    fn level_table_matches_m5_counts() {
        let counts: Vec<usize> = LEVELS.iter().map(|l| l.full_count).collect();
        assert_eq!(counts, [1, 3, 10, 3, 7, 9, 21, 30, 70, 3049, 9147, 30490]);
        assert_eq!(counts.iter().sum::<usize>(), 42_840);
    }

    #[test]
    fn collapsed_levels_for_two_items() {
        let s = vec![
            ids("I1", "D1", "C1", "S1", "CA"),
            ids("I2", "D1", "C1", "S1", "CA"),
        ];
        let h = HierarchyIndex::from_series(&s).unwrap();
        assert_eq!(h.counts(), [1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2]);
        assert_eq!(h.total_series(), 15);
    }

    #[test]
    fn empty_rejected() {
        assert!(HierarchyIndex::from_series(&[]).is_err());
    }

    #[test]
    fn key_naming() {
        let i = ids("FOODS_1_001", "FOODS_1", "FOODS", "CA_1", "CA");
        let keys: Vec<String> = (1..=12).map(|l| series_key(l, &i)).collect();
        assert_eq!(
            keys,
            [
                "Total_X",
                "CA_X",
                "CA_1_X",
                "FOODS_X",
                "FOODS_1_X",
                "CA_FOODS",
                "CA_FOODS_1",
                "CA_1_FOODS",
                "CA_1_FOODS_1",
                "FOODS_1_001_X",
                "FOODS_1_001_CA",
                "FOODS_1_001_CA_1"
            ]
        );
    }

    #[test]
    fn store_level_sums_items() {
        let s = vec![
            ids("I1", "D1", "C1", "S1", "CA"),
            ids("I2", "D1", "C1", "S1", "CA"),
        ];
        let h = HierarchyIndex::from_series(&s).unwrap();
        let g = ForecastGrid::new(12, h.keys(12), 1, vec![vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(h.aggregate(&g, 3).unwrap().row(0), &[7.0]);
        assert_eq!(h.aggregate(&g, 12).unwrap(), g);
    }

    #[test]
    fn aggregate_missing_member_is_error() {
        let s = vec![
            ids("I1", "D1", "C1", "S1", "CA"),
            ids("I2", "D1", "C1", "S1", "CA"),
        ];
        let h = HierarchyIndex::from_series(&s).unwrap();
        let g = ForecastGrid::new(12, vec!["I1_S1".into()], 1, vec![vec![3.0]]).unwrap();
        assert!(matches!(h.aggregate(&g, 1), Err(Error::Missing { .. })));
    }

    #[test]
    fn weights_two_series() {
        let s = vec![
            ids("I1", "D1", "C1", "S1", "CA"),
            ids("I2", "D1", "C1", "S1", "CA"),
        ];
        let h = HierarchyIndex::from_series(&s).unwrap();
        let w = WeightTable::from_bottom_dollars(&h, &[30.0, 10.0]).unwrap();
        assert!((w.get(12, "I1_S1").unwrap() - 0.75 / 12.0).abs() < 1e-15);
        assert!((w.get(12, "I2_S1").unwrap() - 0.25 / 12.0).abs() < 1e-15);
        assert!((w.get(1, "Total_X").unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert!((w.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_sales_gets_zero_weight() {
        let s = vec![
            ids("I1", "D1", "C1", "S1", "CA"),
            ids("I2", "D1", "C1", "S1", "CA"),
        ];
        let h = HierarchyIndex::from_series(&s).unwrap();
        let w = WeightTable::from_bottom_dollars(&h, &[5.0, 0.0]).unwrap();
        assert_eq!(w.get(12, "I2_S1"), Some(0.0));
        assert!(WeightTable::from_bottom_dollars(&h, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn weights_csv_export() {
        let s = vec![ids("I1", "D1", "C1", "S1", "CA")];
        let h = HierarchyIndex::from_series(&s).unwrap();
        let w = WeightTable::from_bottom_dollars(&h, &[1.0]).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("level,series_id,weight\n1,Total_X,"));
    }
}
