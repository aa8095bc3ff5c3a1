//! Synthetic M5-shaped panels for tests, benchmarks and demos.
//!
//! Daily unit sales are Poisson draws around a multiplicative rate: item
//! base level × store factor × weekday profile × annual season × event and
//! SNAP effects × price response × idiosyncratic log-normal noise per
//! (series, day). Late-released items are unpriced (inactive) before their
//! release week. With the defaults roughly two thirds of the observed
//! cells are zero.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_panel, write_calendar, write_prices, write_sales, CalendarRow, EventType, PanelDataset, PriceRow,
    SalesWide, SeriesIds,
};
use crate::error::{Error, Result};
use crate::HORIZON;

const STATES: [&str; 3] = ["CA", "TX", "WI"];
const CATEGORIES: [(&str, usize); 3] = [("FOODS", 3), ("HOBBIES", 2), ("HOUSEHOLD", 2)];
const WEEKDAYS: [&str; 7] = [
    "Saturday", "Sunday", "Monday", "Tuesday", "Wednesday", "Thursday", "Friday",
];

/// (name, type, month, day, second-slot event on the same date)
const EVENTS: [(&str, EventType, u32, u32, Option<(&str, EventType)>); 7] = [
    ("SuperBowl", EventType::Sporting, 2, 6, None),
    ("ValentinesDay", EventType::Cultural, 2, 14, None),
    ("Easter", EventType::Cultural, 4, 12, Some(("OrthodoxEaster", EventType::Religious))),
    ("IndependenceDay", EventType::National, 7, 4, None),
    ("Halloween", EventType::Cultural, 10, 31, None),
    ("Thanksgiving", EventType::National, 11, 24, None),
    ("Christmas", EventType::National, 12, 25, None),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Observed days; the calendar and prices extend 28 days further.
    pub n_days: usize,
    /// Stores are assigned to CA, TX, WI in turn.
    pub n_stores: usize,
    /// Items in each of the seven departments.
    pub items_per_dept: usize,
    /// Median of the item base rate (units per day).
    pub base_rate: f64,
    /// Log-scale spread of item base rates.
    pub base_spread: f64,
    /// Log-scale std of the per-(series, day) noise.
    pub noise_sigma: f64,
    /// Fraction of items released after day 1.
    pub late_release_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 42,
            n_days: 1100,
            n_stores: 10,
            items_per_dept: 3,
            base_rate: 0.3,
            base_spread: 1.1,
            noise_sigma: 0.5,
            late_release_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub sales: SalesWide,
    pub calendar: Vec<CalendarRow>,
    pub prices: Vec<PriceRow>,
}

impl SyntheticData {
    pub fn panel(&self) -> Result<PanelDataset> {
        build_panel(self.sales.clone(), self.calendar.clone(), self.prices.clone())
    }

    /// Write `sales.csv`, `calendar.csv` and `prices.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        let mut f = open("sales.csv")?;
        write_sales(&self.sales, &mut f)?;
        f.flush().map_err(|e| Error::io(dir.join("sales.csv"), e))?;
        let mut f = open("calendar.csv")?;
        write_calendar(&self.calendar, &mut f)?;
        f.flush().map_err(|e| Error::io(dir.join("calendar.csv"), e))?;
        let mut f = open("prices.csv")?;
        write_prices(&self.prices, &mut f)?;
        f.flush().map_err(|e| Error::io(dir.join("prices.csv"), e))
    }
}

fn week_key(w: usize) -> u32 {
    (100 * (111 + w / 52) + w % 52 + 1) as u32
}

fn snap_flags(mday: u32) -> [u8; 3] {
    [
        (mday <= 10) as u8,
        [1, 3, 5, 6, 7, 9, 11, 12, 15].contains(&mday) as u8,
        [2, 3, 5, 6, 8, 9, 11, 12, 14, 15].contains(&mday) as u8,
    ]
}

/// Calendar of `n` days starting on Saturday 2011-01-29.
pub fn synthetic_calendar(n: usize) -> Vec<CalendarRow> {
    let start = NaiveDate::from_ymd_opt(2011, 1, 29).unwrap();
    (0..n)
        .map(|i| {
            let date = start + Duration::days(i as i64);
            let event = EVENTS
                .iter()
                .find(|e| e.2 == date.month() && e.3 == date.day());
            CalendarRow {
                date,
                d_index: i + 1,
                wm_yr_wk: week_key(i / 7),
                weekday: WEEKDAYS[i % 7].to_string(),
                wday: (i % 7 + 1) as u8,
                month: date.month() as u8,
                year: date.year(),
                event_name_1: event.map(|e| e.0.to_string()),
                event_type_1: event.map(|e| e.1),
                event_name_2: event.and_then(|e| e.4).map(|e| e.0.to_string()),
                event_type_2: event.and_then(|e| e.4).map(|e| e.1),
                snap: snap_flags(date.day()),
            }
        })
        .collect()
}

/// Generate a panel. Deterministic in the config.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.n_days < 1 || cfg.n_stores < 1 || cfg.items_per_dept < 1 {
        return Err(Error::Config("synthetic panel needs days, stores and items".into()));
    }
    if !(cfg.base_rate > 0.0) || cfg.base_spread < 0.0 || cfg.noise_sigma < 0.0 {
        return Err(Error::Config("synthetic rates must be positive and spreads non-negative".into()));
    }
    let n_cal = cfg.n_days + HORIZON;
    let calendar = synthetic_calendar(n_cal);
    let n_weeks = n_cal.div_ceil(7);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Stores.
    let mut per_state = [0usize; 3];
    let stores: Vec<(String, &str, f64)> = (0..cfg.n_stores)
        .map(|j| {
            let st = j % 3;
            per_state[st] += 1;
            let factor = LogNormal::new(0.0, 0.3).unwrap().sample(&mut rng);
            (format!("{}_{}", STATES[st], per_state[st]), STATES[st], factor)
        })
        .collect();

    // Items.
    struct Item {
        id: String,
        dept: String,
        cat: &'static str,
        base: f64,
        price: f64,
        release_week: usize,
        weekday: [f64; 7],
    }
    let base_dist = LogNormal::new(cfg.base_rate.ln(), cfg.base_spread).unwrap();
    let mut items = Vec::new();
    for (cat, n_dept) in CATEGORIES {
        for d in 1..=n_dept {
            for k in 1..=cfg.items_per_dept {
                let release_week = if rng.random::<f64>() < cfg.late_release_fraction {
                    rng.random_range(1..(n_weeks / 2).max(2))
                } else {
                    0
                };
                let weekend = if cat == "FOODS" { 1.35 } else { 1.2 };
                let mut weekday = [1.0; 7];
                weekday[0] = weekend;
                weekday[1] = weekend;
                weekday[6] = 1.05;
                items.push(Item {
                    id: format!("{cat}_{d}_{k:03}"),
                    dept: format!("{cat}_{d}"),
                    cat,
                    base: base_dist.sample(&mut rng),
                    price: (LogNormal::<f64>::new(1.2, 0.6).unwrap().sample(&mut rng) * 100.0).round() / 100.0 + 0.01,
                    release_week,
                    weekday,
                });
            }
        }
    }

    let mut series = Vec::new();
    for (store, state, _) in &stores {
        for it in &items {
            series.push(SeriesIds {
                item_id: it.id.clone(),
                dept_id: it.dept.clone(),
                cat_id: it.cat.to_string(),
                store_id: store.clone(),
                state_id: state.to_string(),
            });
        }
    }

    let seed = cfg.seed;
    let n_items = items.len();
    let generated: Vec<(Vec<f64>, Vec<PriceRow>)> = (0..series.len())
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64 + 1);
            let it = &items[s % n_items];
            let (store, state, store_factor) = &stores[s / n_items];
            let snap_idx = STATES.iter().position(|x| x == state).unwrap();
            let noise = Normal::new(-0.5 * cfg.noise_sigma.powi(2), cfg.noise_sigma.max(1e-12)).unwrap();
            let store_price = it.price * (1.0 + 0.05 * (rng.random::<f64>() - 0.5));

            let mut weekly = vec![f64::NAN; n_weeks];
            let mut prices = Vec::new();
            for (w, slot) in weekly.iter_mut().enumerate().skip(it.release_week) {
                let inflation = 1.0 + 0.02 * (w as f64 / 52.0);
                let discount = if rng.random::<f64>() < 0.08 {
                    1.0 - rng.random_range(0.1..0.3)
                } else {
                    1.0
                };
                let p = ((store_price * inflation * discount) * 100.0).round() / 100.0;
                let p = p.max(0.01);
                *slot = p;
                prices.push(PriceRow {
                    store_id: store.clone(),
                    item_id: it.id.clone(),
                    wm_yr_wk: week_key(w),
                    sell_price: p,
                });
            }

            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let mut sales = Vec::with_capacity(cfg.n_days);
            for (i, cal) in calendar.iter().take(cfg.n_days).enumerate() {
                let w = i / 7;
                if w < it.release_week {
                    sales.push(0.0);
                    continue;
                }
                let season = 1.0 + 0.15 * ((i as f64) * std::f64::consts::TAU / 365.25 + phase).sin();
                let event = match cal.event_name_1.as_deref() {
                    Some("Christmas") => 0.02,
                    Some(_) => 1.25,
                    None => 1.0,
                };
                let snap = if it.cat == "FOODS" && cal.snap[snap_idx] == 1 { 1.15 } else { 1.0 };
                let price_resp = (weekly[w] / (store_price * (1.0 + 0.02 * (w as f64 / 52.0)))).powf(-1.5);
                let rate = it.base
                    * store_factor
                    * it.weekday[(cal.wday - 1) as usize]
                    * season
                    * event
                    * snap
                    * price_resp
                    * noise.sample(&mut rng).exp();
                let y = if rate > 0.0 {
                    Poisson::new(rate).map_or(0.0, |p| p.sample(&mut rng))
                } else {
                    0.0
                };
                sales.push(y);
            }
            (sales, prices)
        })
        .collect();

    let mut values = Vec::with_capacity(series.len());
    let mut prices = Vec::new();
    for (v, p) in generated {
        values.push(v);
        prices.extend(p);
    }
    Ok(SyntheticData {
        sales: SalesWide {
            series,
            n_days: cfg.n_days,
            values,
        },
        calendar,
        prices,
    })
}

/// Fraction of zero cells over active observed days.
pub fn zero_fraction(panel: &PanelDataset) -> f64 {
    let rows = panel.long_rows();
    rows.iter().filter(|r| r.2 == 0.0).count() as f64 / rows.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::build_hierarchy;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_days: 400,
            n_stores: 4,
            items_per_dept: 4,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn builds_a_valid_panel_with_mostly_zeros() {
        let data = generate(&small()).unwrap();
        let panel = data.panel().unwrap();
        assert_eq!(panel.n_series(), 4 * 7 * 4);
        let z = zero_fraction(&panel);
        assert!((0.55..0.8).contains(&z), "zero fraction {z}");
        let h = build_hierarchy(&panel).unwrap();
        assert_eq!(h.level_count(1), 1);
        assert_eq!(h.level_count(3), 4);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.sales.values, b.sales.values);
        assert_eq!(a.prices, b.prices);
        let c = generate(&SyntheticConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.sales.values, c.sales.values);
    }

    #[test]
    fn csv_round_trip() {
        let data = generate(&SyntheticConfig {
            n_days: 60,
            n_stores: 2,
            items_per_dept: 1,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.write_to(dir.path()).unwrap();
        let panel = crate::data::load_panel(
            dir.path().join("sales.csv"),
            dir.path().join("calendar.csv"),
            dir.path().join("prices.csv"),
        )
        .unwrap();
        assert_eq!(panel.to_wide(), data.sales);
    }
}
