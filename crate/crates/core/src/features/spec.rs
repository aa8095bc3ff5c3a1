//! Feature-set configuration and its expansion into named columns.

use serde::{Deserialize, Serialize};

use crate::data::{code, PanelDataset, SNAP_STATES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Categorical,
    Price,
    Calendar,
    Lag,
    Rolling,
    LagRolling,
}

impl FeatureGroup {
    /// True for columns derived from the sales history.
    pub fn is_sales_derived(self) -> bool {
        matches!(self, FeatureGroup::Lag | FeatureGroup::Rolling | FeatureGroup::LagRolling)
    }
}

/// Which SNAP columns to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapMode {
    /// Only the flag of the series' own state.
    Own,
    /// The three raw state flags.
    All,
    #[default]
    OwnAndAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceStat {
    Current,
    Max,
    Min,
    Mean,
    Std,
    NUnique,
}

pub const PRICE_STATS: [PriceStat; 6] = [
    PriceStat::Current,
    PriceStat::Max,
    PriceStat::Min,
    PriceStat::Mean,
    PriceStat::Std,
    PriceStat::NUnique,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalendarField {
    Wday,
    Month,
    Year,
    EventType1,
    EventType2,
    SnapOwn,
    /// Raw flag of `SNAP_STATES[i]`.
    Snap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Integer code of one of the five id columns (index into the code
    /// array, see [`crate::data::code`]).
    Code(usize),
    TargetEncoding(usize),
    Price(PriceStat),
    Calendar(CalendarField),
    /// Sales `lag` days before the row's day.
    Lag(usize),
    /// Mean of the `window` days ending `lag` days before the row's day.
    RollingMean { lag: usize, window: usize },
    RollingStd { lag: usize, window: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub group: FeatureGroup,
    pub kind: FeatureKind,
    /// `Some(cardinality)` for integer-coded categorical columns.
    pub cardinality: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategoricalConfig {
    pub codes: bool,
    pub target_encoding: bool,
}

impl Default for CategoricalConfig {
    fn default() -> Self {
        CategoricalConfig {
            codes: true,
            target_encoding: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggle {
    pub enabled: bool,
}

impl Default for Toggle {
    fn default() -> Self {
        Toggle { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalendarConfig {
    pub enabled: bool,
    pub snap: SnapMode,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        CalendarConfig {
            enabled: true,
            snap: SnapMode::OwnAndAll,
        }
    }
}

/// Lags `base + k` for each `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagConfig {
    pub base: usize,
    pub k: Vec<usize>,
}

impl Default for LagConfig {
    fn default() -> Self {
        LagConfig {
            base: 28,
            k: (1..=14).collect(),
        }
    }
}

/// Rolling mean/std over windows ending `shift` days back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RollingConfig {
    pub shift: usize,
    pub windows: Vec<usize>,
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig {
            shift: 28,
            windows: vec![7, 14, 28, 56],
        }
    }
}

/// Rolling mean/std for every (lag, window) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagRollingConfig {
    pub lags: Vec<usize>,
    pub windows: Vec<usize>,
}

impl Default for LagRollingConfig {
    fn default() -> Self {
        LagRollingConfig {
            lags: vec![35, 42, 56],
            windows: vec![7, 14, 28],
        }
    }
}

/// Feature spec file contents; one table per feature group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub categorical: CategoricalConfig,
    pub price: Toggle,
    pub calendar: CalendarConfig,
    pub lag: LagConfig,
    pub rolling: RollingConfig,
    pub lag_rolling: LagRollingConfig,
}

const CODE_NAMES: [&str; 5] = ["item", "dept", "cat", "store", "state"];

impl FeatureConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: FeatureConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("feature spec: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("feature config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: &[usize]| {
            if v.iter().any(|&x| x == 0) {
                Err(Error::Config(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        positive("lag k", &self.lag.k)?;
        positive("rolling windows", &self.rolling.windows)?;
        positive("lag_rolling lags", &self.lag_rolling.lags)?;
        positive("lag_rolling windows", &self.lag_rolling.windows)?;
        if self.lag.base + self.lag.k.iter().copied().min().unwrap_or(1) == 0 {
            return Err(Error::Config("lags must be at least 1 day".into()));
        }
        if self.rolling.shift == 0 && !self.rolling.windows.is_empty() {
            return Err(Error::Config("rolling shift must be positive".into()));
        }
        let names: Vec<String> = self.columns_for([1; 5]).into_iter().map(|c| c.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::Config("duplicate feature names (repeated lag or window)".into()));
        }
        Ok(())
    }

    /// Smallest number of days back any sales-derived column reads.
    pub fn min_sales_lag(&self) -> Option<usize> {
        let lags = self.lag.k.iter().map(|k| self.lag.base + k);
        let rolling = (!self.rolling.windows.is_empty()).then_some(self.rolling.shift);
        let lr = self
            .lag_rolling
            .lags
            .iter()
            .copied()
            .filter(|_| !self.lag_rolling.windows.is_empty());
        lags.chain(rolling).chain(lr).min()
    }

    /// Expand into the ordered column list for a panel.
    pub fn columns(&self, panel: &PanelDataset) -> Vec<FeatureSpec> {
        self.columns_for(panel.vocab().cardinalities())
    }

    pub fn columns_for(&self, cardinalities: [usize; 5]) -> Vec<FeatureSpec> {
        let mut out = Vec::new();
        let mut push = |name: String, group, kind, cardinality| {
            out.push(FeatureSpec {
                name,
                group,
                kind,
                cardinality,
            })
        };
        use FeatureGroup as G;
        if self.categorical.codes {
            for (i, n) in CODE_NAMES.iter().enumerate() {
                push(format!("{n}_code"), G::Categorical, FeatureKind::Code(i), Some(cardinalities[i]));
            }
        }
        if self.categorical.target_encoding {
            for (i, n) in CODE_NAMES.iter().enumerate() {
                push(format!("{n}_target_mean"), G::Categorical, FeatureKind::TargetEncoding(i), None);
            }
        }
        if self.price.enabled {
            for (stat, n) in PRICE_STATS
                .iter()
                .zip(["price", "price_max", "price_min", "price_mean", "price_std", "price_nunique"])
            {
                push(n.into(), G::Price, FeatureKind::Price(*stat), None);
            }
        }
        if self.calendar.enabled {
            use CalendarField as C;
            push("wday".into(), G::Calendar, FeatureKind::Calendar(C::Wday), Some(8));
            push("month".into(), G::Calendar, FeatureKind::Calendar(C::Month), Some(13));
            push("year".into(), G::Calendar, FeatureKind::Calendar(C::Year), None);
            push("event_type_1".into(), G::Calendar, FeatureKind::Calendar(C::EventType1), Some(5));
            push("event_type_2".into(), G::Calendar, FeatureKind::Calendar(C::EventType2), Some(5));
            if matches!(self.calendar.snap, SnapMode::Own | SnapMode::OwnAndAll) {
                push("snap".into(), G::Calendar, FeatureKind::Calendar(C::SnapOwn), None);
            }
            if matches!(self.calendar.snap, SnapMode::All | SnapMode::OwnAndAll) {
                for (i, st) in SNAP_STATES.iter().enumerate() {
                    push(format!("snap_{st}"), G::Calendar, FeatureKind::Calendar(C::Snap(i)), None);
                }
            }
        }
        for k in &self.lag.k {
            let lag = self.lag.base + k;
            push(format!("lag_{lag}"), G::Lag, FeatureKind::Lag(lag), None);
        }
        for &window in &self.rolling.windows {
            let lag = self.rolling.shift;
            push(format!("rmean_{lag}_{window}"), G::Rolling, FeatureKind::RollingMean { lag, window }, None);
            push(format!("rstd_{lag}_{window}"), G::Rolling, FeatureKind::RollingStd { lag, window }, None);
        }
        for &lag in &self.lag_rolling.lags {
            for &window in &self.lag_rolling.windows {
                push(format!("rmean_{lag}_{window}"), G::LagRolling, FeatureKind::RollingMean { lag, window }, None);
                push(format!("rstd_{lag}_{window}"), G::LagRolling, FeatureKind::RollingStd { lag, window }, None);
            }
        }
        out
    }
}

/// Column index of the store code, used to route per-store models.
pub fn store_code_column(columns: &[FeatureSpec]) -> Option<usize> {
    columns
        .iter()
        .position(|c| c.kind == FeatureKind::Code(code::STORE))
}
