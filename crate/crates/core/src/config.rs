//! Declarative pipeline configuration (TOML).
//!
//! The default configuration is desk-sized: every model group is enabled
//! with small trees and short MLP training. [`PipelineConfig::full_scale`]
//! switches the groups to the full-size profiles.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::blend::{role, BlendSpec, SmoothingMode};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::gbdt::{per_store_estimators, GbdtParams};
use crate::metrics::ScaleOptions;
use crate::mlp::MlpConfig;
use crate::synthetic::SyntheticConfig;
use crate::uncertainty::UncertaintyConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sales: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    /// Generate the panel instead of reading files.
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// First day used for training rows.
    pub first_day: usize,
    /// Train validation split 1 through the day before the panel's last
    /// day, as printed, instead of stopping before its validation window.
    pub strict_split_one: bool,
    /// Splits (1-based) run by the backtest.
    pub splits: Vec<usize>,
    /// Overrides every model seed: member `k` of group `g` gets a seed
    /// derived from this value, `g` and `k`.
    pub seed: Option<u64>,
    pub trim_leading_zeros: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            first_day: 1,
            strict_split_one: false,
            splits: vec![1, 2, 3],
            seed: None,
            trim_leading_zeros: true,
        }
    }
}

impl TrainingConfig {
    pub fn scale_options(&self) -> ScaleOptions {
        ScaleOptions {
            trim_leading_zeros: self.trim_leading_zeros,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreGbdtConfig {
    pub params: GbdtParams,
    /// Tree count per store id; stores not listed use `params.n_estimators`.
    pub estimators: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpGroupConfig {
    pub members: Vec<MlpConfig>,
}

/// Model groups; a group is disabled when its table is absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub gbdt_store: Option<StoreGbdtConfig>,
    pub gbdt_global: Option<GbdtParams>,
    pub mlp_recent: Option<MlpGroupConfig>,
    pub mlp_full: Option<MlpGroupConfig>,
}

impl ModelsConfig {
    /// Desk-sized versions of all four groups.
    pub fn desk() -> Self {
        let recent = MlpConfig::recent_presets()
            .into_iter()
            .map(|c| MlpConfig {
                epochs: 6,
                snapshots_to_keep: c.snapshots_to_keep.min(3),
                ..c
            })
            .collect();
        let full = MlpConfig {
            epochs: 6,
            ..MlpConfig::full_preset()
        };
        ModelsConfig {
            gbdt_store: Some(StoreGbdtConfig {
                params: GbdtParams {
                    n_estimators: 60,
                    ..GbdtParams::desk()
                },
                estimators: BTreeMap::new(),
            }),
            gbdt_global: Some(GbdtParams {
                seed: 1,
                ..GbdtParams::desk()
            }),
            mlp_recent: Some(MlpGroupConfig { members: recent }),
            mlp_full: Some(MlpGroupConfig { members: vec![full] }),
        }
    }

    /// Full-size profiles.
    pub fn full_scale() -> Self {
        ModelsConfig {
            gbdt_store: Some(StoreGbdtConfig {
                params: GbdtParams::per_store_profile(),
                estimators: per_store_estimators(),
            }),
            gbdt_global: Some(GbdtParams::global_profile()),
            mlp_recent: Some(MlpGroupConfig {
                members: MlpConfig::recent_presets(),
            }),
            mlp_full: Some(MlpGroupConfig {
                members: vec![MlpConfig::full_preset()],
            }),
        }
    }

    /// Role names of the enabled groups, in role order.
    pub fn enabled(&self) -> Vec<&'static str> {
        let on = [
            self.gbdt_store.is_some(),
            self.gbdt_global.is_some(),
            self.mlp_recent.is_some(),
            self.mlp_full.is_some(),
        ];
        role::ALL.iter().zip(on).filter(|(_, o)| *o).map(|(r, _)| *r).collect()
    }

    /// Copy with every seed replaced by one derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let derive = |group: u64, k: u64| seed.wrapping_mul(1_000_003).wrapping_add(group * 1000 + k);
        let mut out = self.clone();
        if let Some(g) = &mut out.gbdt_store {
            g.params.seed = derive(0, 0);
        }
        if let Some(g) = &mut out.gbdt_global {
            g.seed = derive(1, 0);
        }
        for (gi, group) in [(2, &mut out.mlp_recent), (3, &mut out.mlp_full)] {
            if let Some(g) = group {
                for (k, m) in g.members.iter_mut().enumerate() {
                    m.seed = derive(gi, k as u64);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.gbdt_store {
            g.params.validate()?;
        }
        if let Some(g) = &self.gbdt_global {
            g.validate()?;
        }
        for (name, g) in [(role::MLP_RECENT, &self.mlp_recent), (role::MLP_FULL, &self.mlp_full)] {
            if let Some(g) = g {
                if g.members.is_empty() {
                    return Err(Error::Config(format!("model group {name} has no members")));
                }
                for m in &g.members {
                    m.validate()?;
                }
            }
        }
        if self.enabled().is_empty() {
            return Err(Error::Config("no model group is enabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub alpha: f64,
    pub mode: SmoothingMode,
    /// Days of history fed to the recurrence in `history_and_horizon` mode.
    pub history_days: usize,
    /// Smooth the accuracy (point) output too, not only the median that
    /// feeds the quantiles.
    pub apply_to_point: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            alpha: 0.96,
            mode: SmoothingMode::Horizon,
            history_days: 28,
            apply_to_point: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub training: TrainingConfig,
    pub models: ModelsConfig,
    pub blend: BlendSpec,
    pub smoothing: SmoothingConfig,
    pub uncertainty: UncertaintyConfig,
    /// Root of the run directories.
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: DataConfig::default(),
            features: FeatureConfig::default(),
            training: TrainingConfig::default(),
            models: ModelsConfig::desk(),
            blend: BlendSpec::default(),
            smoothing: SmoothingConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl PipelineConfig {
    pub fn full_scale() -> Self {
        PipelineConfig {
            models: ModelsConfig::full_scale(),
            ..PipelineConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.models.validate()?;
        self.blend.validate()?;
        self.blend.restricted_to(&self.models.enabled())?;
        self.uncertainty.validate()?;
        if !(self.smoothing.alpha > 0.0 && self.smoothing.alpha <= 1.0) {
            return Err(Error::Config(format!("smoothing alpha {} outside (0, 1]", self.smoothing.alpha)));
        }
        if self.training.first_day == 0 {
            return Err(Error::Config("training.first_day is 1-based".into()));
        }
        if self.training.splits.is_empty() || self.training.splits.iter().any(|s| !(1..=3).contains(s)) {
            return Err(Error::Config("training.splits must list split numbers 1..=3".into()));
        }
        let d = &self.data;
        let files = [&d.sales, &d.calendar, &d.prices];
        let n_files = files.iter().filter(|f| f.is_some()).count();
        match (n_files, d.synthetic.is_some()) {
            (0, true) | (3, false) => {}
            (0, false) => return Err(Error::Config("data needs either the three input files or [data.synthetic]".into())),
            (3, true) => return Err(Error::Config("data lists both input files and [data.synthetic]".into())),
            _ => return Err(Error::Config("data needs all of sales, calendar and prices".into())),
        }
        Ok(())
    }

    /// Models with the global seed override applied.
    pub fn effective_models(&self) -> ModelsConfig {
        match self.training.seed {
            Some(s) => self.models.reseeded(s),
            None => self.models.clone(),
        }
    }
}
