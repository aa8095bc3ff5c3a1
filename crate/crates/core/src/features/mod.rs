//! Feature engineering: turns the panel into a single-day regression
//! problem with one row per active (series, day).
//!
//! Sales-derived columns only look at least 28 days back by default, so a
//! model trained on them can forecast the whole horizon without reading its
//! own predictions. Shorter lags are allowed; recursive forecasting then
//! feeds earlier horizon predictions back through a [`SalesView`] buffer.

mod cache;
mod compute;
mod matrix;
mod spec;

pub use cache::{
    cache_key, decode_matrix, encode_matrix, load_matrix, panel_fingerprint, save_matrix, CacheLookup,
};
pub use compute::{
    calendar_features, lag_features, lag_rolling_features, lag_value, mean_target_encode, price_features,
    rolling_features, rolling_stats, SalesSource, SalesView, TargetEncoding,
};
pub use matrix::{schema_hash, FeatureContext, FeatureMatrix, FEATURE_VERSION};
pub use spec::{
    store_code_column, CalendarConfig, CalendarField, CategoricalConfig, FeatureConfig, FeatureGroup,
    FeatureKind, FeatureSpec, LagConfig, LagRollingConfig, PriceStat, RollingConfig, SnapMode, Toggle,
    PRICE_STATS,
};

#[cfg(test)]
pub(crate) fn test_panel() -> crate::data::PanelDataset {
    crate::synthetic::generate(&crate::synthetic::SyntheticConfig {
        n_days: 150,
        n_stores: 3,
        items_per_dept: 2,
        ..Default::default()
    })
    .unwrap()
    .panel()
    .unwrap()
}
