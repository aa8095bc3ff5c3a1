//! Hierarchical retail-sales forecasting toolkit.
//!
//! The point-forecast pipeline turns the bottom-level (product × store)
//! panel into a single-day regression problem ([`features`]), fits
//! Tweedie-objective gradient-boosted trees ([`gbdt`]) and embedding MLPs
//! ([`mlp`]), rolls them forward recursively over a 28-day horizon
//! ([`forecast`]), and combines the model groups with a weighted geometric
//! mean followed by exponential smoothing ([`blend`]). The probabilistic
//! pipeline ([`uncertainty`]) scales the blended median into nine quantiles
//! with per-level factors and corrects the two lowest levels with empirical
//! sales quantiles. [`metrics`] implements RMSSE/WRMSSE and SPL/WSPL over
//! the 12-level hierarchy built by [`hierarchy`].

pub mod binio;
pub mod blend;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod forecast;
pub mod gbdt;
pub mod grid;
pub mod hierarchy;
pub mod metrics;
pub mod mlp;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, Result};

/// Forecast horizon in days.
pub const HORIZON: usize = 28;
