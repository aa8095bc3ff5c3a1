//! Weighted geometric blending of model-group forecasts and exponential
//! smoothing of the blended path.
//!
//! Each cell of the blend is `(Π_g f_g^{w_g})^{1/Σ_g w_g}`. Days 1–27 use
//! the `head` exponents and day 28 the `last_day` exponents. Values below
//! [`BlendSpec::floor`] are raised to it first so zeros do not annihilate
//! the product.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ForecastGrid;
use crate::HORIZON;

/// Role names of the four model groups.
pub mod role {
    /// Per-store Tweedie GBDT.
    pub const GBDT_STORE: &str = "gbdt_store";
    /// Single Tweedie GBDT over all stores.
    pub const GBDT_GLOBAL: &str = "gbdt_global";
    /// Squared-error MLPs on the recent window, snapshot averaged.
    pub const MLP_RECENT: &str = "mlp_recent";
    /// Tweedie MLP on the full history.
    pub const MLP_FULL: &str = "mlp_full";

    pub const ALL: [&str; 4] = [GBDT_STORE, GBDT_GLOBAL, MLP_RECENT, MLP_FULL];
}

pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlendSpec {
    /// Exponents for days 1..=27.
    pub head: BTreeMap<String, f64>,
    /// Exponents for day 28.
    pub last_day: BTreeMap<String, f64>,
    pub floor: f64,
}

impl Default for BlendSpec {
    fn default() -> Self {
        let map = |w: [f64; 4]| role::ALL.iter().map(|r| r.to_string()).zip(w).collect();
        BlendSpec {
            head: map([3.5, 1.0, 1.0, 0.5]),
            last_day: map([3.0, 0.5, 0.0, 1.5]),
            floor: DEFAULT_FLOOR,
        }
    }
}

impl BlendSpec {
    /// Equal exponents for the given groups in both branches.
    pub fn uniform<S: AsRef<str>>(groups: &[S]) -> Self {
        let map: BTreeMap<String, f64> = groups.iter().map(|g| (g.as_ref().to_string(), 1.0)).collect();
        BlendSpec {
            head: map.clone(),
            last_day: map,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (branch, w) in [("head", &self.head), ("last_day", &self.last_day)] {
            if let Some((g, v)) = w.iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!("blend exponent {branch}.{g} = {v} must be finite and >= 0")));
            }
            if !w.values().any(|v| *v > 0.0) {
                return Err(Error::Config(format!("blend branch {branch} has no positive exponent")));
            }
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config("blend floor must be positive".into()));
        }
        Ok(())
    }

    pub fn head_normalizer(&self) -> f64 {
        self.head.values().sum()
    }

    pub fn last_day_normalizer(&self) -> f64 {
        self.last_day.values().sum()
    }

    /// Groups carrying a positive exponent in either branch.
    pub fn active_groups(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .head
            .iter()
            .chain(&self.last_day)
            .filter(|(_, w)| **w > 0.0)
            .map(|(g, _)| g.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Spec limited to `groups`; absent groups are dropped from both
    /// branches. Errors when a branch is left without a positive exponent.
    pub fn restricted_to<S: AsRef<str>>(&self, groups: &[S]) -> Result<Self> {
        let keep = |w: &BTreeMap<String, f64>| {
            w.iter()
                .filter(|(g, _)| groups.iter().any(|k| k.as_ref() == g.as_str()))
                .map(|(g, v)| (g.clone(), *v))
                .collect()
        };
        let spec = BlendSpec {
            head: keep(&self.head),
            last_day: keep(&self.last_day),
            floor: self.floor,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Weighted geometric mean of the group grids. Day 28 of the horizon (the
/// column at offset 27) uses the `last_day` branch.
pub fn geometric_blend(grids: &BTreeMap<String, ForecastGrid>, spec: &BlendSpec) -> Result<ForecastGrid> {
    spec.validate()?;
    let groups = spec.active_groups();
    let first = grids
        .get(&groups[0])
        .ok_or_else(|| Error::missing("blend group", groups[0].clone()))?;
    let mut members = Vec::with_capacity(groups.len());
    for g in &groups {
        let grid = grids.get(g).ok_or_else(|| Error::missing("blend group", g.clone()))?;
        if !grid.same_shape(first) {
            return Err(Error::validation(format!("grid of group {g} does not match the others")));
        }
        if grid.values().iter().any(|v| *v < 0.0) {
            return Err(Error::Domain(format!("group {g} has negative forecasts")));
        }
        let head = spec.head.get(g).copied().unwrap_or(0.0);
        let last = spec.last_day.get(g).copied().unwrap_or(0.0);
        members.push((grid, head, last));
    }
    let (norm_head, norm_last) = (spec.head_normalizer(), spec.last_day_normalizer());
    let mut out = first.clone();
    let h = first.horizon();
    for i in 0..first.n_series() {
        for t in 0..h {
            let is_last = t + 1 == HORIZON;
            let mut log_sum = 0.0;
            for (grid, head, last) in &members {
                let w = if is_last { *last } else { *head };
                if w > 0.0 {
                    log_sum += w * grid.get(i, t).max(spec.floor).ln();
                }
            }
            let norm = if is_last { norm_last } else { norm_head };
            out.set(i, t, (log_sum / norm).exp());
        }
    }
    Ok(out)
}

/// Which values the smoothing recurrence runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    /// `s_1 = f_1` at the first horizon day.
    #[default]
    Horizon,
    /// The recurrence starts at the first supplied history day and carries
    /// its state into the horizon.
    HistoryAndHorizon,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("smoothing factor {alpha} outside (0, 1]")))
    }
}

fn smooth_row(seed: Option<f64>, row: &mut [f64], alpha: f64) {
    let mut s = seed;
    for v in row.iter_mut() {
        let next = match s {
            None => *v,
            Some(_) if alpha == 1.0 => *v,
            // Same recurrence written so a constant path is a fixed point.
            Some(prev) => prev + alpha * (*v - prev),
        };
        *v = next;
        s = Some(next);
    }
}

/// `s_1 = f_1`, `s_t = α f_t + (1 − α) s_{t−1}` per series over the horizon.
pub fn exponential_smooth(grid: &ForecastGrid, alpha: f64) -> Result<ForecastGrid> {
    check_alpha(alpha)?;
    let mut out = grid.clone();
    for i in 0..out.n_series() {
        smooth_row(None, out.row_mut(i), alpha);
    }
    Ok(out)
}

/// Smoothing seeded by a pass over `history[i]` (the observed days right
/// before the horizon, oldest first).
pub fn exponential_smooth_with_history<R: AsRef<[f64]>>(
    grid: &ForecastGrid,
    history: &[R],
    alpha: f64,
) -> Result<ForecastGrid> {
    check_alpha(alpha)?;
    if history.len() != grid.n_series() {
        return Err(Error::validation("smoothing history does not match the grid"));
    }
    let mut out = grid.clone();
    for (i, hist) in history.iter().enumerate() {
        let mut h = hist.as_ref().to_vec();
        smooth_row(None, &mut h, alpha);
        smooth_row(h.last().copied(), out.row_mut(i), alpha);
    }
    Ok(out)
}

/// Score every candidate spec and return the index and score of the lowest.
/// Ties keep the earliest candidate.
pub fn grid_search(candidates: &[BlendSpec], mut score: impl FnMut(&BlendSpec) -> Result<f64>) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, spec) in candidates.iter().enumerate() {
        let s = score(spec)?;
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((k, s));
        }
    }
    best.ok_or_else(|| Error::validation("no blend candidates"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(v: f64) -> ForecastGrid {
        ForecastGrid::filled(12, vec!["a".into(), "b".into()], 1, HORIZON, v)
    }

    fn four(values: [f64; 4]) -> BTreeMap<String, ForecastGrid> {
        role::ALL.iter().map(|r| r.to_string()).zip(values.map(grid)).collect()
    }

    #[test]
    fn default_exponents() {
        let s = BlendSpec::default();
        assert_eq!(s.head_normalizer(), 6.0);
        assert_eq!(s.last_day_normalizer(), 5.0);
        assert_eq!(s.head[role::GBDT_STORE], 3.5);
        assert_eq!(s.last_day[role::MLP_RECENT], 0.0);
    }

    #[test]
    fn exponent_arithmetic() {
        let b = geometric_blend(&four([2.0, 1.0, 1.0, 1.0]), &BlendSpec::default()).unwrap();
        assert!((b.get(0, 0) - 2f64.powf(3.5 / 6.0)).abs() < 1e-12);
        assert!((b.get(0, 0) - 1.4983).abs() < 1e-4);
        assert!((b.get(1, 27) - 2f64.powf(3.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn last_day_ignores_the_zero_weight_group() {
        let base = geometric_blend(&four([2.0, 3.0, 5.0, 7.0]), &BlendSpec::default()).unwrap();
        let moved = geometric_blend(&four([2.0, 3.0, 500.0, 7.0]), &BlendSpec::default()).unwrap();
        assert_eq!(base.get(0, 27).to_bits(), moved.get(0, 27).to_bits());
        assert_ne!(base.get(0, 26), moved.get(0, 26));
    }

    #[test]
    fn zeros_use_the_floor_and_missing_groups_fail() {
        let b = geometric_blend(&four([0.0; 4]), &BlendSpec::default()).unwrap();
        assert!((b.get(0, 0) - 1e-6).abs() < 1e-18);
        let mut g = four([1.0; 4]);
        g.remove(role::MLP_FULL);
        assert!(matches!(geometric_blend(&g, &BlendSpec::default()), Err(Error::Missing { .. })));
        let g = four([1.0, 1.0, -1.0, 1.0]);
        assert!(matches!(geometric_blend(&g, &BlendSpec::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn restriction_drops_groups() {
        let s = BlendSpec::default().restricted_to(&[role::GBDT_STORE, role::GBDT_GLOBAL]).unwrap();
        assert_eq!(s.head_normalizer(), 4.5);
        assert_eq!(s.last_day_normalizer(), 3.5);
        assert!(BlendSpec::default().restricted_to(&[role::MLP_RECENT]).is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let s = BlendSpec::default();
        let back: BlendSpec = toml::from_str(&toml::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(back.head.values().zip(s.head.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn smoothing_examples() {
        let g = ForecastGrid::new(12, vec!["a".into()], 1, vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(exponential_smooth(&g, 0.5).unwrap().row(0), &[1.0, 1.5]);
        assert_eq!(exponential_smooth(&g, 1.0).unwrap(), g);
        assert!(exponential_smooth(&g, 0.0).is_err());
        assert!(exponential_smooth(&g, 1.5).is_err());
        let h = exponential_smooth_with_history(&g, &[vec![3.0]], 0.5).unwrap();
        assert_eq!(h.row(0), &[2.0, 2.0]);
    }

    #[test]
    fn grid_search_picks_the_minimum() {
        let c = vec![BlendSpec::default(), BlendSpec::uniform(&role::ALL), BlendSpec::default()];
        let (k, s) = grid_search(&c, |s| Ok((s.head_normalizer() - 4.0).abs())).unwrap();
        assert_eq!((k, s), (1, 0.0));
    }

    proptest! {
        #[test]
        fn blend_between_min_and_max_and_scale_equivariant(
            v in proptest::array::uniform4(0.01f64..100.0),
            c in 0.1f64..10.0,
        ) {
            let spec = BlendSpec::default();
            let b = geometric_blend(&four(v), &spec).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(0.0, f64::max);
            for t in [0, 27] {
                prop_assert!(b.get(0, t) >= lo * (1.0 - 1e-12) && b.get(0, t) <= hi * (1.0 + 1e-12));
            }
            let scaled = geometric_blend(&four(v.map(|x| x * c)), &spec).unwrap();
            prop_assert!((scaled.get(0, 3) - c * b.get(0, 3)).abs() <= 1e-9 * scaled.get(0, 3));
        }

        #[test]
        fn smoothing_keeps_constants_and_signs(c in 0.0f64..50.0, alpha in 0.01f64..1.0, path in proptest::collection::vec(0.0f64..10.0, 1..28)) {
            let g = ForecastGrid::new(12, vec!["a".into()], 1, vec![vec![c; 28]]).unwrap();
            prop_assert!(exponential_smooth(&g, alpha).unwrap().row(0).iter().all(|v| *v == c));
            let g = ForecastGrid::new(12, vec!["a".into()], 1, vec![path]).unwrap();
            prop_assert!(exponential_smooth(&g, alpha).unwrap().values().iter().all(|v| *v >= 0.0));
        }
    }
}
