//! Training objectives on the raw score `F`.
//!
//! The Tweedie objective uses a log link (`ŷ = e^F`), so its gradient and
//! Hessian are taken with respect to `F`.

use crate::error::{Error, Result};

/// Scores are clamped to this range before exponentiation.
pub const SCORE_CLAMP: f64 = 50.0;

/// Per-example Tweedie loss `−y·ŷ^(1−p)/(1−p) + ŷ^(2−p)/(2−p)`.
///
/// Differs from half the unit deviance only by a term in `y`, so it is
/// minimized at `ŷ = y`.
pub fn tweedie_loss(y: f64, y_hat: f64, p: f64) -> Result<f64> {
    if !(y_hat > 0.0) {
        return Err(Error::Domain(format!("tweedie loss needs a positive prediction, got {y_hat}")));
    }
    check_power(p)?;
    Ok(-y * y_hat.powf(1.0 - p) / (1.0 - p) + y_hat.powf(2.0 - p) / (2.0 - p))
}

/// Unit Tweedie deviance `d(y, μ)` for `1 < p < 2`.
pub fn tweedie_deviance(y: f64, mu: f64, p: f64) -> f64 {
    let a = if y > 0.0 {
        y.powf(2.0 - p) / ((1.0 - p) * (2.0 - p))
    } else {
        0.0
    };
    2.0 * (a - y * mu.powf(1.0 - p) / (1.0 - p) + mu.powf(2.0 - p) / (2.0 - p))
}

/// Mean unit deviance over paired targets and predictions.
pub fn mean_tweedie_deviance(y: &[f64], mu: &[f64], p: f64) -> f64 {
    y.iter().zip(mu).map(|(a, b)| tweedie_deviance(*a, *b, p)).sum::<f64>() / y.len().max(1) as f64
}

/// Gradient and Hessian of the Tweedie loss with respect to the log-link
/// score `F`.
pub fn tweedie_grad_hess(y: f64, score: f64, p: f64) -> (f64, f64) {
    let f = score.clamp(-SCORE_CLAMP, SCORE_CLAMP);
    let a = ((1.0 - p) * f).exp();
    let b = ((2.0 - p) * f).exp();
    (-y * a + b, -(1.0 - p) * y * a + (2.0 - p) * b)
}

pub(crate) fn check_power(p: f64) -> Result<()> {
    if p > 1.0 && p < 2.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tweedie variance power must lie in (1, 2), got {p}")))
    }
}
