//! Point and probabilistic forecast scoring.
//!
//! Point metrics: RMSE, NRMSE (RMSE over the observed mean), MAPE.
//! Probabilistic metrics: pinball (quantile) loss, weighted quantile loss
//! (wQL), prediction-interval coverage probability (PICP), and the Mean
//! Scaled Interval Score (MSIS).
//!
//! All functions are pure; same inputs produce the same outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("inputs must be non-empty")]
    EmptyInput,
    #[error("observed mean is zero; NRMSE undefined")]
    ZeroMeanTarget,
    #[error("target contains a zero value at index {0}; MAPE undefined")]
    ZeroTargetValue(usize),
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("observed values sum to zero; wQL undefined")]
    ZeroTargetSum,
    #[error("lower bound exceeds upper bound at index {0}")]
    InvertedBounds(usize),
    #[error("training series is constant at lag {m}; MSIS scaling denominator is zero")]
    ZeroScalingDenominator { m: usize },
    #[error("MSIS context needs a training series longer than its seasonality m={m} (len {len})")]
    ContextTooShort { len: usize, m: usize },
    #[error("significance level alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
}

fn check_lengths(y: &[f64], other: &[f64]) -> Result<(), MetricError> {
    if y.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if y.len() != other.len() {
        return Err(MetricError::LengthMismatch {
            left: y.len(),
            right: other.len(),
        });
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, y_hat)?;
    let mse = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt())
}

/// RMSE normalized by the observed mean.
pub fn nrmse(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    let r = rmse(y, y_hat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if mean == 0.0 {
        return Err(MetricError::ZeroMeanTarget);
    }
    Ok(r / mean)
}

/// Mean absolute percentage error, in percent. Zero targets are an error
/// rather than silently skipped.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, y_hat)?;
    let mut sum = 0.0;
    for (i, (a, b)) in y.iter().zip(y_hat).enumerate() {
        if *a == 0.0 {
            return Err(MetricError::ZeroTargetValue(i));
        }
        sum += ((a - b) / a).abs();
    }
    Ok(100.0 * sum / y.len() as f64)
}

/// Pinball (quantile) loss for one observation:
/// `(y - y_hat) q` when `y >= y_hat`, else `(y_hat - y)(1 - q)`.
pub fn pinball_single(y: f64, y_hat: f64, q: f64) -> Result<f64, MetricError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MetricError::InvalidQuantile(q));
    }
    Ok(if y >= y_hat {
        (y - y_hat) * q
    } else {
        (y_hat - y) * (1.0 - q)
    })
}

/// Pinball loss averaged over a series.
pub fn pinball(y: &[f64], y_hat: &[f64], q: f64) -> Result<f64, MetricError> {
    check_lengths(y, y_hat)?;
    let mut sum = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        sum += pinball_single(*a, *b, q)?;
    }
    Ok(sum / y.len() as f64)
}

/// Weighted quantile loss: `2 * sum(PL_q) / sum(y)`.
pub fn wql(y: &[f64], y_hat: &[f64], q: f64) -> Result<f64, MetricError> {
    check_lengths(y, y_hat)?;
    let total: f64 = y.iter().sum();
    if total == 0.0 {
        return Err(MetricError::ZeroTargetSum);
    }
    let mut sum = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        sum += pinball_single(*a, *b, q)?;
    }
    Ok(2.0 * sum / total)
}

/// Mean wQL over several quantile levels; each level has its own
/// forecast series.
pub fn mean_wql(y: &[f64], per_level: &[(f64, &[f64])]) -> Result<f64, MetricError> {
    if per_level.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sum = 0.0;
    for (q, y_hat) in per_level {
        sum += wql(y, y_hat, *q)?;
    }
    Ok(sum / per_level.len() as f64)
}

fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<(), MetricError> {
    for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
        if l > u {
            return Err(MetricError::InvertedBounds(i));
        }
    }
    Ok(())
}

/// Prediction-interval coverage probability: the fraction of observations
/// inside the closed interval `[lower, upper]`. Boundary hits count as
/// covered.
pub fn picp(y: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, lower)?;
    check_lengths(y, upper)?;
    check_bounds(lower, upper)?;
    let inside = y
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(v, (l, u))| *l <= *v && *v <= *u)
        .count();
    Ok(inside as f64 / y.len() as f64)
}

/// Empirical coverage of a single quantile bound: the fraction of
/// observations at or below it. A well-calibrated 0.975 quantile forecast
/// scores close to 0.975.
pub fn quantile_coverage(y: &[f64], bound: &[f64]) -> Result<f64, MetricError> {
    check_lengths(y, bound)?;
    let below = y.iter().zip(bound).filter(|(v, b)| *v <= *b).count();
    Ok(below as f64 / y.len() as f64)
}

/// Scaling context for MSIS: the training series supplies the mean
/// absolute m-lag difference used as the denominator.
#[derive(Debug, Clone)]
pub struct MsisContext {
    denominator: f64,
    alpha: f64,
}

impl MsisContext {
    /// `m` is the seasonality lag of the naive scaling differences; use 1
    /// for non-seasonal series, 24 for daily-seasonal hourly data.
    pub fn new(training: &[f64], m: usize, alpha: f64) -> Result<Self, MetricError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(MetricError::InvalidAlpha(alpha));
        }
        let n = training.len();
        if m < 1 || n <= m {
            return Err(MetricError::ContextTooShort { len: n, m });
        }
        let denominator = (m..n)
            .map(|t| (training[t] - training[t - m]).abs())
            .sum::<f64>()
            / (n - m) as f64;
        if denominator == 0.0 {
            return Err(MetricError::ZeroScalingDenominator { m });
        }
        Ok(Self { denominator, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn denominator(&self) -> f64 {
        self.denominator
    }
}

/// Mean Scaled Interval Score over one forecast horizon:
/// interval width plus `2/alpha`-weighted non-coverage penalties, averaged
/// over the horizon and scaled by the training denominator.
pub fn msis(y: &[f64], lower: &[f64], upper: &[f64], ctx: &MsisContext) -> Result<f64, MetricError> {
    check_lengths(y, lower)?;
    check_lengths(y, upper)?;
    check_bounds(lower, upper)?;
    let penalty = 2.0 / ctx.alpha;
    let mut sum = 0.0;
    for ((&v, &l), &u) in y.iter().zip(lower).zip(upper) {
        sum += u - l;
        if v < l {
            sum += penalty * (l - v);
        }
        if v > u {
            sum += penalty * (v - u);
        }
    }
    Ok(sum / y.len() as f64 / ctx.denominator)
}

/// Point and probabilistic scores for one experiment. Probabilistic
/// fields are absent for point-only models (the persistence baselines),
/// and `mape` is absent when the test targets contain exact zeros.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvaluationReport {
    pub config_name: String,
    pub model_name: String,
    pub alpha: f64,
    pub seasonality: usize,
    pub nrmse: f64,
    pub mape: Option<f64>,
    pub wql_lower: Option<f64>,
    pub wql_upper: Option<f64>,
    pub mean_wql: Option<f64>,
    pub picp_lower: Option<f64>,
    pub picp_upper: Option<f64>,
    pub msis: Option<f64>,
}

impl EvaluationReport {
    /// Flat `key = value` rendering, one line per field.
    pub fn to_key_value(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or("-".to_string(), |x| format!("{x}"))
        }
        let mut s = String::new();
        s.push_str(&format!("config_name = {}\n", self.config_name));
        s.push_str(&format!("model_name = {}\n", self.model_name));
        s.push_str(&format!("alpha = {}\n", self.alpha));
        s.push_str(&format!("seasonality = {}\n", self.seasonality));
        s.push_str(&format!("nrmse = {}\n", self.nrmse));
        s.push_str(&format!("mape = {}\n", opt(self.mape)));
        s.push_str(&format!("wql_lower = {}\n", opt(self.wql_lower)));
        s.push_str(&format!("wql_upper = {}\n", opt(self.wql_upper)));
        s.push_str(&format!("mean_wql = {}\n", opt(self.mean_wql)));
        s.push_str(&format!("picp_lower = {}\n", opt(self.picp_lower)));
        s.push_str(&format!("picp_upper = {}\n", opt(self.picp_upper)));
        s.push_str(&format!("msis = {}\n", opt(self.msis)));
        s
    }
}
