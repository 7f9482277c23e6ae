//! Persistence and modified-persistence reference forecasters.
//!
//! Persistence repeats the value at the forecast origin over the whole
//! horizon. Modified persistence blends that value with the training mean,
//! weighting by the training-set autocorrelation at each horizon lag:
//! `y_hat[k] = a_k * y_origin + (1 - a_k) * mean`.

use thiserror::Error;

use crate::analysis::{acf, AnalysisError};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("model not fitted; call fit() on training data first")]
    ModelNotFitted,
    #[error("fitting failed: {0}")]
    FitFailed(#[from] AnalysisError),
    #[error("fitted for horizon {fitted}, requested {requested}")]
    HorizonTooLong { fitted: usize, requested: usize },
}

/// Constant forecast at the origin value.
pub fn persistence_forecast(last_value: f64, horizon: usize) -> Result<Vec<f64>, BaselineError> {
    if horizon == 0 {
        return Err(BaselineError::EmptyHorizon);
    }
    Ok(vec![last_value; horizon])
}

#[derive(Debug, Clone)]
struct FittedState {
    /// Training autocorrelation at lags `1..=horizon`.
    lag_correlations: Vec<f64>,
    mean: f64,
}

/// Mean-reverting persistence variant; must be fitted on training data
/// before forecasting.
#[derive(Debug, Clone, Default)]
pub struct ModifiedPersistence {
    fitted: Option<FittedState>,
}

impl ModifiedPersistence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Estimates lag correlations up to `horizon` and the series mean.
    pub fn fit(&mut self, training: &[f64], horizon: usize) -> Result<(), BaselineError> {
        if horizon == 0 {
            return Err(BaselineError::EmptyHorizon);
        }
        let r = acf(training, horizon)?;
        self.fitted = Some(FittedState {
            lag_correlations: r.values[1..].to_vec(),
            mean: training.iter().sum::<f64>() / training.len() as f64,
        });
        Ok(())
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    /// `y_hat[k] = a_k * last_value + (1 - a_k) * mean` for `k = 1..=H`.
    /// Negative correlations are used as-is.
    pub fn forecast(&self, last_value: f64, horizon: usize) -> Result<Vec<f64>, BaselineError> {
        if horizon == 0 {
            return Err(BaselineError::EmptyHorizon);
        }
        let fitted = self.fitted.as_ref().ok_or(BaselineError::ModelNotFitted)?;
        if horizon > fitted.lag_correlations.len() {
            return Err(BaselineError::HorizonTooLong {
                fitted: fitted.lag_correlations.len(),
                requested: horizon,
            });
        }
        Ok(fitted.lag_correlations[..horizon]
            .iter()
            .map(|a| a * last_value + (1.0 - a) * fitted.mean)
            .collect())
    }

    /// Fitted lag correlations, for inspection.
    pub fn lag_correlations(&self) -> Option<&[f64]> {
        self.fitted.as_ref().map(|f| f.lag_correlations.as_slice())
    }
}
