//! Autocorrelation and partial-autocorrelation estimation with 95%
//! confidence bands.
//!
//! The ACF uses the biased single-denominator estimator standard for
//! correlograms; the PACF is derived from it via the Durbin-Levinson
//! recursion. The band is the large-sample `±1.96/sqrt(n)` half-width.

use thiserror::Error;

/// z-value for the two-sided 95% band.
const Z_95: f64 = 1.96;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("series is constant; correlogram undefined (zero variance)")]
    ConstantSeries,
    #[error("max lag {lag} too large for series of length {len}; need len >= lag + 1")]
    LagTooLarge { lag: usize, len: usize },
    #[error("Durbin-Levinson recursion became singular at lag {lag}")]
    NumericalSingularity { lag: usize },
}

/// Correlogram values over lags `0..=max_lag` with a confidence band.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelogramResult {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    /// Half-width of the 95% band: `1.96 / sqrt(n)`.
    pub band: f64,
}

impl CorrelogramResult {
    pub fn value_at(&self, lag: usize) -> f64 {
        self.values[lag]
    }
}

/// Sample autocorrelation function.
///
/// `r_k = sum_t (y_t - mean)(y_{t+k} - mean) / sum_t (y_t - mean)^2`,
/// so `r_0 = 1` exactly.
pub fn acf(series: &[f64], max_lag: usize) -> Result<CorrelogramResult, AnalysisError> {
    let n = series.len();
    if n < max_lag + 1 {
        return Err(AnalysisError::LagTooLarge { lag: max_lag, len: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let denom: f64 = series.iter().map(|y| (y - mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(AnalysisError::ConstantSeries);
    }
    let mut values = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        if k == 0 {
            values.push(1.0);
            continue;
        }
        let num: f64 = (0..n - k)
            .map(|t| (series[t] - mean) * (series[t + k] - mean))
            .sum();
        values.push(num / denom);
    }
    Ok(CorrelogramResult {
        lags: (0..=max_lag).collect(),
        values,
        band: Z_95 / (n as f64).sqrt(),
    })
}

/// Sample partial autocorrelation function via the Durbin-Levinson
/// recursion on the sample ACF. `pacf` at lag 1 equals `acf` at lag 1
/// exactly; lag 0 is reported as 1 by convention.
pub fn pacf(series: &[f64], max_lag: usize) -> Result<CorrelogramResult, AnalysisError> {
    let r = acf(series, max_lag)?;
    let mut values = vec![1.0];
    // phi[j-1] holds phi_{k,j} for the current order k.
    let mut phi: Vec<f64> = Vec::with_capacity(max_lag);
    for k in 1..=max_lag {
        let phi_kk = if k == 1 {
            r.values[1]
        } else {
            let num = r.values[k]
                - (1..k).map(|j| phi[j - 1] * r.values[k - j]).sum::<f64>();
            let den = 1.0 - (1..k).map(|j| phi[j - 1] * r.values[j]).sum::<f64>();
            if den.abs() < 1e-12 || !den.is_finite() {
                return Err(AnalysisError::NumericalSingularity { lag: k });
            }
            num / den
        };
        let prev = phi.clone();
        for j in 1..k {
            phi[j - 1] = prev[j - 1] - phi_kk * prev[k - j - 1];
        }
        phi.push(phi_kk);
        values.push(phi_kk);
    }
    Ok(CorrelogramResult {
        lags: (0..=max_lag).collect(),
        values,
        band: r.band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn acf_lag0_is_one() {
        let r = acf(&[1.0, 3.0, 2.0, 5.0, 4.0], 2).unwrap();
        assert_eq!(r.values[0], 1.0);
    }

    #[test]
    fn acf_alternating_series() {
        let r = acf(&[1.0, -1.0, 1.0, -1.0], 1).unwrap();
        assert!((r.values[1] - -0.75).abs() < 1e-12);
    }

    #[test]
    fn acf_constant_series_errors() {
        assert_eq!(
            acf(&[5.0; 4], 1).unwrap_err(),
            AnalysisError::ConstantSeries
        );
    }

    #[test]
    fn acf_lag_too_large() {
        assert_eq!(
            acf(&[1.0, 2.0], 2).unwrap_err(),
            AnalysisError::LagTooLarge { lag: 2, len: 2 }
        );
    }

    #[test]
    fn pacf_lag1_equals_acf_lag1() {
        let y: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let a = acf(&y, 10).unwrap();
        let p = pacf(&y, 10).unwrap();
        assert_eq!(p.values[1], a.values[1]);
    }

    #[test]
    fn pacf_white_noise_mostly_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..1500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let p = pacf(&y, 20).unwrap();
        let inside = (1..=20).filter(|&k| p.values[k].abs() < p.band).count();
        assert!(inside >= 18, "only {inside}/20 inside the band");
    }

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![0.0f64];
        for _ in 1..n {
            let e: f64 = rng.sample(StandardNormal);
            let prev = *y.last().unwrap();
            y.push(phi * prev + e);
        }
        y
    }

    #[test]
    fn pacf_recovers_ar1_coefficient() {
        let y = ar1(0.8, 2000, 7);
        let p = pacf(&y, 20).unwrap();
        assert!((p.values[1] - 0.8).abs() < 0.05, "phi_11 = {}", p.values[1]);
        let inside = (3..=20).filter(|&k| p.values[k].abs() < p.band).count();
        assert!(inside * 5 >= 18 * 4, "only {inside}/18 inside the band");
    }

    #[test]
    fn acf_symmetric_under_reversal() {
        let y: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7).sin() + (i % 7) as f64).collect();
        let rev: Vec<f64> = y.iter().rev().copied().collect();
        let a = acf(&y, 12).unwrap();
        let b = acf(&rev, 12).unwrap();
        for k in 0..=12 {
            assert!((a.values[k] - b.values[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn acf_affine_invariant() {
        let y: Vec<f64> = (0..150).map(|i| ((i * 13) % 29) as f64).collect();
        let scaled: Vec<f64> = y.iter().map(|v| -3.5 * v + 11.0).collect();
        let a = acf(&y, 15).unwrap();
        let b = acf(&scaled, 15).unwrap();
        for k in 0..=15 {
            assert!((a.values[k] - b.values[k]).abs() < 1e-10);
        }
    }
}
