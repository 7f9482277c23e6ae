//! Synthetic wind-farm data generator.
//!
//! Simulates hourly true wind per NWP grid cell as an AR(1) process around
//! a mean level, converts wind to farm power through a cut-in/rated/cut-off
//! power curve, and emits the measured and NWP covariate channels with
//! configurable noise and a systematic NWP bias. All noise magnitudes are
//! synthetic choices, not measured values; the defaults are tuned so that
//! the covariate-configuration experiments have a distinguishable ordering.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{Channel, SeriesError, TimeSeries};

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("wind speed must be non-negative, got {0}")]
    NegativeWindSpeed(f64),
    #[error("farm spec invalid: need 0 < cut_in < rated_speed < cut_off, positive power")]
    InvalidFarmSpec,
    #[error("weather spec invalid: need |ar_coeff| < 1 and non-negative noise levels")]
    InvalidWeatherSpec,
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Turbine fleet and power-curve breakpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarmSpec {
    pub n_turbines: usize,
    /// Rated power per turbine, MW.
    pub rated_power: f64,
    /// Cut-in wind speed, m/s.
    pub cut_in: f64,
    /// Wind speed where rated power is reached, m/s.
    pub rated_speed: f64,
    /// Safety cut-off wind speed, m/s.
    pub cut_off: f64,
    /// Turbines exposed to grid cell 1 (the rest see cell 2).
    pub turbines_cell1: usize,
}

impl Default for FarmSpec {
    fn default() -> Self {
        Self {
            n_turbines: 18,
            rated_power: 3.0,
            cut_in: 4.0,
            rated_speed: 12.5,
            cut_off: 25.0,
            turbines_cell1: 12,
        }
    }
}

impl FarmSpec {
    /// Theoretical maximum farm output, MW.
    pub fn capacity(&self) -> f64 {
        self.n_turbines as f64 * self.rated_power
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let ordered = 0.0 < self.cut_in && self.cut_in < self.rated_speed && self.rated_speed < self.cut_off;
        if !ordered
            || self.rated_power <= 0.0
            || self.n_turbines == 0
            || self.turbines_cell1 > self.n_turbines
        {
            return Err(SyntheticError::InvalidFarmSpec);
        }
        Ok(())
    }
}

/// AR(1) wind process and channel noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherSpec {
    /// AR(1) coefficient of the true wind speed.
    pub ar_coeff: f64,
    /// Innovation standard deviation of the AR(1) process, m/s.
    pub innovation_sigma: f64,
    /// Long-run mean wind speed, m/s.
    pub mean_speed: f64,
    /// Constant wind-speed offset of grid cell 2 relative to cell 1, m/s.
    pub cell_offset: f64,
    /// Measurement noise of the nacelle station, m/s.
    pub measurement_noise: f64,
    /// Systematic additive bias of the NWP wind speed, m/s.
    pub nwp_bias: f64,
    /// NWP wind-speed noise, m/s.
    pub nwp_noise: f64,
    /// Standard deviation of the hourly wind-direction random walk, degrees.
    pub direction_step: f64,
}

impl Default for WeatherSpec {
    fn default() -> Self {
        Self {
            ar_coeff: 0.97,
            innovation_sigma: 0.8,
            mean_speed: 8.0,
            cell_offset: 0.6,
            measurement_noise: 0.3,
            nwp_bias: 1.0,
            nwp_noise: 1.5,
            direction_step: 8.0,
        }
    }
}

impl WeatherSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.ar_coeff.abs() >= 1.0
            || self.innovation_sigma < 0.0
            || self.measurement_noise < 0.0
            || self.nwp_noise < 0.0
            || self.direction_step < 0.0
            || self.mean_speed < 0.0
        {
            return Err(SyntheticError::InvalidWeatherSpec);
        }
        Ok(())
    }
}

/// Wind-to-power conversion for one turbine: zero below cut-in, a cubic
/// ramp up to rated speed, rated power until cut-off, and a forced stop
/// beyond it.
pub fn power_curve(wind_speed: f64, spec: &FarmSpec) -> Result<f64, SyntheticError> {
    if wind_speed < 0.0 {
        return Err(SyntheticError::NegativeWindSpeed(wind_speed));
    }
    Ok(if wind_speed < spec.cut_in || wind_speed >= spec.cut_off {
        0.0
    } else if wind_speed >= spec.rated_speed {
        spec.rated_power
    } else {
        let frac = (wind_speed - spec.cut_in) / (spec.rated_speed - spec.cut_in);
        spec.rated_power * frac.powi(3)
    })
}

const SYNTHETIC_START: i64 = 1_577_836_800; // 2020-01-01T00:00:00Z

/// Simulates `n_hours` of farm data. Deterministic given the seed.
///
/// True wind in cell 1 follows the AR(1) process; cell 2 sees the same
/// wind shifted by `cell_offset`. Farm power sums the per-turbine power
/// curve over both cell groups. Measured channels add nacelle noise to the
/// cell-1 truth; NWP channels add the systematic bias plus NWP noise to
/// each cell's truth. Direction noise uses the same sigmas scaled to
/// degrees (x10).
pub fn generate(
    farm: &FarmSpec,
    weather: &WeatherSpec,
    n_hours: usize,
    seed: u64,
) -> Result<TimeSeries, SyntheticError> {
    farm.validate()?;
    weather.validate()?;
    assert!(n_hours >= 1, "n_hours must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = farm.capacity();
    let turbines_cell2 = farm.n_turbines - farm.turbines_cell1;

    // Stationary start for the AR(1) state.
    let stationary_sd = weather.innovation_sigma / (1.0 - weather.ar_coeff * weather.ar_coeff).sqrt();
    let mut wind_state: f64 = rng.sample::<f64, _>(StandardNormal) * stationary_sd;
    let mut direction: f64 = rng.gen::<f64>() * 360.0;

    let mut target = Vec::with_capacity(n_hours);
    let mut mws = Vec::with_capacity(n_hours);
    let mut mwd = Vec::with_capacity(n_hours);
    let mut nwp_ws_c1 = Vec::with_capacity(n_hours);
    let mut nwp_wd_c1 = Vec::with_capacity(n_hours);
    let mut nwp_ws_c2 = Vec::with_capacity(n_hours);
    let mut nwp_wd_c2 = Vec::with_capacity(n_hours);

    for _ in 0..n_hours {
        let wind_c1 = (weather.mean_speed + wind_state).max(0.0);
        let wind_c2 = (wind_c1 + weather.cell_offset).max(0.0);

        let power = farm.turbines_cell1 as f64 * power_curve(wind_c1, farm)?
            + turbines_cell2 as f64 * power_curve(wind_c2, farm)?;
        target.push(power.clamp(0.0, capacity));

        let noise = |rng: &mut ChaCha8Rng, sd: f64| {
            if sd == 0.0 {
                0.0
            } else {
                rng.sample::<f64, _>(StandardNormal) * sd
            }
        };
        mws.push((wind_c1 + noise(&mut rng, weather.measurement_noise)).max(0.0));
        mwd.push((direction + noise(&mut rng, 10.0 * weather.measurement_noise)).rem_euclid(360.0));
        nwp_ws_c1.push((wind_c1 + weather.nwp_bias + noise(&mut rng, weather.nwp_noise)).max(0.0));
        nwp_wd_c1.push((direction + noise(&mut rng, 10.0 * weather.nwp_noise)).rem_euclid(360.0));
        nwp_ws_c2.push((wind_c2 + weather.nwp_bias + noise(&mut rng, weather.nwp_noise)).max(0.0));
        nwp_wd_c2.push((direction + noise(&mut rng, 10.0 * weather.nwp_noise)).rem_euclid(360.0));

        wind_state = weather.ar_coeff * wind_state
            + noise(&mut rng, weather.innovation_sigma);
        direction = (direction + noise(&mut rng, weather.direction_step)).rem_euclid(360.0);
    }

    let timestamps = (0..n_hours as i64)
        .map(|i| SYNTHETIC_START + i * crate::series::HOUR_SECONDS)
        .collect();
    let covariates = vec![
        Channel::new("mws", mws, false),
        Channel::new("mwd", mwd, false),
        Channel::new("nwp_ws_c1", nwp_ws_c1, true),
        Channel::new("nwp_wd_c1", nwp_wd_c1, true),
        Channel::new("nwp_ws_c2", nwp_ws_c2, true),
        Channel::new("nwp_wd_c2", nwp_wd_c2, true),
    ];
    Ok(TimeSeries::new(timestamps, target, covariates, capacity)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_curve_regimes() {
        let farm = FarmSpec::default();
        assert_eq!(power_curve(2.0, &farm).unwrap(), 0.0);
        assert_eq!(power_curve(20.0, &farm).unwrap(), 3.0);
        assert_eq!(power_curve(26.0, &farm).unwrap(), 0.0);
        assert_eq!(power_curve(25.0, &farm).unwrap(), 0.0); // cut-off boundary stops
        assert_eq!(power_curve(12.5, &farm).unwrap(), 3.0); // rated boundary
        assert!(matches!(
            power_curve(-1.0, &farm),
            Err(SyntheticError::NegativeWindSpeed(_))
        ));
    }

    #[test]
    fn power_curve_monotone_on_ramp() {
        let farm = FarmSpec::default();
        let mut prev = 0.0;
        let mut w = 0.0;
        while w <= farm.rated_speed {
            let p = power_curve(w, &farm).unwrap();
            assert!(p >= prev, "not monotone at {w}");
            prev = p;
            w += 0.05;
        }
    }

    #[test]
    fn degenerate_noise_makes_channels_equal() {
        let weather = WeatherSpec {
            measurement_noise: 0.0,
            nwp_bias: 0.0,
            nwp_noise: 0.0,
            cell_offset: 0.0,
            ..WeatherSpec::default()
        };
        let s = generate(&FarmSpec::default(), &weather, 100, 7).unwrap();
        let measured = &s.channel("mws").unwrap().values;
        let nwp = &s.channel("nwp_ws_c1").unwrap().values;
        let nwp2 = &s.channel("nwp_ws_c2").unwrap().values;
        assert_eq!(measured, nwp);
        assert_eq!(nwp, nwp2);
    }

    #[test]
    fn power_stays_within_capacity() {
        let s = generate(&FarmSpec::default(), &WeatherSpec::default(), 2000, 99).unwrap();
        assert!(s.target().iter().all(|&p| (0.0..=54.0).contains(&p)));
    }

    #[test]
    fn year_length_series() {
        let s = generate(&FarmSpec::default(), &WeatherSpec::default(), 8784, 1).unwrap();
        assert_eq!(s.len(), 8784);
        assert_eq!(s.capacity(), 54.0);
        assert_eq!(s.covariates().len(), 6);
    }

    #[test]
    fn nwp_bias_shows_up_in_channel_means() {
        let weather = WeatherSpec::default();
        let n = 6000;
        let s = generate(&FarmSpec::default(), &weather, n, 5).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let measured = mean(&s.channel("mws").unwrap().values);
        let nwp = mean(&s.channel("nwp_ws_c1").unwrap().values);
        let tol = 4.0 * weather.nwp_noise / (n as f64).sqrt();
        assert!(
            ((nwp - measured) - weather.nwp_bias).abs() < tol,
            "bias estimate {} vs {}",
            nwp - measured,
            weather.nwp_bias
        );
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let a = generate(&FarmSpec::default(), &WeatherSpec::default(), 500, 42).unwrap();
        let b = generate(&FarmSpec::default(), &WeatherSpec::default(), 500, 42).unwrap();
        assert_eq!(a, b);
        let c = generate(&FarmSpec::default(), &WeatherSpec::default(), 500, 43).unwrap();
        assert_ne!(a, c);
    }
}
