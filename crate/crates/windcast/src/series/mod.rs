//! Time-series container, chronological splitting, rolling-window
//! extraction, and CSV ingestion/emission.
//!
//! The [`TimeSeries`] type holds an hourly power target together with named
//! covariate channels. Channels carry a `future_known` flag: numerical
//! weather prediction (NWP) channels are known over the forecast horizon,
//! measured-weather channels are not and get masked in extracted windows.

mod csv;

pub use csv::{read_csv, write_csv, CSV_COLUMNS};

use thiserror::Error;

/// One hour, in seconds. All series in this crate are hourly.
pub const HOUR_SECONDS: i64 = 3600;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("series too short: {len} samples, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("timestamps not strictly increasing hourly at row {row}")]
    NonMonotonicTimestamps { row: usize },
    #[error("target value {value} outside [0, {capacity}] at row {row}")]
    ValueOutOfRange {
        row: usize,
        value: f64,
        capacity: f64,
    },
    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },
    #[error("channel lengths differ: target has {target_len}, channel '{channel}' has {channel_len}")]
    LengthMismatch {
        target_len: usize,
        channel: String,
        channel_len: usize,
    },
    #[error("duplicate channel name '{0}'")]
    DuplicateChannel(String),
    #[error("capacity must be positive, got {0}")]
    NonPositiveCapacity(f64),
    #[error("fraction {name} must lie in (0, 1), got {value}")]
    InvalidFraction { name: &'static str, value: f64 },
    #[error("window parameters must be at least 1 (L={context}, H={horizon}, stride={stride})")]
    InvalidWindowParams {
        context: usize,
        horizon: usize,
        stride: usize,
    },
    #[error("io error: {0}")]
    Io(String),
}

/// A named covariate channel aligned with the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
    /// True when values are available over the forecast horizon (NWP
    /// channels); false for measured channels, which are masked in
    /// [`Window::future_covariates`].
    pub future_known: bool,
}

impl Channel {
    pub fn new(name: impl Into<String>, values: Vec<f64>, future_known: bool) -> Self {
        Self {
            name: name.into(),
            values,
            future_known,
        }
    }
}

/// Hourly power target with aligned covariate channels.
///
/// Invariants, enforced at construction:
/// - target and every channel have identical length >= 1,
/// - timestamps strictly increase in constant 1-hour steps,
/// - capacity > 0 and every target value lies in `[0, capacity]`,
/// - channel names are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    timestamps: Vec<i64>,
    target: Vec<f64>,
    covariates: Vec<Channel>,
    capacity: f64,
}

impl TimeSeries {
    pub fn new(
        timestamps: Vec<i64>,
        target: Vec<f64>,
        covariates: Vec<Channel>,
        capacity: f64,
    ) -> Result<Self, SeriesError> {
        if !(capacity > 0.0) {
            return Err(SeriesError::NonPositiveCapacity(capacity));
        }
        if target.is_empty() {
            return Err(SeriesError::SeriesTooShort { len: 0, min: 1 });
        }
        if timestamps.len() != target.len() {
            return Err(SeriesError::LengthMismatch {
                target_len: target.len(),
                channel: "timestamp".into(),
                channel_len: timestamps.len(),
            });
        }
        for (row, pair) in timestamps.windows(2).enumerate() {
            if pair[1] - pair[0] != HOUR_SECONDS {
                return Err(SeriesError::NonMonotonicTimestamps { row: row + 1 });
            }
        }
        for (row, &value) in target.iter().enumerate() {
            if !value.is_finite() || value < 0.0 || value > capacity {
                return Err(SeriesError::ValueOutOfRange {
                    row,
                    value,
                    capacity,
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for ch in &covariates {
            if ch.values.len() != target.len() {
                return Err(SeriesError::LengthMismatch {
                    target_len: target.len(),
                    channel: ch.name.clone(),
                    channel_len: ch.values.len(),
                });
            }
            if !seen.insert(ch.name.clone()) {
                return Err(SeriesError::DuplicateChannel(ch.name.clone()));
            }
        }
        Ok(Self {
            timestamps,
            target,
            covariates,
            capacity,
        })
    }

    /// A covariate-free series starting at `start` (epoch seconds).
    pub fn from_target(start: i64, target: Vec<f64>, capacity: f64) -> Result<Self, SeriesError> {
        let timestamps = (0..target.len() as i64)
            .map(|i| start + i * HOUR_SECONDS)
            .collect();
        Self::new(timestamps, target, Vec::new(), capacity)
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn covariates(&self) -> &[Channel] {
        &self.covariates
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.covariates.iter().find(|c| c.name == name)
    }

    /// A new series keeping only the named channels, in the given order.
    pub fn select_channels(&self, names: &[&str]) -> Option<TimeSeries> {
        let mut kept = Vec::with_capacity(names.len());
        for name in names {
            kept.push(self.channel(name)?.clone());
        }
        Some(TimeSeries {
            timestamps: self.timestamps.clone(),
            target: self.target.clone(),
            covariates: kept,
            capacity: self.capacity,
        })
    }

    /// Contiguous sub-series over `[start, end)`.
    fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            target: self.target[start..end].to_vec(),
            covariates: self
                .covariates
                .iter()
                .map(|c| Channel {
                    name: c.name.clone(),
                    values: c.values[start..end].to_vec(),
                    future_known: c.future_known,
                })
                .collect(),
            capacity: self.capacity,
        }
    }

    /// Chronological train / validation / test split.
    ///
    /// The test segment takes the trailing `round(test_fraction * n)`
    /// samples; the validation segment takes the trailing
    /// `round(validation_fraction * remainder)` of what is left, so that
    /// validation immediately precedes test. Concatenating the three
    /// segments reconstructs the original series.
    ///
    /// `min_segment` is the shortest usable segment (typically context
    /// length + horizon); any segment below it is an error.
    pub fn split(
        &self,
        spec: &SplitSpec,
        min_segment: usize,
    ) -> Result<(TimeSeries, TimeSeries, TimeSeries), SeriesError> {
        spec.validate()?;
        let n = self.len();
        let test_len = (spec.test_fraction * n as f64).round() as usize;
        let rest = n - test_len;
        let val_len = (spec.validation_fraction * rest as f64).round() as usize;
        let train_len = rest - val_len;
        for len in [train_len, val_len, test_len] {
            if len < min_segment {
                return Err(SeriesError::SeriesTooShort {
                    len,
                    min: min_segment,
                });
            }
        }
        Ok((
            self.slice(0, train_len),
            self.slice(train_len, rest),
            self.slice(rest, n),
        ))
    }

    /// Every rolling window of `context` + `horizon` samples that fits,
    /// advancing by `stride`. Yields `floor((n - L - H) / stride) + 1`
    /// windows.
    pub fn windows(
        &self,
        context: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<Vec<Window>, SeriesError> {
        if context < 1 || horizon < 1 || stride < 1 {
            return Err(SeriesError::InvalidWindowParams {
                context,
                horizon,
                stride,
            });
        }
        let n = self.len();
        if n < context + horizon {
            return Err(SeriesError::SeriesTooShort {
                len: n,
                min: context + horizon,
            });
        }
        let count = (n - context - horizon) / stride + 1;
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            out.push(self.extract_window(i * stride, context, horizon, true));
        }
        Ok(out)
    }

    /// One window with context `[start, start+L)` and horizon
    /// `[start+L, start+L+H)`. Callers must ensure the range fits.
    pub fn extract_window(
        &self,
        start: usize,
        context: usize,
        horizon: usize,
        with_target: bool,
    ) -> Window {
        let ctx_end = start + context;
        let fut_end = ctx_end + horizon;
        let context_covariates = self
            .covariates
            .iter()
            .map(|c| c.values[start..ctx_end].to_vec())
            .collect();
        let future_covariates = self
            .covariates
            .iter()
            .map(|c| {
                if c.future_known {
                    FutureCovariate {
                        values: c.values[ctx_end..fut_end].to_vec(),
                        available: true,
                    }
                } else {
                    // Masked: the zeros are placeholders, the flag is the data.
                    FutureCovariate {
                        values: vec![0.0; horizon],
                        available: false,
                    }
                }
            })
            .collect();
        Window {
            start,
            origin: self.timestamps[ctx_end - 1] + HOUR_SECONDS,
            context: self.target[start..ctx_end].to_vec(),
            context_covariates,
            future_covariates,
            future_target: with_target.then(|| self.target[ctx_end..fut_end].to_vec()),
        }
    }
}

/// Fractions for the chronological split.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    /// Fraction of the full series held out as the trailing test segment.
    pub test_fraction: f64,
    /// Fraction of the remaining (non-test) samples used for validation.
    pub validation_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.15,
            validation_fraction: 0.20,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<(), SeriesError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(SeriesError::InvalidFraction {
                name: "test_fraction",
                value: self.test_fraction,
            });
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(SeriesError::InvalidFraction {
                name: "validation_fraction",
                value: self.validation_fraction,
            });
        }
        Ok(())
    }
}

/// A covariate channel over the forecast horizon.
///
/// When `available` is false the channel is future-unknown (measured
/// weather); `values` are zero placeholders and must only be consumed
/// together with the flag, never as data.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureCovariate {
    pub values: Vec<f64>,
    pub available: bool,
}

/// One rolling window: a context block for conditioning and a horizon
/// block to forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Index of the first context sample in the source series.
    pub start: usize,
    /// Timestamp of the first horizon step (the forecast origin).
    pub origin: i64,
    /// Target values over the context, length L.
    pub context: Vec<f64>,
    /// Channel values over the context, one vector per channel.
    pub context_covariates: Vec<Vec<f64>>,
    /// Channel values over the horizon, masked for future-unknown channels.
    pub future_covariates: Vec<FutureCovariate>,
    /// Target over the horizon; present for training/evaluation windows.
    pub future_target: Option<Vec<f64>>,
}

impl Window {
    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    pub fn horizon_len(&self) -> usize {
        self.future_covariates
            .first()
            .map(|c| c.values.len())
            .or_else(|| self.future_target.as_ref().map(|t| t.len()))
            .unwrap_or(0)
    }
}
