//! Probabilistic day-ahead wind power forecasting.
//!
//! `windcast` trains an autoregressive recurrent network with a Gaussian
//! output head on hourly wind-farm data, draws Monte Carlo sample paths over
//! a 36-hour horizon, and scores the resulting prediction intervals with
//! standard point and probabilistic metrics. It ships with persistence
//! baselines, a physics-aware synthetic data generator, a hyperparameter
//! grid search, and capacity-aware interval post-processing.
//!
//! The crate is organized around a handful of subsystems:
//!
//! - [`series`]: validated time-series container, chronological splits,
//!   rolling windows, CSV ingestion.
//! - [`analysis`]: ACF / PACF correlograms with 95% confidence bands.
//! - [`neural`]: minimal reverse-mode autodiff with LSTM/GRU cells, dense
//!   layers, and Adam/SGD optimizers.
//! - [`deepar`]: the probabilistic forecaster (likelihood training,
//!   ancestral sampling, empirical quantiles).
//! - [`baselines`]: persistence and modified persistence reference models.
//! - [`metrics`]: NRMSE, MAPE, pinball loss, wQL, PICP, MSIS.
//! - [`synthetic`]: AR(1) weather + power-curve wind farm simulator.
//! - [`pipeline`]: covariate-configuration experiments, grid search, and
//!   capacity clamping of interval bounds.
//! - [`cli`]: the `windcast` command-line front end.
//!
//! See the crate `examples/` directory for a runnable walkthrough of each
//! capability.

pub mod analysis;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod deepar;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod plot;
pub mod series;
pub mod synthetic;

pub use deepar::{DeepArConfig, ForecastDistribution, PredictionInterval, TrainedModel};
pub use metrics::EvaluationReport;
pub use series::{SplitSpec, TimeSeries, Window};
