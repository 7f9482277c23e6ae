//! Autoregressive recurrent probabilistic forecaster with a Gaussian
//! output head.
//!
//! At every step the model consumes the scaled previous target value
//! concatenated with the current covariates, runs the stack of recurrent
//! cells, and projects the last hidden state through two linear heads: one
//! for the mean and one, through a softplus, for the standard deviation.
//! Training maximizes the Gaussian log-likelihood of the horizon targets
//! under teacher forcing; prediction draws Monte Carlo sample paths by
//! ancestral sampling, feeding each sampled value back as the next lag
//! input.
//!
//! Windows are scaled individually: the target is divided by
//! `nu = 1 + mean(context)` on the way in and samples are multiplied by
//! `nu` on the way out. Covariates are z-normalized with training-set
//! statistics. Future-unknown covariates are zeroed over the horizon and
//! an availability flag channel (1 over the context, 0 over the horizon)
//! lets the model see the regime switch.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{
    clip_global_norm, softplus, CellKind, CellState, Dense, NeuralError, Optimizer,
    OptimizerKind, RecurrentCell, Tape, TapedState, Tensor, VarId,
};
use crate::series::{TimeSeries, Window};

#[derive(Debug, Error, PartialEq)]
pub enum DeepArError {
    #[error("series too short: {len} samples, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    DivergedLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("window has {got} covariate channels, model was trained with {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("context length {got} does not match model context length {expected}")]
    ContextLengthMismatch { expected: usize, got: usize },
    #[error("future covariates cover {got} steps, horizon needs {expected}")]
    CovariateHorizonMismatch { expected: usize, got: usize },
    #[error("checkpoint holds no trained parameters")]
    ModelNotTrained,
    #[error("forecast distribution needs at least 2 sample paths, got {0}")]
    EmptyDistribution(usize),
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("checkpoint error: {0}")]
    BadCheckpoint(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Model and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepArConfig {
    pub cell_kind: CellKind,
    pub layers: usize,
    pub hidden_units: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Rolling-window context length L.
    pub context_length: usize,
    /// Forecast horizon H.
    pub horizon: usize,
    /// Monte Carlo sample paths drawn per forecast.
    pub num_sample_paths: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub early_stopping_patience: usize,
    pub batch_size: usize,
    /// Windows are sampled per batch; an epoch is this many batches.
    pub batches_per_epoch: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip applied before every update.
    pub grad_clip_norm: f64,
}

impl Default for DeepArConfig {
    fn default() -> Self {
        Self {
            cell_kind: CellKind::Lstm,
            layers: 2,
            hidden_units: 64,
            dropout: 0.2,
            learning_rate: 1e-3,
            context_length: 36,
            horizon: 36,
            num_sample_paths: 200,
            max_epochs: 500,
            early_stopping_patience: 20,
            batch_size: 32,
            batches_per_epoch: 32,
            optimizer: OptimizerKind::Adam,
            grad_clip_norm: 10.0,
        }
    }
}

impl DeepArConfig {
    pub fn validate(&self) -> Result<(), DeepArError> {
        let bad = |msg: &str| Err(DeepArError::InvalidConfig(msg.to_string()));
        if self.layers == 0 || self.hidden_units == 0 {
            return bad("layers and hidden_units must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.context_length == 0 || self.horizon == 0 {
            return bad("context_length and horizon must be positive");
        }
        if self.num_sample_paths < 2 {
            return bad("num_sample_paths must be at least 2");
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.batches_per_epoch == 0 {
            return bad("max_epochs, batch_size and batches_per_epoch must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }
}

/// Window scale factor: `1 + mean(context)`. Always >= 1 for
/// non-negative power targets.
pub fn scale_factor(context: &[f64]) -> f64 {
    1.0 + context.iter().sum::<f64>() / context.len() as f64
}

/// Divides the window's target (context and, when present, future) by the
/// window scale factor. Returns the scaled window and the factor.
pub fn scale_context(window: &Window) -> (Window, f64) {
    let nu = scale_factor(&window.context);
    let mut scaled = window.clone();
    for v in &mut scaled.context {
        *v /= nu;
    }
    if let Some(fut) = &mut scaled.future_target {
        for v in fut.iter_mut() {
            *v /= nu;
        }
    }
    (scaled, nu)
}

/// Per-channel normalization statistics, estimated on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    pub future_known: bool,
    pub mean: f64,
    pub std: f64,
}

fn channel_stats(series: &TimeSeries) -> Vec<ChannelStats> {
    series
        .covariates()
        .iter()
        .map(|c| {
            let n = c.values.len() as f64;
            let mean = c.values.iter().sum::<f64>() / n;
            let var = c.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            ChannelStats {
                name: c.name.clone(),
                future_known: c.future_known,
                mean,
                std: if std > 1e-12 { std } else { 1.0 },
            }
        })
        .collect()
}

/// Monte Carlo sample paths over the forecast horizon, in MW.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDistribution {
    /// `sample_paths[s][k]` is path `s` at horizon step `k`.
    pub sample_paths: Vec<Vec<f64>>,
    /// Timestamp of the first horizon step.
    pub origin: i64,
}

impl ForecastDistribution {
    pub fn num_paths(&self) -> usize {
        self.sample_paths.len()
    }

    pub fn horizon(&self) -> usize {
        self.sample_paths.first().map_or(0, |p| p.len())
    }

    /// Per-step empirical quantile with linear interpolation between
    /// order statistics.
    pub fn quantile(&self, level: f64) -> Result<Vec<f64>, DeepArError> {
        if self.num_paths() < 2 {
            return Err(DeepArError::EmptyDistribution(self.num_paths()));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(DeepArError::InvalidQuantile(level));
        }
        let s = self.num_paths();
        let h = self.horizon();
        let mut out = Vec::with_capacity(h);
        let mut column = vec![0.0; s];
        for k in 0..h {
            for (dst, path) in column.iter_mut().zip(&self.sample_paths) {
                *dst = path[k];
            }
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
            let pos = level * (s - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            out.push(if lo + 1 < s {
                column[lo] + frac * (column[lo + 1] - column[lo])
            } else {
                column[lo]
            });
        }
        Ok(out)
    }

    /// Quantiles at several levels; rows follow the level order.
    pub fn quantiles(&self, levels: &[f64]) -> Result<Vec<Vec<f64>>, DeepArError> {
        levels.iter().map(|&q| self.quantile(q)).collect()
    }

    /// Central interval at significance `alpha` plus the median.
    pub fn prediction_interval(&self, alpha: f64) -> Result<PredictionInterval, DeepArError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(DeepArError::InvalidQuantile(alpha));
        }
        PredictionInterval::new(
            alpha,
            self.quantile(alpha / 2.0)?,
            self.quantile(0.5)?,
            self.quantile(1.0 - alpha / 2.0)?,
            self.origin,
        )
    }
}

/// Per-step lower/upper bounds at significance `alpha`, plus the median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub alpha: f64,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    /// Timestamp of the first horizon step.
    pub origin: i64,
}

impl PredictionInterval {
    pub fn new(
        alpha: f64,
        lower: Vec<f64>,
        median: Vec<f64>,
        upper: Vec<f64>,
        origin: i64,
    ) -> Result<Self, DeepArError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(DeepArError::InvalidQuantile(alpha));
        }
        if lower.len() != median.len() || lower.len() != upper.len() {
            return Err(DeepArError::CovariateHorizonMismatch {
                expected: lower.len(),
                got: median.len().max(upper.len()),
            });
        }
        for ((l, m), u) in lower.iter().zip(&median).zip(&upper) {
            if !(l <= m && m <= u) {
                return Err(DeepArError::InvalidConfig(
                    "interval bounds must satisfy lower <= median <= upper".into(),
                ));
            }
        }
        Ok(Self {
            alpha,
            lower,
            median,
            upper,
            origin,
        })
    }

    pub fn horizon(&self) -> usize {
        self.median.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelParams {
    cells: Vec<RecurrentCell>,
    head_mu: Dense,
    head_sigma: Dense,
}

impl ModelParams {
    fn init(config: &DeepArConfig, input_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let h = config.hidden_units;
        let cells = (0..config.layers)
            .map(|layer| {
                let in_size = if layer == 0 { input_size } else { h };
                RecurrentCell::init(config.cell_kind, in_size, h, rng)
            })
            .collect();
        Self {
            cells,
            head_mu: Dense::init(rng, 1, h, h),
            head_sigma: Dense::init(rng, 1, h, h),
        }
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for cell in &self.cells {
            out.extend(cell.params.iter());
        }
        out.push(&self.head_mu.weight);
        out.push(&self.head_mu.bias);
        out.push(&self.head_sigma.weight);
        out.push(&self.head_sigma.bias);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for cell in &mut self.cells {
            out.extend(cell.params.iter_mut());
        }
        out.push(&mut self.head_mu.weight);
        out.push(&mut self.head_mu.bias);
        out.push(&mut self.head_sigma.weight);
        out.push(&mut self.head_sigma.bias);
        out
    }

    fn param_lens(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }
}

struct StagedParams {
    cell_ids: Vec<Vec<VarId>>,
    mu_w: VarId,
    mu_b: VarId,
    sigma_w: VarId,
    sigma_b: VarId,
}

impl StagedParams {
    fn stage(tape: &mut Tape, params: &ModelParams) -> Self {
        let cell_ids = params
            .cells
            .iter()
            .map(|c| c.params.iter().map(|p| tape.leaf_tensor(p)).collect())
            .collect();
        Self {
            cell_ids,
            mu_w: tape.leaf_tensor(&params.head_mu.weight),
            mu_b: tape.leaf_tensor(&params.head_mu.bias),
            sigma_w: tape.leaf_tensor(&params.head_sigma.weight),
            sigma_b: tape.leaf_tensor(&params.head_sigma.bias),
        }
    }

    fn leaf_ids(&self) -> Vec<VarId> {
        let mut out: Vec<VarId> = Vec::new();
        for ids in &self.cell_ids {
            out.extend(ids.iter().copied());
        }
        out.extend([self.mu_w, self.mu_b, self.sigma_w, self.sigma_b]);
        out
    }
}

/// Assembles per-step model inputs for one window.
struct InputBuilder<'a> {
    window: &'a Window,
    stats: &'a [ChannelStats],
    has_unknown: bool,
    nu: f64,
}

impl<'a> InputBuilder<'a> {
    fn new(window: &'a Window, stats: &'a [ChannelStats], nu: f64) -> Self {
        let has_unknown = stats.iter().any(|s| !s.future_known);
        Self {
            window,
            stats,
            has_unknown,
            nu,
        }
    }

    fn input_size(stats: &[ChannelStats]) -> usize {
        1 + stats.len() + usize::from(stats.iter().any(|s| !s.future_known))
    }

    /// Input at context step `t` (0-based). The lag of the first step is
    /// zero by convention: no data before the window is consumed.
    fn context_input(&self, t: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(Self::input_size(self.stats));
        x.push(if t == 0 {
            0.0
        } else {
            self.window.context[t - 1] / self.nu
        });
        for (ch, st) in self.window.context_covariates.iter().zip(self.stats) {
            x.push((ch[t] - st.mean) / st.std);
        }
        if self.has_unknown {
            x.push(1.0);
        }
        x
    }

    /// Input at horizon step `k` (0-based) with the given scaled lag
    /// value. Future-unknown channels are fed as zeros with the
    /// availability flag at 0.
    fn future_input(&self, k: usize, lag_scaled: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(Self::input_size(self.stats));
        x.push(lag_scaled);
        for (ch, st) in self.window.future_covariates.iter().zip(self.stats) {
            if ch.available {
                x.push((ch.values[k] - st.mean) / st.std);
            } else {
                x.push(0.0);
            }
        }
        if self.has_unknown {
            x.push(0.0);
        }
        x
    }
}

/// Training loss curve; one entry per completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub validation_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_validation_nll: f64,
}

/// A trained forecaster; created by [`train`] or loaded from a
/// checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    config: DeepArConfig,
    channels: Vec<ChannelStats>,
    params: ModelParams,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: DeepArConfig,
    channels: Vec<ChannelStats>,
    params: Option<ModelParams>,
}

impl TrainedModel {
    pub fn config(&self) -> &DeepArConfig {
        &self.config
    }

    pub fn channels(&self) -> &[ChannelStats] {
        &self.channels
    }

    /// Serializes the model as JSON. Values survive the round trip at
    /// full double precision.
    pub fn save(&self, path: &std::path::Path) -> Result<(), DeepArError> {
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            channels: self.channels.clone(),
            params: Some(self.params.clone()),
        };
        let json = serde_json::to_string_pretty(&checkpoint)
            .map_err(|e| DeepArError::BadCheckpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| DeepArError::Io(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DeepArError> {
        let text = std::fs::read_to_string(path).map_err(|e| DeepArError::Io(e.to_string()))?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&text).map_err(|e| DeepArError::BadCheckpoint(e.to_string()))?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(DeepArError::BadCheckpoint(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        let params = checkpoint.params.ok_or(DeepArError::ModelNotTrained)?;
        if params.cells.is_empty() {
            return Err(DeepArError::ModelNotTrained);
        }
        Ok(Self {
            config: checkpoint.config,
            channels: checkpoint.channels,
            params,
        })
    }

    fn validate_window(&self, window: &Window) -> Result<(), DeepArError> {
        if window.context_len() != self.config.context_length {
            return Err(DeepArError::ContextLengthMismatch {
                expected: self.config.context_length,
                got: window.context_len(),
            });
        }
        if window.context_covariates.len() != self.channels.len() {
            return Err(DeepArError::ChannelMismatch {
                expected: self.channels.len(),
                got: window.context_covariates.len(),
            });
        }
        for (ch, st) in window.future_covariates.iter().zip(&self.channels) {
            if st.future_known {
                if !ch.available || ch.values.len() != self.config.horizon {
                    return Err(DeepArError::CovariateHorizonMismatch {
                        expected: self.config.horizon,
                        got: ch.values.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs the recurrent stack over the context, value-level.
    fn encode_context(&self, builder: &InputBuilder) -> Vec<CellState> {
        let mut states: Vec<CellState> = self
            .params
            .cells
            .iter()
            .map(|c| CellState::zeros(c.kind, c.hidden_size))
            .collect();
        for t in 0..self.config.context_length {
            let mut x = builder.context_input(t);
            for (cell, state) in self.params.cells.iter().zip(&mut states) {
                let (out, next) = cell.forward(&x, state).expect("validated shapes");
                *state = next;
                x = out;
            }
        }
        states
    }

    /// Draws `num_paths` ancestral-sampling paths over the horizon.
    /// Deterministic given the seed; path `i` owns the derived stream
    /// `seed ^ i`, so parallel and serial execution agree.
    pub fn forecast(
        &self,
        window: &Window,
        num_paths: usize,
        seed: u64,
    ) -> Result<ForecastDistribution, DeepArError> {
        if num_paths < 2 {
            return Err(DeepArError::EmptyDistribution(num_paths));
        }
        self.validate_window(window)?;
        let nu = scale_factor(&window.context);
        let builder = InputBuilder::new(window, &self.channels, nu);
        let encoded = self.encode_context(&builder);
        let z0 = window.context[window.context_len() - 1] / nu;
        let horizon = self.config.horizon;

        let sample_paths: Vec<Vec<f64>> = (0..num_paths as u64)
            .into_par_iter()
            .map(|path_idx| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ path_idx);
                let mut states = encoded.clone();
                let mut z = z0;
                let mut path = Vec::with_capacity(horizon);
                for k in 0..horizon {
                    let mut x = builder.future_input(k, z);
                    for (cell, state) in self.params.cells.iter().zip(&mut states) {
                        let (out, next) = cell.forward(&x, state).expect("validated shapes");
                        *state = next;
                        x = out;
                    }
                    let mu = self.params.head_mu.apply(&x).expect("head shape")[0];
                    let sigma = softplus(self.params.head_sigma.apply(&x).expect("head shape")[0]);
                    let eps: f64 = rng.sample(StandardNormal);
                    z = mu + sigma * eps;
                    path.push(z * nu);
                }
                path
            })
            .collect();

        Ok(ForecastDistribution {
            sample_paths,
            origin: window.origin,
        })
    }

    /// Test hook: a model with explicit parameters.
    #[doc(hidden)]
    pub fn from_parts(
        config: DeepArConfig,
        channels: Vec<ChannelStats>,
        cells: Vec<RecurrentCell>,
        head_mu: Dense,
        head_sigma: Dense,
    ) -> Result<Self, DeepArError> {
        if cells.is_empty() {
            return Err(DeepArError::ModelNotTrained);
        }
        Ok(Self {
            config,
            channels,
            params: ModelParams {
                cells,
                head_mu,
                head_sigma,
            },
        })
    }
}

/// One window's taped forward pass: mean Gaussian NLL over the horizon
/// steps under teacher forcing. Returns the tape, the loss node, and the
/// staged parameter leaves.
fn window_nll_tape(
    params: &ModelParams,
    config: &DeepArConfig,
    builder: &InputBuilder,
    targets_scaled: &[f64],
    dropout_masks: Option<&[Vec<f64>]>,
) -> Result<(Tape, VarId, StagedParams), NeuralError> {
    let mut tape = Tape::new();
    let staged = StagedParams::stage(&mut tape, params);
    let mut states: Vec<TapedState> = params
        .cells
        .iter()
        .map(|c| {
            let hidden = tape.leaf(&vec![0.0; c.hidden_size]);
            let cell = matches!(c.kind, CellKind::Lstm)
                .then(|| tape.leaf(&vec![0.0; c.hidden_size]));
            TapedState { hidden, cell }
        })
        .collect();

    let context_length = config.context_length;
    let horizon = config.horizon;
    let mut loss: Option<VarId> = None;
    for t in 0..context_length + horizon {
        let input_values = if t < context_length {
            builder.context_input(t)
        } else {
            let k = t - context_length;
            let lag = if k == 0 {
                builder.window.context[context_length - 1] / builder.nu
            } else {
                targets_scaled[k - 1]
            };
            builder.future_input(k, lag)
        };
        let mut x = tape.leaf(&input_values);
        for (layer, cell) in params.cells.iter().enumerate() {
            let next = cell.step_on_tape(&mut tape, &staged.cell_ids[layer], x, &states[layer])?;
            states[layer] = next;
            x = next.hidden;
            if let Some(masks) = dropout_masks {
                x = tape.dropout(x, masks[t * params.cells.len() + layer].clone())?;
            }
        }
        if t >= context_length {
            let k = t - context_length;
            let mu = tape.dense(staged.mu_w, staged.mu_b, x)?;
            let sigma_pre = tape.dense(staged.sigma_w, staged.sigma_b, x)?;
            let sigma = tape.softplus(sigma_pre)?;
            let nll = tape.gaussian_nll(mu, sigma, vec![targets_scaled[k]])?;
            loss = Some(match loss {
                None => nll,
                Some(acc) => tape.add(acc, nll)?,
            });
        }
    }
    let total = loss.expect("horizon >= 1");
    let mean_loss = tape.scale(total, 1.0 / horizon as f64)?;
    Ok((tape, mean_loss, staged))
}

/// Loss and parameter gradients for one training window.
fn window_loss_and_grads(
    params: &ModelParams,
    config: &DeepArConfig,
    series: &TimeSeries,
    stats: &[ChannelStats],
    start: usize,
    mask_seed: u64,
) -> Result<(f64, Vec<Vec<f64>>), NeuralError> {
    let window = series.extract_window(start, config.context_length, config.horizon, true);
    let nu = scale_factor(&window.context);
    let targets_scaled: Vec<f64> = window
        .future_target
        .as_ref()
        .expect("training window")
        .iter()
        .map(|y| y / nu)
        .collect();
    let masks = if config.dropout > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let steps = config.context_length + config.horizon;
        let mut masks = Vec::with_capacity(steps * config.layers);
        for _ in 0..steps * config.layers {
            masks.push(
                crate::neural::dropout_mask(config.hidden_units, config.dropout, &mut rng, true)
                    .expect("validated rate"),
            );
        }
        Some(masks)
    } else {
        None
    };
    let builder = InputBuilder::new(&window, stats, nu);
    let (mut tape, loss, staged) =
        window_nll_tape(params, config, &builder, &targets_scaled, masks.as_deref())?;
    tape.backward(loss)?;
    let grads = staged
        .leaf_ids()
        .iter()
        .map(|&id| tape.grad(id).to_vec())
        .collect();
    Ok((tape.value(loss)[0], grads))
}

/// Validation NLL over a deterministic subset of windows (at most 64,
/// evenly strided), teacher-forced, without dropout.
fn validation_nll(
    params: &ModelParams,
    config: &DeepArConfig,
    series: &TimeSeries,
    stats: &[ChannelStats],
) -> Result<f64, NeuralError> {
    let n_windows = series.len() - config.context_length - config.horizon + 1;
    let stride = n_windows.div_ceil(64).max(1);
    let starts: Vec<usize> = (0..n_windows).step_by(stride).collect();
    let losses: Vec<f64> = starts
        .par_iter()
        .map(|&start| {
            let window = series.extract_window(start, config.context_length, config.horizon, true);
            let nu = scale_factor(&window.context);
            let targets_scaled: Vec<f64> = window
                .future_target
                .as_ref()
                .expect("validation window")
                .iter()
                .map(|y| y / nu)
                .collect();
            let builder = InputBuilder::new(&window, stats, nu);
            let (tape, loss, _) =
                window_nll_tape(params, config, &builder, &targets_scaled, None)?;
            Ok(tape.value(loss)[0])
        })
        .collect::<Result<_, NeuralError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains on the training split with early stopping on validation NLL.
/// Returns the best-validation checkpoint and the loss trace.
/// Deterministic given the seed.
pub fn train(
    config: &DeepArConfig,
    train_series: &TimeSeries,
    validation_series: &TimeSeries,
    seed: u64,
) -> Result<(TrainedModel, LossTrace), DeepArError> {
    config.validate()?;
    let min_len = config.context_length + config.horizon;
    for series in [train_series, validation_series] {
        if series.len() < min_len {
            return Err(DeepArError::SeriesTooShort {
                len: series.len(),
                min: min_len,
            });
        }
    }
    let stats = channel_stats(train_series);
    {
        let val_names: Vec<&str> = validation_series
            .covariates()
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        let train_names: Vec<&str> = stats.iter().map(|s| s.name.as_str()).collect();
        if val_names != train_names {
            return Err(DeepArError::ChannelMismatch {
                expected: train_names.len(),
                got: val_names.len(),
            });
        }
    }

    let input_size = InputBuilder::input_size(&stats);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(config, input_size, &mut init_rng);
    let mut optimizer = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        &params.param_lens(),
    );
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));

    let n_windows = train_series.len() - min_len + 1;
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut patience_left = config.early_stopping_patience;
    let mut trace = Vec::new();

    for epoch in 0..config.max_epochs {
        let mut epoch_loss = 0.0;
        for batch in 0..config.batches_per_epoch {
            // Window starts and mask seeds are drawn sequentially so the
            // parallel map below cannot affect determinism.
            let jobs: Vec<(usize, u64)> = (0..config.batch_size)
                .map(|_| (batch_rng.gen_range(0..n_windows), batch_rng.gen::<u64>()))
                .collect();
            let results: Vec<Result<(f64, Vec<Vec<f64>>), NeuralError>> = jobs
                .par_iter()
                .map(|&(start, mask_seed)| {
                    window_loss_and_grads(&params, config, train_series, &stats, start, mask_seed)
                })
                .collect();

            let mut batch_loss = 0.0;
            let mut total_grads: Option<Vec<Vec<f64>>> = None;
            for result in results {
                let (loss, grads) = result.map_err(|e| match e {
                    NeuralError::NonPositiveSigma(s) => DeepArError::DivergedLoss {
                        epoch,
                        batch,
                        detail: format!("sigma head underflowed to {s}"),
                    },
                    other => DeepArError::Neural(other),
                })?;
                batch_loss += loss;
                match &mut total_grads {
                    None => total_grads = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            batch_loss /= config.batch_size as f64;
            if !batch_loss.is_finite() || batch_loss.abs() > 1e12 {
                return Err(DeepArError::DivergedLoss {
                    epoch,
                    batch,
                    detail: format!("batch NLL is {batch_loss}"),
                });
            }
            let mut grads = total_grads.expect("batch_size >= 1");
            let scale = 1.0 / config.batch_size as f64;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            let norm = clip_global_norm(&mut grads, config.grad_clip_norm);
            if !norm.is_finite() {
                return Err(DeepArError::DivergedLoss {
                    epoch,
                    batch,
                    detail: format!("gradient norm is {norm}"),
                });
            }
            optimizer.step(&mut params.tensors_mut(), &grads)?;
            epoch_loss += batch_loss;
        }
        epoch_loss /= config.batches_per_epoch as f64;

        let val_nll = validation_nll(&params, config, validation_series, &stats)
            .map_err(DeepArError::Neural)?;
        trace.push(EpochStats {
            epoch,
            train_nll: epoch_loss,
            validation_nll: val_nll,
        });
        if val_nll < best_val {
            best_val = val_nll;
            best_epoch = epoch;
            best_params = params.clone();
            patience_left = config.early_stopping_patience;
        } else {
            patience_left -= 1;
            if patience_left == 0 {
                break;
            }
        }
    }

    Ok((
        TrainedModel {
            config: config.clone(),
            channels: stats,
            params: best_params,
        },
        LossTrace {
            epochs: trace,
            best_epoch,
            best_validation_nll: best_val,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::TimeSeries;

    fn sine_series(n: usize) -> TimeSeries {
        let target = (0..n)
            .map(|t| 25.0 + 20.0 * (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin())
            .collect();
        TimeSeries::from_target(0, target, 54.0).unwrap()
    }

    fn tiny_config() -> DeepArConfig {
        DeepArConfig {
            layers: 1,
            hidden_units: 8,
            dropout: 0.0,
            learning_rate: 1e-2,
            context_length: 24,
            horizon: 12,
            num_sample_paths: 50,
            max_epochs: 15,
            early_stopping_patience: 15,
            batch_size: 8,
            batches_per_epoch: 4,
            ..DeepArConfig::default()
        }
    }

    #[test]
    fn scale_context_cases() {
        let s = TimeSeries::from_target(0, vec![0.0; 80], 54.0).unwrap();
        let w = s.extract_window(0, 36, 36, true);
        let (scaled, nu) = scale_context(&w);
        assert_eq!(nu, 1.0);
        assert_eq!(scaled, w);

        let s = TimeSeries::from_target(0, vec![9.0; 80], 54.0).unwrap();
        let w = s.extract_window(0, 36, 36, true);
        let (scaled, nu) = scale_context(&w);
        assert_eq!(nu, 10.0);
        assert!(scaled.context.iter().all(|&v| (v - 0.9).abs() < 1e-15));
    }

    #[test]
    fn scale_round_trip() {
        let s = sine_series(100);
        let w = s.extract_window(3, 36, 36, true);
        let (scaled, nu) = scale_context(&w);
        for (a, b) in scaled.context.iter().zip(&w.context) {
            assert!((a * nu - b).abs() < 1e-12);
        }
        for (a, b) in scaled
            .future_target
            .as_ref()
            .unwrap()
            .iter()
            .zip(w.future_target.as_ref().unwrap())
        {
            assert!((a * nu - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_reduces_nll_on_sine() {
        let series = sine_series(300);
        let (train_s, val_s, _) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let config = tiny_config();
        let (_, trace) = train(&config, &train_s, &val_s, 7).unwrap();
        let first = trace.epochs.first().unwrap().train_nll;
        let last = trace.epochs.last().unwrap().train_nll;
        assert!(last < first, "NLL did not improve: {first} -> {last}");
    }

    #[test]
    fn early_stopping_checkpoint_is_best() {
        let series = sine_series(300);
        let (train_s, val_s, _) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let (_, trace) = train(&tiny_config(), &train_s, &val_s, 3).unwrap();
        let final_val = trace.epochs.last().unwrap().validation_nll;
        assert!(trace.best_validation_nll <= final_val);
        for e in &trace.epochs {
            assert!(trace.best_validation_nll <= e.validation_nll + 1e-12);
        }
    }

    #[test]
    fn constant_series_learns_mean() {
        let c = 20.0;
        let series = TimeSeries::from_target(0, vec![c; 400], 54.0).unwrap();
        let (train_s, val_s, test_s) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let mut config = tiny_config();
        config.max_epochs = 60;
        config.early_stopping_patience = 60;
        let (model, _) = train(&config, &train_s, &val_s, 11).unwrap();
        let w = test_s.extract_window(0, config.context_length, config.horizon, false);
        let dist = model.forecast(&w, 200, 5).unwrap();
        let median = dist.quantile(0.5).unwrap();
        for v in &median {
            assert!((v - c).abs() < 0.05 * c, "median {v} vs {c}");
        }
    }

    #[test]
    fn sigma_shrinks_with_training_on_constant_series() {
        let series = TimeSeries::from_target(0, vec![20.0; 400], 54.0).unwrap();
        let (train_s, val_s, test_s) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let sample_std = |epochs: usize| {
            let mut config = tiny_config();
            config.max_epochs = epochs;
            config.early_stopping_patience = epochs;
            let (model, _) = train(&config, &train_s, &val_s, 11).unwrap();
            let w = test_s.extract_window(0, config.context_length, config.horizon, false);
            let dist = model.forecast(&w, 300, 5).unwrap();
            let first: Vec<f64> = dist.sample_paths.iter().map(|p| p[0]).collect();
            let mean = first.iter().sum::<f64>() / first.len() as f64;
            (first.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / first.len() as f64).sqrt()
        };
        let early = sample_std(2);
        let late = sample_std(40);
        assert!(late < early, "sigma did not shrink: {early} -> {late}");
    }

    #[test]
    fn diverged_loss_on_huge_learning_rate() {
        // An out-of-grid learning rate makes the first Adam step slam the
        // sigma head; on a near-constant target the noise scale collapses
        // instead of inflating and the NLL blows up.
        let series = TimeSeries::from_target(0, vec![2.0; 300], 54.0).unwrap();
        let (train_s, val_s, _) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let mut config = tiny_config();
        config.learning_rate = 1e3;
        config.max_epochs = 10;
        let err = train(&config, &train_s, &val_s, 42).unwrap_err();
        assert!(
            matches!(err, DeepArError::DivergedLoss { .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn too_short_series_is_rejected() {
        let series = sine_series(30);
        let config = tiny_config();
        let err = train(&config, &series, &series, 1).unwrap_err();
        assert!(matches!(err, DeepArError::SeriesTooShort { .. }));
    }

    #[test]
    fn forecast_is_deterministic_and_seed_sensitive() {
        let series = sine_series(300);
        let (train_s, val_s, test_s) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let mut config = tiny_config();
        config.max_epochs = 3;
        let (model, _) = train(&config, &train_s, &val_s, 7).unwrap();
        let w = test_s.extract_window(0, config.context_length, config.horizon, false);
        let a = model.forecast(&w, 40, 123).unwrap();
        let b = model.forecast(&w, 40, 123).unwrap();
        assert_eq!(a, b);
        let c = model.forecast(&w, 40, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_sigma_collapses_paths_to_mean_trajectory() {
        // Zero cells map any input to hidden 0; the sigma head bias is so
        // negative that softplus(bias) underflows the noise scale.
        let config = DeepArConfig {
            layers: 1,
            hidden_units: 4,
            context_length: 8,
            horizon: 5,
            ..DeepArConfig::default()
        };
        let cells = vec![RecurrentCell::zeros(CellKind::Lstm, 1, 4)];
        let head_mu = Dense::new(Tensor::matrix(1, 4, vec![0.0; 4]), Tensor::vector(vec![0.7]));
        let head_sigma = Dense::new(
            Tensor::matrix(1, 4, vec![0.0; 4]),
            Tensor::vector(vec![-500.0]),
        );
        let model =
            TrainedModel::from_parts(config, vec![], cells, head_mu, head_sigma).unwrap();
        let series = TimeSeries::from_target(0, vec![3.0; 20], 54.0).unwrap();
        let w = series.extract_window(0, 8, 5, false);
        let nu = scale_factor(&w.context);
        let dist = model.forecast(&w, 10, 9).unwrap();
        for path in &dist.sample_paths {
            for v in path {
                assert!((v - 0.7 * nu).abs() < 1e-9, "path value {v}");
            }
        }
    }

    #[test]
    fn forecast_paths_match_clt_bound_on_constant_model() {
        let series = TimeSeries::from_target(0, vec![20.0; 400], 54.0).unwrap();
        let (train_s, val_s, test_s) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let mut config = tiny_config();
        config.max_epochs = 40;
        config.early_stopping_patience = 40;
        let (model, _) = train(&config, &train_s, &val_s, 11).unwrap();
        let w = test_s.extract_window(0, config.context_length, config.horizon, false);
        let dist = model.forecast(&w, 2000, 77).unwrap();
        let first: Vec<f64> = dist.sample_paths.iter().map(|p| p[0]).collect();
        let mean = first.iter().sum::<f64>() / first.len() as f64;
        let std = (first.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / first.len() as f64)
            .sqrt();
        // CLT: the sample mean sits within 3 sigma / sqrt(S) of mu.
        let mu_est = mean; // proxy: with 2000 paths the mean is the best mu estimate
        assert!((mu_est - 20.0).abs() < 1.0 + 3.0 * std / (2000f64).sqrt());
    }

    #[test]
    fn covariate_horizon_mismatch_is_rejected() {
        let series = sine_series(300);
        let (train_s, val_s, test_s) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let mut config = tiny_config();
        config.max_epochs = 2;
        let (model, _) = train(&config, &train_s, &val_s, 7).unwrap();
        let mut w = test_s.extract_window(0, config.context_length, config.horizon, false);
        w.context.pop();
        let err = model.forecast(&w, 10, 1).unwrap_err();
        assert!(matches!(err, DeepArError::ContextLengthMismatch { .. }));
    }

    #[test]
    fn quantile_interpolation_midpoint() {
        let dist = ForecastDistribution {
            sample_paths: (1..=100).map(|v| vec![v as f64]).collect(),
            origin: 0,
        };
        let q = dist.quantile(0.5).unwrap();
        assert!((q[0] - 50.5).abs() < 1e-12);
    }

    #[test]
    fn quantiles_are_monotone_across_levels() {
        let dist = ForecastDistribution {
            sample_paths: (0..50).map(|v| vec![(v * 7 % 13) as f64, -(v as f64)]).collect(),
            origin: 0,
        };
        let pi = dist.prediction_interval(0.05).unwrap();
        for k in 0..pi.horizon() {
            assert!(pi.lower[k] <= pi.median[k]);
            assert!(pi.median[k] <= pi.upper[k]);
        }
    }

    #[test]
    fn standard_normal_quantile_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dist = ForecastDistribution {
            sample_paths: (0..10_000)
                .map(|_| vec![rng.sample::<f64, _>(StandardNormal)])
                .collect(),
            origin: 0,
        };
        let q = dist.quantile(0.975).unwrap();
        assert!((q[0] - 1.96).abs() < 0.08, "q = {}", q[0]);
    }

    #[test]
    fn empty_distribution_errors() {
        let dist = ForecastDistribution {
            sample_paths: vec![vec![1.0]],
            origin: 0,
        };
        assert_eq!(
            dist.quantile(0.5).unwrap_err(),
            DeepArError::EmptyDistribution(1)
        );
    }

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let series = sine_series(300);
        let (train_s, val_s, _) = series.split(&crate::series::SplitSpec::default(), 36).unwrap();
        let mut config = tiny_config();
        config.max_epochs = 2;
        let (model, _) = train(&config, &train_s, &val_s, 7).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        model.save(f.path()).unwrap();
        let loaded = TrainedModel::load(f.path()).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn checkpoint_without_params_is_model_not_trained() {
        let json = serde_json::json!({
            "version": 1,
            "config": DeepArConfig::default(),
            "channels": [],
            "params": null,
        });
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), serde_json::to_string(&json).unwrap()).unwrap();
        assert_eq!(
            TrainedModel::load(f.path()).unwrap_err(),
            DeepArError::ModelNotTrained
        );
    }
}
