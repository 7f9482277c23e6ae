//! Minimal reverse-mode automatic differentiation with dense and
//! recurrent layers.
//!
//! The building blocks here are deliberately small: a [`Tape`] records
//! vector-valued operations during the forward pass and [`Tape::backward`]
//! propagates exact adjoints through them; [`RecurrentCell`] implements
//! LSTM and GRU steps both as plain functions (for sampling) and as taped
//! operations (for training); [`Optimizer`] applies Adam or plain SGD
//! updates. Everything is `f64`: single precision is not accurate enough
//! for the finite-difference checks this module is tested against.

mod optimizer;
mod recurrent;
mod tape;

pub use optimizer::{clip_global_norm, Optimizer, OptimizerKind};
pub use recurrent::{forward_gru, forward_lstm, CellKind, CellState, RecurrentCell, TapedState};
pub use tape::{Tape, VarId};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("no recorded graph for this node; run a forward pass first")]
    GraphNotBuilt,
}

/// A dense array with shape metadata and an optional co-tangent buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix data length");
        Self {
            shape: vec![rows, cols],
            values,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }
}

/// Numerically safe `ln(1 + e^x)`: strictly positive for every input that
/// does not underflow, and equal to `x` up to rounding for large `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gaussian negative log-likelihood of one observation:
/// `0.5 ln(2 pi sigma^2) + (y - mu)^2 / (2 sigma^2)`.
pub fn gaussian_nll(mu: f64, sigma: f64, y: f64) -> Result<f64, NeuralError> {
    if !(sigma > 0.0) {
        return Err(NeuralError::NonPositiveSigma(sigma));
    }
    let var = sigma * sigma;
    Ok(0.5 * (2.0 * std::f64::consts::PI * var).ln() + (y - mu).powi(2) / (2.0 * var))
}

/// Inverted dropout. During training each element is kept with
/// probability `1 - rate` and scaled by `1 / (1 - rate)`; at inference the
/// input passes through unchanged.
pub fn dropout<R: Rng>(
    x: &[f64],
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<Vec<f64>, NeuralError> {
    let mask = dropout_mask(x.len(), rate, rng, training)?;
    Ok(x.iter().zip(&mask).map(|(v, m)| v * m).collect())
}

/// The multiplicative mask used by [`dropout`]: `1/(1-rate)` for kept
/// elements, `0` for dropped ones, all ones outside training.
pub fn dropout_mask<R: Rng>(
    len: usize,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<Vec<f64>, NeuralError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NeuralError::InvalidRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect())
}

/// Uniform initialization over `(-1/sqrt(hidden), 1/sqrt(hidden))`.
pub fn uniform_init<R: Rng>(rng: &mut R, shape: &[usize], hidden_size: usize) -> Tensor {
    let bound = 1.0 / (hidden_size as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor {
        shape: shape.to_vec(),
        values,
        grad: None,
    }
}

/// A fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Self {
        assert_eq!(weight.rows(), bias.len(), "dense weight/bias rows");
        Self { weight, bias }
    }

    pub fn init<R: Rng>(rng: &mut R, out_size: usize, in_size: usize, hidden: usize) -> Self {
        Self {
            weight: uniform_init(rng, &[out_size, in_size], hidden),
            bias: uniform_init(rng, &[out_size], hidden),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        if x.len() != self.weight.cols() {
            return Err(NeuralError::ShapeMismatch {
                context: "dense input",
                expected: self.weight.cols(),
                got: x.len(),
            });
        }
        let (m, n) = (self.weight.rows(), self.weight.cols());
        let mut out = self.bias.values.clone();
        for r in 0..m {
            let row = &self.weight.values[r * n..(r + 1) * n];
            out[r] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_closed_forms() {
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        let tiny = softplus(-100.0);
        assert!(tiny > 0.0);
        assert!((tiny - 3.72e-44).abs() < 1e-45);
    }

    #[test]
    fn softplus_positive_over_wide_range() {
        for i in -700..700 {
            assert!(softplus(i as f64) > 0.0, "softplus({i}) not positive");
        }
    }

    #[test]
    fn gaussian_nll_closed_forms() {
        let v = gaussian_nll(0.0, 1.0, 0.0).unwrap();
        assert!((v - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        let sigma = 2.5;
        let v = gaussian_nll(7.0, sigma, 7.0).unwrap();
        assert!((v - 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()).abs() < 1e-12);
        assert_eq!(
            gaussian_nll(0.0, 0.0, 0.0).unwrap_err(),
            NeuralError::NonPositiveSigma(0.0)
        );
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap(), x);
    }

    #[test]
    fn dropout_inference_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(dropout(&x, 0.2, &mut rng, false).unwrap(), x);
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = vec![1.0; 10_000];
        let out = dropout(&x, 0.5, &mut rng, true).unwrap();
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean = {mean}");
    }

    #[test]
    fn dropout_invalid_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            dropout(&[1.0], 1.0, &mut rng, true).unwrap_err(),
            NeuralError::InvalidRate(1.0)
        );
    }

    #[test]
    fn dense_apply_and_shape_check() {
        let d = Dense::new(
            Tensor::matrix(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]),
            Tensor::vector(vec![1.0, -1.0]),
        );
        let y = d.apply(&[2.0, 3.0, 4.0]).unwrap();
        assert_eq!(y, vec![1.0 + 2.0 - 4.0, -1.0 + 4.5]);
        assert!(matches!(
            d.apply(&[1.0, 2.0]),
            Err(NeuralError::ShapeMismatch { .. })
        ));
    }
}
