//! Gradient-based parameter updates: Adam (default) and plain SGD.

use serde::{Deserialize, Serialize};

use super::{NeuralError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer with per-parameter moment accumulators.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    /// `param_lens` fixes the accumulator layout; it must match the
    /// parameter list passed to every subsequent [`Optimizer::step`].
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_lens: &[usize]) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn adam(learning_rate: f64, param_lens: &[usize]) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, param_lens)
    }

    /// One update in-place. `grads` must mirror `params` in count and
    /// length. Deterministic given inputs.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Vec<f64>],
    ) -> Result<(), NeuralError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(NeuralError::ShapeMismatch {
                context: "optimizer parameter count",
                expected: self.first_moment.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(NeuralError::ShapeMismatch {
                    context: "optimizer gradient length",
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (v, d) in p.values.iter_mut().zip(g) {
                        *v -= self.learning_rate * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                self.step_count += 1;
                let t = self.step_count as i32;
                let bias1 = 1.0 - self.beta1.powi(t);
                let bias2 = 1.0 - self.beta2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
                {
                    for k in 0..g.len() {
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                        let m_hat = m[k] / bias1;
                        let v_hat = v[k] / bias2;
                        p.values[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales all gradients down so their joint L2 norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0])];
        let grads = vec![vec![0.0, 0.0]];
        let mut opt = Optimizer::adam(0.01, &[2]);
        opt.step(&mut params.iter_mut().collect::<Vec<_>>(), &grads)
            .unwrap();
        assert_eq!(params[0].values, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_equals_learning_rate() {
        let mut params = vec![Tensor::vector(vec![1.0])];
        let grads = vec![vec![1.0]];
        let mut opt = Optimizer::adam(0.01, &[1]);
        opt.step(&mut params.iter_mut().collect::<Vec<_>>(), &grads)
            .unwrap();
        assert!((params[0].values[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn sgd_step() {
        let mut params = vec![Tensor::vector(vec![2.0])];
        let grads = vec![vec![0.5]];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &[1]);
        opt.step(&mut params.iter_mut().collect::<Vec<_>>(), &grads)
            .unwrap();
        assert!((params[0].values[0] - 1.95).abs() < 1e-15);
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let grads = vec![vec![1.0]];
        let mut opt = Optimizer::adam(0.01, &[2]);
        assert!(matches!(
            opt.step(&mut params.iter_mut().collect::<Vec<_>>(), &grads),
            Err(NeuralError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = vec![vec![3.0], vec![4.0]];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-15);
        let new_norm = (grads[0][0].powi(2) + grads[1][0].powi(2)).sqrt();
        assert!((new_norm - 1.0).abs() < 1e-12);

        let mut small = vec![vec![0.3]];
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small[0][0], 0.3);
    }
}
