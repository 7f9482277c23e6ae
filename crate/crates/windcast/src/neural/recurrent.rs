//! LSTM and GRU recurrent cells.
//!
//! Each cell exists in two forms: a plain value-level step (used for
//! ancestral sampling, where no gradients are needed) and a taped step
//! (used for training). The two are checked against each other in tests.
//!
//! Parameter layout, all matrices row-major over `[input, hidden]`
//! concatenated inputs:
//! - LSTM: `[w_gates (4h x (in+h)), b_gates (4h)]`, gate order
//!   input / forget / candidate / output.
//! - GRU: `[w_rz (2h x (in+h)), b_rz (2h), w_n (h x (in+h)), b_n (h)]`,
//!   gate order reset / update; the candidate path sees `[x, r .* h]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, VarId};
use super::{sigmoid, uniform_init, NeuralError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellKind::Lstm => write!(f, "lstm"),
            CellKind::Gru => write!(f, "gru"),
        }
    }
}

/// Recurrent state: hidden vector, plus the cell vector for LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub hidden: Vec<f64>,
    pub cell: Option<Vec<f64>>,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden_size: usize) -> Self {
        Self {
            hidden: vec![0.0; hidden_size],
            cell: matches!(kind, CellKind::Lstm).then(|| vec![0.0; hidden_size]),
        }
    }
}

/// Taped counterpart of [`CellState`].
#[derive(Debug, Clone, Copy)]
pub struct TapedState {
    pub hidden: VarId,
    pub cell: Option<VarId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentCell {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub params: Vec<Tensor>,
}

impl RecurrentCell {
    pub fn init<R: Rng>(kind: CellKind, input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let joint = input_size + hidden_size;
        let params = match kind {
            CellKind::Lstm => vec![
                uniform_init(rng, &[4 * hidden_size, joint], hidden_size),
                uniform_init(rng, &[4 * hidden_size], hidden_size),
            ],
            CellKind::Gru => vec![
                uniform_init(rng, &[2 * hidden_size, joint], hidden_size),
                uniform_init(rng, &[2 * hidden_size], hidden_size),
                uniform_init(rng, &[hidden_size, joint], hidden_size),
                uniform_init(rng, &[hidden_size], hidden_size),
            ],
        };
        Self {
            kind,
            input_size,
            hidden_size,
            params,
        }
    }

    /// All-zero parameters; with zero state this maps any input to a zero
    /// hidden vector.
    pub fn zeros(kind: CellKind, input_size: usize, hidden_size: usize) -> Self {
        let joint = input_size + hidden_size;
        let params = match kind {
            CellKind::Lstm => vec![
                Tensor::zeros(&[4 * hidden_size, joint]),
                Tensor::zeros(&[4 * hidden_size]),
            ],
            CellKind::Gru => vec![
                Tensor::zeros(&[2 * hidden_size, joint]),
                Tensor::zeros(&[2 * hidden_size]),
                Tensor::zeros(&[hidden_size, joint]),
                Tensor::zeros(&[hidden_size]),
            ],
        };
        Self {
            kind,
            input_size,
            hidden_size,
            params,
        }
    }

    fn check_step_shapes(&self, input: &[f64], state: &CellState) -> Result<(), NeuralError> {
        if input.len() != self.input_size {
            return Err(NeuralError::ShapeMismatch {
                context: "recurrent cell input",
                expected: self.input_size,
                got: input.len(),
            });
        }
        if state.hidden.len() != self.hidden_size {
            return Err(NeuralError::ShapeMismatch {
                context: "recurrent cell hidden state",
                expected: self.hidden_size,
                got: state.hidden.len(),
            });
        }
        if matches!(self.kind, CellKind::Lstm) {
            let cell_len = state.cell.as_ref().map_or(0, |c| c.len());
            if cell_len != self.hidden_size {
                return Err(NeuralError::ShapeMismatch {
                    context: "lstm cell state",
                    expected: self.hidden_size,
                    got: cell_len,
                });
            }
        }
        Ok(())
    }

    /// One value-level step; dispatches on the cell kind.
    pub fn forward(&self, input: &[f64], state: &CellState) -> Result<(Vec<f64>, CellState), NeuralError> {
        match self.kind {
            CellKind::Lstm => forward_lstm(self, input, state),
            CellKind::Gru => forward_gru(self, input, state),
        }
    }

    /// One taped step. `param_ids` are the tape leaves for
    /// [`RecurrentCell::params`], in order.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        param_ids: &[VarId],
        input: VarId,
        state: &TapedState,
    ) -> Result<TapedState, NeuralError> {
        let h = self.hidden_size;
        match self.kind {
            CellKind::Lstm => {
                let joint = tape.concat(input, state.hidden)?;
                let pre = tape.dense(param_ids[0], param_ids[1], joint)?;
                let i_gate = {
                    let s = tape.slice(pre, 0, h)?;
                    tape.sigmoid(s)?
                };
                let f_gate = {
                    let s = tape.slice(pre, h, h)?;
                    tape.sigmoid(s)?
                };
                let g_cand = {
                    let s = tape.slice(pre, 2 * h, h)?;
                    tape.tanh(s)?
                };
                let o_gate = {
                    let s = tape.slice(pre, 3 * h, h)?;
                    tape.sigmoid(s)?
                };
                let c_prev = state.cell.ok_or(NeuralError::ShapeMismatch {
                    context: "lstm cell state",
                    expected: h,
                    got: 0,
                })?;
                let fc = tape.mul(f_gate, c_prev)?;
                let ig = tape.mul(i_gate, g_cand)?;
                let c_new = tape.add(fc, ig)?;
                let c_tanh = tape.tanh(c_new)?;
                let h_new = tape.mul(o_gate, c_tanh)?;
                Ok(TapedState {
                    hidden: h_new,
                    cell: Some(c_new),
                })
            }
            CellKind::Gru => {
                let joint = tape.concat(input, state.hidden)?;
                let rz = tape.dense(param_ids[0], param_ids[1], joint)?;
                let r_gate = {
                    let s = tape.slice(rz, 0, h)?;
                    tape.sigmoid(s)?
                };
                let z_gate = {
                    let s = tape.slice(rz, h, h)?;
                    tape.sigmoid(s)?
                };
                let rh = tape.mul(r_gate, state.hidden)?;
                let joint_n = tape.concat(input, rh)?;
                let n_cand = {
                    let pre = tape.dense(param_ids[2], param_ids[3], joint_n)?;
                    tape.tanh(pre)?
                };
                let one_minus_z = tape.one_minus(z_gate)?;
                let zn = tape.mul(one_minus_z, n_cand)?;
                let zh = tape.mul(z_gate, state.hidden)?;
                let h_new = tape.add(zn, zh)?;
                Ok(TapedState {
                    hidden: h_new,
                    cell: None,
                })
            }
        }
    }
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = w.cols();
    let mut out = b.values.clone();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.values[r * n..(r + 1) * n];
        let (rx, rh) = row.split_at(x.len());
        *o += rx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            + rh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    }
    out
}

/// Standard LSTM gate algebra: input/forget/output gates and a tanh cell
/// candidate; the new hidden state is the output.
pub fn forward_lstm(
    cell: &RecurrentCell,
    input: &[f64],
    state: &CellState,
) -> Result<(Vec<f64>, CellState), NeuralError> {
    cell.check_step_shapes(input, state)?;
    let h = cell.hidden_size;
    let pre = affine(&cell.params[0], &cell.params[1], input, &state.hidden);
    let c_prev = state.cell.as_ref().expect("checked lstm state");
    let mut c_new = vec![0.0; h];
    let mut h_new = vec![0.0; h];
    for k in 0..h {
        let i_gate = sigmoid(pre[k]);
        let f_gate = sigmoid(pre[h + k]);
        let g_cand = pre[2 * h + k].tanh();
        let o_gate = sigmoid(pre[3 * h + k]);
        c_new[k] = f_gate * c_prev[k] + i_gate * g_cand;
        h_new[k] = o_gate * c_new[k].tanh();
    }
    Ok((
        h_new.clone(),
        CellState {
            hidden: h_new,
            cell: Some(c_new),
        },
    ))
}

/// Standard GRU step with reset/update gates; the new hidden state is a
/// convex combination of the previous state and a tanh candidate.
pub fn forward_gru(
    cell: &RecurrentCell,
    input: &[f64],
    state: &CellState,
) -> Result<(Vec<f64>, CellState), NeuralError> {
    cell.check_step_shapes(input, state)?;
    let h = cell.hidden_size;
    let rz = affine(&cell.params[0], &cell.params[1], input, &state.hidden);
    let rh: Vec<f64> = (0..h).map(|k| sigmoid(rz[k]) * state.hidden[k]).collect();
    let n_pre = affine(&cell.params[2], &cell.params[3], input, &rh);
    let mut h_new = vec![0.0; h];
    for k in 0..h {
        let z = sigmoid(rz[h + k]);
        let n = n_pre[k].tanh();
        h_new[k] = (1.0 - z) * n + z * state.hidden[k];
    }
    Ok((
        h_new.clone(),
        CellState {
            hidden: h_new,
            cell: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_zero_weights_zero_state_gives_zero_hidden() {
        let cell = RecurrentCell::zeros(CellKind::Lstm, 3, 4);
        let state = CellState::zeros(CellKind::Lstm, 4);
        let (out, next) = cell.forward(&[1.0, -2.0, 0.5], &state).unwrap();
        assert_eq!(out, vec![0.0; 4]);
        assert_eq!(next.hidden, vec![0.0; 4]);
    }

    #[test]
    fn gru_zero_weights_zero_state_gives_zero_hidden() {
        let cell = RecurrentCell::zeros(CellKind::Gru, 2, 3);
        let state = CellState::zeros(CellKind::Gru, 3);
        let (out, _) = cell.forward(&[5.0, -1.0], &state).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn lstm_scalar_step_matches_hand_evaluation() {
        // Single unit, input 1.0, zero state, hand-set weights.
        // pre_i = 0.3*1.0 + 0.1*0 + 0.05 ; pre_f = -0.2 + 0.2*0 - 0.1
        // pre_g = 0.7 + (-0.3)*0 + 0.0  ; pre_o = 0.5 + 0.4*0 + 0.15
        let cell = RecurrentCell {
            kind: CellKind::Lstm,
            input_size: 1,
            hidden_size: 1,
            params: vec![
                Tensor::matrix(4, 2, vec![0.3, 0.1, -0.2, 0.2, 0.7, -0.3, 0.5, 0.4]),
                Tensor::vector(vec![0.05, -0.1, 0.0, 0.15]),
            ],
        };
        let state = CellState::zeros(CellKind::Lstm, 1);
        let (out, next) = cell.forward(&[1.0], &state).unwrap();
        let i = 1.0 / (1.0 + (-0.35f64).exp());
        let g = 0.7f64.tanh();
        let o = 1.0 / (1.0 + (-0.65f64).exp());
        let c = i * g; // forget * 0 drops out
        let expected = o * c.tanh();
        assert!((out[0] - expected).abs() < 1e-15, "{} vs {expected}", out[0]);
        assert!((next.cell.as_ref().unwrap()[0] - c).abs() < 1e-15);
    }

    #[test]
    fn gru_scalar_step_matches_hand_evaluation() {
        // Single unit, nonzero previous hidden state 0.5.
        let cell = RecurrentCell {
            kind: CellKind::Gru,
            input_size: 1,
            hidden_size: 1,
            params: vec![
                Tensor::matrix(2, 2, vec![0.4, -0.2, 0.3, 0.6]),
                Tensor::vector(vec![0.1, -0.05]),
                Tensor::matrix(1, 2, vec![0.8, 0.5]),
                Tensor::vector(vec![0.2]),
            ],
        };
        let state = CellState {
            hidden: vec![0.5],
            cell: None,
        };
        let x = 1.0;
        let (out, _) = cell.forward(&[x], &state).unwrap();
        let r = 1.0 / (1.0 + (-(0.4 * x - 0.2 * 0.5 + 0.1f64)).exp());
        let z = 1.0 / (1.0 + (-(0.3 * x + 0.6 * 0.5 - 0.05f64)).exp());
        let n = (0.8 * x + 0.5 * (r * 0.5) + 0.2f64).tanh();
        let expected = (1.0 - z) * n + z * 0.5;
        assert!((out[0] - expected).abs() < 1e-15, "{} vs {expected}", out[0]);
    }

    #[test]
    fn wrong_input_length_is_shape_mismatch() {
        let cell = RecurrentCell::zeros(CellKind::Lstm, 3, 4);
        let state = CellState::zeros(CellKind::Lstm, 4);
        assert!(matches!(
            cell.forward(&[1.0], &state),
            Err(NeuralError::ShapeMismatch { .. })
        ));
        let gru = RecurrentCell::zeros(CellKind::Gru, 2, 2);
        let state = CellState::zeros(CellKind::Gru, 2);
        assert!(matches!(
            gru.forward(&[1.0, 2.0, 3.0], &state),
            Err(NeuralError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn hidden_state_stays_in_unit_interval() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let cell = RecurrentCell::init(kind, 2, 6, &mut rng);
            let mut state = CellState::zeros(kind, 6);
            for t in 0..200 {
                let input = [(t as f64 * 0.1).sin() * 3.0, (t % 5) as f64];
                let (out, next) = cell.forward(&input, &state).unwrap();
                assert!(out.iter().all(|v| v.abs() < 1.0), "{kind:?} escaped (-1,1)");
                state = next;
            }
        }
    }

    #[test]
    fn taped_step_matches_value_level_step() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let cell = RecurrentCell::init(kind, 3, 5, &mut rng);
            let mut state = CellState::zeros(kind, 5);
            let mut tape = Tape::new();
            let param_ids: Vec<VarId> =
                cell.params.iter().map(|p| tape.leaf_tensor(p)).collect();
            let h0 = tape.leaf(&state.hidden);
            let c0 = state.cell.as_ref().map(|c| tape.leaf(c));
            let mut taped = TapedState {
                hidden: h0,
                cell: c0,
            };
            for t in 0..4 {
                let input = vec![t as f64, (t as f64).cos(), -0.3];
                let input_id = tape.leaf(&input);
                taped = cell
                    .step_on_tape(&mut tape, &param_ids, input_id, &taped)
                    .unwrap();
                let (_, next) = cell.forward(&input, &state).unwrap();
                state = next;
                for (a, b) in tape.value(taped.hidden).iter().zip(&state.hidden) {
                    assert!((a - b).abs() < 1e-14, "{kind:?} step {t}");
                }
            }
        }
    }
}
