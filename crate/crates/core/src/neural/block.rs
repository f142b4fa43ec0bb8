use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::activation::{sigmoid, tanh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Cell,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Cell, Gate::Output];

    /// Row block inside the stacked parameter matrices.
    pub fn index(self) -> usize {
        match self {
            Gate::Forget => 0,
            Gate::Input => 1,
            Gate::Cell => 2,
            Gate::Output => 3,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Cell => "g",
            Gate::Output => "o",
        }
    }
}

/// One LSTM cell. The four gate matrices are stacked row-wise in the order
/// forget, input, cell, output; columns are `[h_{t-1}, x_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmBlock {
    pub(crate) w: Array2<f64>,
    pub(crate) b: Array1<f64>,
    hidden: usize,
    input: usize,
}

impl LstmBlock {
    pub fn zeros(hidden: usize, input: usize) -> Result<Self> {
        Self::from_parts(
            Array2::zeros((4 * hidden, hidden + input)),
            Array1::zeros(4 * hidden),
            input,
        )
    }

    pub fn from_parts(w: Array2<f64>, b: Array1<f64>, input: usize) -> Result<Self> {
        let (rows, cols) = w.dim();
        if rows == 0 || rows % 4 != 0 {
            return Err(Error::invalid("w", format!("{rows} rows is not 4·hidden")));
        }
        let hidden = rows / 4;
        if input == 0 || cols != hidden + input {
            return Err(Error::DimensionMismatch {
                context: "LSTM weight columns",
                expected: hidden + input,
                actual: cols,
            });
        }
        if b.len() != rows {
            return Err(Error::DimensionMismatch {
                context: "LSTM bias",
                expected: rows,
                actual: b.len(),
            });
        }
        Ok(Self {
            w: w.as_standard_layout().into_owned(),
            b,
            hidden,
            input,
        })
    }

    /// Weights uniform in ±1/√hidden; biases zero except, optionally, +1 on
    /// the forget gate.
    pub fn init(hidden: usize, input: usize, forget_bias_one: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut blk = Self::zeros(hidden, input)?;
        let a = 1.0 / (hidden as f64).sqrt();
        blk.w.iter_mut().for_each(|v| *v = rng.random_range(-a..=a));
        if forget_bias_one {
            blk.b.slice_mut(s![..hidden]).fill(1.0);
        }
        Ok(blk)
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn biases(&self) -> ArrayView1<'_, f64> {
        self.b.view()
    }

    pub fn gate_weights(&self, g: Gate) -> ArrayView2<'_, f64> {
        let h = self.hidden;
        self.w.slice(s![g.index() * h..(g.index() + 1) * h, ..])
    }

    pub fn gate_bias(&self, g: Gate) -> ArrayView1<'_, f64> {
        let h = self.hidden;
        self.b.slice(s![g.index() * h..(g.index() + 1) * h])
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

/// One recurrence step, computed gate by gate.
pub fn lstm_step(block: &LstmBlock, x_t: &[f64], state: &LstmState) -> Result<LstmState> {
    let (hd, id) = (block.hidden, block.input);
    if x_t.len() != id {
        return Err(Error::DimensionMismatch {
            context: "lstm_step input",
            expected: id,
            actual: x_t.len(),
        });
    }
    if state.h.len() != hd || state.c.len() != hd {
        return Err(Error::DimensionMismatch {
            context: "lstm_step state",
            expected: hd,
            actual: state.h.len().max(state.c.len()),
        });
    }
    let mut concat = Vec::with_capacity(hd + id);
    concat.extend(state.h.iter());
    concat.extend_from_slice(x_t);
    let concat = Array1::from(concat);

    let pre = |g: Gate| block.gate_weights(g).dot(&concat) + block.gate_bias(g);
    let f = pre(Gate::Forget).mapv(sigmoid);
    let i = pre(Gate::Input).mapv(sigmoid);
    let g = pre(Gate::Cell).mapv(tanh);
    let o = pre(Gate::Output).mapv(sigmoid);

    let c = &f * &state.c + &i * &g;
    let h = &o * &c.mapv(tanh);
    Ok(LstmState { h, c })
}

/// Fold `lstm_step` over a window from the zero state. `window` holds
/// `len · input_dim` values, step-major.
pub fn lstm_forward(block: &LstmBlock, window: &[f64]) -> Result<Array1<f64>> {
    let id = block.input;
    if window.is_empty() {
        return Err(Error::EmptyInput("LSTM window"));
    }
    if window.len() % id != 0 {
        return Err(Error::DimensionMismatch {
            context: "lstm_forward window",
            expected: id * (window.len() / id + 1),
            actual: window.len(),
        });
    }
    let mut state = LstmState::zeros(block.hidden);
    for x in window.chunks_exact(id) {
        state = lstm_step(block, x, &state)?;
    }
    Ok(state.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn ones_block() -> LstmBlock {
        LstmBlock::from_parts(Array2::ones((4, 2)), Array1::zeros(4), 1).unwrap()
    }

    #[test]
    fn zero_block_stays_at_zero() {
        let blk = LstmBlock::zeros(5, 1).unwrap();
        let s = lstm_step(&blk, &[3.7], &LstmState::zeros(5)).unwrap();
        assert!(s.h.iter().all(|&v| v == 0.0) && s.c.iter().all(|&v| v == 0.0));
        assert!(lstm_forward(&blk, &[1.0, -2.0, 9.0]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_weights_hand_value() {
        let s = lstm_step(&ones_block(), &[1.0], &LstmState::zeros(1)).unwrap();
        let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
        let c = sig1 * 1.0f64.tanh();
        assert!((s.c[0] - c).abs() < 1e-15);
        assert!((s.c[0] - 0.5568).abs() < 1e-4);
        assert!((s.h[0] - 0.36961).abs() < 1e-4);
        assert!((s.h[0] - sig1 * c.tanh()).abs() < 1e-15);
    }

    #[test]
    fn single_step_window_is_one_step() {
        let mut rng = stream_rng(1, 0);
        let blk = LstmBlock::init(3, 1, true, &mut rng).unwrap();
        let h = lstm_forward(&blk, &[0.4]).unwrap();
        let s = lstm_step(&blk, &[0.4], &LstmState::zeros(3)).unwrap();
        assert_eq!(h, s.h);
    }

    #[test]
    fn order_of_window_matters() {
        let mut rng = stream_rng(2, 0);
        let blk = LstmBlock::init(4, 1, false, &mut rng).unwrap();
        let a = lstm_forward(&blk, &[0.1, 0.9, -0.5, 0.3]).unwrap();
        let b = lstm_forward(&blk, &[0.3, -0.5, 0.9, 0.1]).unwrap();
        assert!((&a - &b).iter().any(|d| d.abs() > 1e-6));
    }

    #[test]
    fn dimension_errors() {
        let blk = LstmBlock::zeros(2, 1).unwrap();
        assert!(lstm_step(&blk, &[1.0, 2.0], &LstmState::zeros(2)).is_err());
        assert!(lstm_step(&blk, &[1.0], &LstmState::zeros(3)).is_err());
        assert!(lstm_forward(&blk, &[]).is_err());
        assert!(LstmBlock::from_parts(Array2::zeros((8, 4)), Array1::zeros(8), 1).is_err());
    }

    #[test]
    fn init_respects_bounds_and_forget_bias() {
        let mut rng = stream_rng(3, 0);
        let blk = LstmBlock::init(16, 1, true, &mut rng).unwrap();
        assert!(blk.w.iter().all(|v| v.abs() <= 0.25));
        assert!(blk.gate_bias(Gate::Forget).iter().all(|&v| v == 1.0));
        assert!(blk.gate_bias(Gate::Input).iter().all(|&v| v == 0.0));
        let plain = LstmBlock::init(16, 1, false, &mut stream_rng(3, 0)).unwrap();
        assert!(plain.b.iter().all(|&v| v == 0.0));
        assert_eq!(plain.w, blk.w);
    }

    proptest! {
        #[test]
        fn hidden_state_is_bounded(
            seed in 0u64..10_000,
            hidden in 1usize..8,
            window in prop::collection::vec(-3.0f64..3.0, 1..40),
            scale in 0.1f64..2.0,
        ) {
            let mut rng = stream_rng(seed, 0);
            let mut blk = LstmBlock::zeros(hidden, 1).unwrap();
            blk.w.iter_mut().for_each(|v| *v = scale * rng.random_range(-1.0..=1.0));
            blk.b.iter_mut().for_each(|v| *v = scale * rng.random_range(-1.0..=1.0));
            let h = lstm_forward(&blk, &window).unwrap();
            prop_assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }
}
