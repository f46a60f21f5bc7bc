use rand::Rng;

use super::config_err;
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// LSTM weights with the four gates fused column-wise in the order
/// input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T = Tensor> {
    /// `[d_in×4h]`
    pub w_x: T,
    /// `[h×4h]`
    pub w_h: T,
    /// `[4h]`
    pub bias: T,
}

impl<T> LstmParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LstmParams<U> {
        LstmParams {
            w_x: f(&self.w_x),
            w_h: f(&self.w_h),
            bias: f(&self.bias),
        }
    }
}

impl LstmParams {
    /// Xavier-uniform gate weights, zero biases except the forget gate at 1.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let w_x = gate_weights(d_in, hidden, 4, rng);
        let w_h = gate_weights(hidden, hidden, 4, rng);
        let mut bias = Tensor::zeros(vec![4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self { w_x, w_h, bias }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }
}

/// Per-gate Xavier bounds, laid out side by side.
fn gate_weights<R: Rng + ?Sized>(d_in: usize, hidden: usize, gates: usize, rng: &mut R) -> Tensor {
    let blocks: Vec<Tensor> = (0..gates).map(|_| Tensor::xavier(d_in, hidden, rng)).collect();
    let mut data = Vec::with_capacity(d_in * hidden * gates);
    for r in 0..d_in {
        for b in &blocks {
            data.extend_from_slice(b.row(r));
        }
    }
    Tensor::matrix(d_in, hidden * gates, data).expect("gate block shape")
}

/// Elman recurrence weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams<T = Tensor> {
    /// `[d_in×h]`
    pub w_x: T,
    /// `[h×h]`
    pub w_h: T,
    /// `[h]`
    pub bias: T,
}

impl<T> RnnParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> RnnParams<U> {
        RnnParams {
            w_x: f(&self.w_x),
            w_h: f(&self.w_h),
            bias: f(&self.bias),
        }
    }
}

impl RnnParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_x: Tensor::xavier(d_in, hidden, rng),
            w_h: Tensor::xavier(hidden, hidden, rng),
            bias: Tensor::zeros(vec![hidden]),
        }
    }
}

/// Hidden states produced by a recurrence.
#[derive(Clone, Debug)]
pub struct Recurrence {
    /// One `[1×h]` state per input step; masked steps repeat the previous
    /// state.
    pub states: Vec<Var>,
    /// State after the last unmasked step.
    pub last: Var,
    /// Number of dependent cell updates performed.
    pub steps: usize,
}

impl Recurrence {
    /// All states stacked into `[T×h]`.
    pub fn stacked(&self, tape: &mut Tape) -> Result<Var> {
        Ok(tape.concat_rows(&self.states)?)
    }
}

fn check_input(tape: &Tape, x: Var, w_x: Var, mask: &[bool]) -> Result<usize> {
    let (xt, wt) = (tape.value(x), tape.value(w_x));
    if xt.ndim() != 2 || wt.rows() != xt.cols() {
        return Err(config_err(format!(
            "recurrent input width {} does not match weights {:?}",
            xt.cols(),
            wt.shape()
        )));
    }
    super::check_mask(mask, xt.rows())?;
    Ok(xt.rows())
}

/// Runs an LSTM from zero hidden and cell state over the unmasked steps.
pub fn lstm_forward(tape: &mut Tape, x: Var, p: &LstmParams<Var>, mask: &[bool]) -> Result<Recurrence> {
    let t_len = check_input(tape, x, p.w_x, mask)?;
    let h_dim = tape.value(p.w_h).rows();
    if tape.value(p.w_h).cols() != 4 * h_dim || tape.value(p.w_x).cols() != 4 * h_dim {
        return Err(config_err("LSTM gate weights must be [·×4h]"));
    }
    let projected = tape.matmul(x, p.w_x)?;
    let projected = tape.add_bias(projected, p.bias)?;
    let mut h = tape.constant(Tensor::zeros(vec![1, h_dim]));
    let mut c = tape.constant(Tensor::zeros(vec![1, h_dim]));
    let mut states = Vec::with_capacity(t_len);
    let mut steps = 0;
    for (t, &live) in mask.iter().enumerate() {
        if live {
            let xt = tape.slice_rows(projected, t, 1)?;
            let rec = tape.matmul(h, p.w_h)?;
            let pre = tape.add(xt, rec)?;
            let sig_in = tape.slice_cols(pre, 0, 3 * h_dim)?;
            let gates = tape.sigmoid(sig_in);
            let cand_in = tape.slice_cols(pre, 3 * h_dim, h_dim)?;
            let cand = tape.tanh(cand_in);
            let i_gate = tape.slice_cols(gates, 0, h_dim)?;
            let f_gate = tape.slice_cols(gates, h_dim, h_dim)?;
            let o_gate = tape.slice_cols(gates, 2 * h_dim, h_dim)?;
            let keep = tape.mul(f_gate, c)?;
            let write = tape.mul(i_gate, cand)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c);
            h = tape.mul(o_gate, squashed)?;
            steps += 1;
        }
        states.push(h);
    }
    Ok(Recurrence {
        states,
        last: h,
        steps,
    })
}

/// `h_t = tanh(x_t·W_x + h_{t-1}·W_h + b)` from a zero state.
pub fn rnn_forward(tape: &mut Tape, x: Var, p: &RnnParams<Var>, mask: &[bool]) -> Result<Recurrence> {
    let t_len = check_input(tape, x, p.w_x, mask)?;
    let h_dim = tape.value(p.w_h).rows();
    let projected = tape.matmul(x, p.w_x)?;
    let projected = tape.add_bias(projected, p.bias)?;
    let mut h = tape.constant(Tensor::zeros(vec![1, h_dim]));
    let mut states = Vec::with_capacity(t_len);
    let mut steps = 0;
    for (t, &live) in mask.iter().enumerate() {
        if live {
            let xt = tape.slice_rows(projected, t, 1)?;
            let rec = tape.matmul(h, p.w_h)?;
            let pre = tape.add(xt, rec)?;
            h = tape.tanh(pre);
            steps += 1;
        }
        states.push(h);
    }
    Ok(Recurrence {
        states,
        last: h,
        steps,
    })
}
