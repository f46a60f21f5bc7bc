//! Sequence layers built on the gradient tape.
//!
//! Parameter records are generic over their storage: `T = Tensor` holds
//! values, `T = Var` holds handles bound to a [`Tape`](crate::Tape) for one
//! forward pass. Every record has a `map` that converts between the two.

mod attention;
mod ffn;
mod position;
mod recurrent;

pub use attention::{
    attention_block, multi_head_attention, multi_head_block, self_attention,
    self_attention_weights, AttentionBlockParams, AttentionParams, MultiHeadParams, NormParams,
};
pub use ffn::{ffn_forward, DenseLayer, FfnParams};
pub use position::positional_encoding;
pub use recurrent::{lstm_forward, rnn_forward, LstmParams, Recurrence, RnnParams};

use rand::Rng;

use crate::error::{Error, Result, TensorError};
use crate::tensor::{Tape, Var};

/// Epsilon used by every layer normalization in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dropout setting for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub training: bool,
}

impl Dropout {
    pub const INACTIVE: Dropout = Dropout {
        rate: 0.0,
        training: false,
    };

    pub fn new(rate: f64, training: bool) -> Self {
        Self { rate, training }
    }

    pub(crate) fn apply<R: Rng + ?Sized>(self, tape: &mut Tape, x: Var, rng: &mut R) -> Result<Var> {
        Ok(tape.dropout(x, self.rate, self.training, rng)?)
    }
}

/// Validates a padding mask against a sequence length.
pub(crate) fn check_mask(mask: &[bool], t: usize) -> Result<()> {
    if mask.len() != t {
        return Err(TensorError::Shape {
            op: "sequence mask",
            left: vec![t],
            right: vec![mask.len()],
        }
        .into());
    }
    if !mask.iter().any(|&m| m) {
        return Err(TensorError::DegenerateMask { row: 0 }.into());
    }
    Ok(())
}

/// Masked mean over time steps: `[T×d] -> [1×d]`.
pub fn pool_sequence(tape: &mut Tape, h: Var, mask: &[bool]) -> Result<Var> {
    check_mask(mask, tape.value(h).rows())?;
    let count = mask.iter().filter(|&&m| m).count() as f64;
    let weights: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 1.0 / count } else { 0.0 })
        .collect();
    Ok(tape.weighted_row_sum(h, &weights)?)
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[cfg(test)]
pub(crate) fn bind(tape: &mut Tape, t: &crate::tensor::Tensor) -> Var {
    tape.param(t.clone())
}
