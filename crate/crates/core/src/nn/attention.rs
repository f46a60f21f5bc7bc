use rand::Rng;

use super::{check_mask, config_err, positional_encoding, Dropout, LAYER_NORM_EPS};
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Query, key and value projections of one self-attention.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T = Tensor> {
    /// `[d_in×d_k]`
    pub w_q: T,
    /// `[d_in×d_k]`
    pub w_k: T,
    /// `[d_in×d_v]`
    pub w_v: T,
}

impl<T> AttentionParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
        }
    }
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_k: usize, d_v: usize, rng: &mut R) -> Self {
        Self {
            w_q: Tensor::xavier(d_in, d_k, rng),
            w_k: Tensor::xavier(d_in, d_k, rng),
            w_v: Tensor::xavier(d_in, d_v, rng),
        }
    }
}

/// Layer-norm scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<T = Tensor> {
    pub gamma: T,
    pub beta: T,
}

impl<T> NormParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NormParams<U> {
        NormParams {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }
}

impl NormParams {
    pub fn init(d: usize) -> Self {
        Self {
            gamma: Tensor::full(vec![d], 1.0),
            beta: Tensor::zeros(vec![d]),
        }
    }
}

/// Self-attention wrapped with positional encoding, dropout, a residual
/// connection and layer normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockParams<T = Tensor> {
    pub attention: AttentionParams<T>,
    pub norm: NormParams<T>,
}

impl<T> AttentionBlockParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionBlockParams<U> {
        AttentionBlockParams {
            attention: self.attention.map(f),
            norm: self.norm.map(f),
        }
    }
}

impl AttentionBlockParams {
    /// A width-preserving block over `d`-wide inputs with `d_k`-wide
    /// queries and keys.
    pub fn init<R: Rng + ?Sized>(d: usize, d_k: usize, rng: &mut R) -> Self {
        Self {
            attention: AttentionParams::init(d, d_k, d, rng),
            norm: NormParams::init(d),
        }
    }
}

/// Several narrower attention heads plus an output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadParams<T = Tensor> {
    pub heads: Vec<AttentionParams<T>>,
    /// `[d×d]`
    pub w_o: T,
}

impl<T> MultiHeadParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> MultiHeadParams<U> {
        MultiHeadParams {
            heads: self.heads.iter().map(|h| h.map(f)).collect(),
            w_o: f(&self.w_o),
        }
    }
}

impl MultiHeadParams {
    pub fn init<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(config_err(format!(
                "model width {d} is not divisible into {heads} heads"
            )));
        }
        let dh = d / heads;
        Ok(Self {
            heads: (0..heads)
                .map(|_| AttentionParams::init(d, dh, dh, rng))
                .collect(),
            w_o: Tensor::xavier(d, d, rng),
        })
    }
}

fn pairwise_mask(mask: &[bool]) -> Option<Vec<bool>> {
    if mask.iter().all(|&m| m) {
        return None;
    }
    let t = mask.len();
    let mut out = Vec::with_capacity(t * t);
    for _ in 0..t {
        out.extend_from_slice(mask);
    }
    Some(out)
}

/// Attention weights `softmax(QKᵀ/√d_k)` with masked keys set to zero,
/// followed by the attended values.
fn attend(tape: &mut Tape, x: Var, p: &AttentionParams<Var>, mask: &[bool]) -> Result<(Var, Var)> {
    check_mask(mask, tape.value(x).rows())?;
    let d_k = tape.value(p.w_q).cols();
    if tape.value(p.w_k).cols() != d_k {
        return Err(config_err(format!(
            "query width {d_k} differs from key width {}",
            tape.value(p.w_k).cols()
        )));
    }
    let q = tape.matmul(x, p.w_q)?;
    // Scaling the T×d_k queries is cheaper than scaling the T×T scores.
    let q = tape.scale(q, 1.0 / (d_k as f64).sqrt());
    let k = tape.matmul(x, p.w_k)?;
    let v = tape.matmul(x, p.w_v)?;
    let scores = tape.matmul_nt(q, k)?;
    let key_mask = pairwise_mask(mask);
    let weights = tape.softmax_rows(scores, key_mask.as_deref())?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// `softmax(QKᵀ/√d_k)·V` with `Q = xW^Q`, `K = xW^K`, `V = xW^V`.
///
/// `mask[t] == false` marks padding: such steps receive zero weight as keys.
/// Their own output rows are computed but carry no meaning.
pub fn self_attention(tape: &mut Tape, x: Var, p: &AttentionParams<Var>, mask: &[bool]) -> Result<Var> {
    Ok(attend(tape, x, p, mask)?.0)
}

/// The `[T×T]` attention weight matrix of [`self_attention`].
pub fn self_attention_weights(
    tape: &mut Tape,
    x: Var,
    p: &AttentionParams<Var>,
    mask: &[bool],
) -> Result<Var> {
    Ok(attend(tape, x, p, mask)?.1)
}

fn add_position(tape: &mut Tape, x: Var) -> Result<Var> {
    let (t, d) = (tape.value(x).rows(), tape.value(x).cols());
    let pe = tape.constant(positional_encoding(t, d)?);
    Ok(tape.add(x, pe)?)
}

fn residual_norm<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    sublayer: Var,
    norm: &NormParams<Var>,
    dropout: Dropout,
    rng: &mut R,
) -> Result<Var> {
    let dropped = dropout.apply(tape, sublayer, rng)?;
    let sum = tape.add(x, dropped)?;
    Ok(tape.layer_norm(sum, norm.gamma, norm.beta, LAYER_NORM_EPS)?)
}

/// `layer_norm(x + dropout(self_attention(x + PE, p, mask)))`.
pub fn attention_block<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    p: &AttentionBlockParams<Var>,
    mask: &[bool],
    dropout: Dropout,
    rng: &mut R,
) -> Result<Var> {
    let d = tape.value(x).cols();
    let d_v = tape.value(p.attention.w_v).cols();
    if d_v != d {
        return Err(config_err(format!(
            "residual attention needs value width {d_v} to equal input width {d}"
        )));
    }
    let positioned = add_position(tape, x)?;
    let attended = self_attention(tape, positioned, &p.attention, mask)?;
    residual_norm(tape, x, attended, &p.norm, dropout, rng)
}

/// Per-head attention over `d/heads`-wide projections, concatenated and
/// projected by `w_o`.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    p: &MultiHeadParams<Var>,
    mask: &[bool],
) -> Result<Var> {
    let d = tape.value(x).cols();
    let heads = p.heads.len();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(config_err(format!(
            "model width {d} is not divisible into {heads} heads"
        )));
    }
    let outs = p
        .heads
        .iter()
        .map(|h| self_attention(tape, x, h, mask))
        .collect::<Result<Vec<_>>>()?;
    let joined = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    Ok(tape.matmul(joined, p.w_o)?)
}

/// The multi-head counterpart of [`attention_block`].
pub fn multi_head_block<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    p: &MultiHeadParams<Var>,
    norm: &NormParams<Var>,
    mask: &[bool],
    dropout: Dropout,
    rng: &mut R,
) -> Result<Var> {
    let positioned = add_position(tape, x)?;
    let attended = multi_head_attention(tape, positioned, p, mask)?;
    residual_norm(tape, x, attended, norm, dropout, rng)
}
