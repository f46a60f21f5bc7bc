use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self_attention, AttentionParams};
use crate::tensor::{Tape, Tensor, Var};

/// Projections for `n` separate factor attentions, one attention over the
/// concatenated factors and the output projection `W^O`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiFactorParams<T = Tensor> {
    pub factors: Vec<AttentionParams<T>>,
    pub combined: AttentionParams<T>,
    /// `[(Σ value widths)×d_out]`
    pub w_o: T,
}

impl<T> MultiFactorParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> MultiFactorParams<U> {
        MultiFactorParams {
            factors: self.factors.iter().map(|p| p.map(f)).collect(),
            combined: self.combined.map(f),
            w_o: f(&self.w_o),
        }
    }
}

impl MultiFactorParams {
    /// Every stream uses `d_k`-wide queries/keys and `d_v`-wide values.
    pub fn init<R: Rng + ?Sized>(
        factor_widths: &[usize],
        d_k: usize,
        d_v: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let factors = factor_widths
            .iter()
            .map(|&w| AttentionParams::init(w, d_k, d_v, rng))
            .collect();
        let combined = AttentionParams::init(factor_widths.iter().sum(), d_k, d_v, rng);
        let w_o = Tensor::xavier((factor_widths.len() + 1) * d_v, d_out, rng);
        Self {
            factors,
            combined,
            w_o,
        }
    }
}

/// `Concat(self_1, …, self_n, self_all)·W^O`, where `self_i` attends over
/// factor `i` alone and `self_all` over the width-wise concatenation of all
/// factors.
pub fn multi_factor_attention(
    tape: &mut Tape,
    factors: &[Var],
    p: &MultiFactorParams<Var>,
    mask: &[bool],
) -> Result<Var> {
    if factors.is_empty() {
        return Err(Error::Config("multi-factor attention needs at least one factor".into()));
    }
    if factors.len() != p.factors.len() {
        return Err(Error::Config(format!(
            "{} factors given for {} factor attentions",
            factors.len(),
            p.factors.len()
        )));
    }
    let lengths: Vec<usize> = factors.iter().map(|&f| tape.value(f).rows()).collect();
    if lengths.iter().any(|&t| t != lengths[0]) {
        return Err(Error::Alignment(lengths));
    }
    let mut streams = Vec::with_capacity(factors.len() + 1);
    for (&factor, params) in factors.iter().zip(&p.factors) {
        streams.push(self_attention(tape, factor, params, mask)?);
    }
    let combined_input = if factors.len() == 1 {
        factors[0]
    } else {
        tape.concat_cols(factors)?
    };
    streams.push(self_attention(tape, combined_input, &p.combined, mask)?);
    let joined = tape.concat_cols(&streams)?;
    Ok(tape.matmul(joined, p.w_o)?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn run(factors: &[Tensor], p: &MultiFactorParams, mask: &[bool]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = factors.iter().map(|f| tape.constant(f.clone())).collect();
        let pv = p.map(&mut |t| tape.constant(t.clone()));
        let out = multi_factor_attention(&mut tape, &vars, &pv, mask)?;
        Ok(tape.value(out).clone())
    }

    #[test]
    fn four_factors_concatenate_five_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = MultiFactorParams::init(&[8; 4], 8, 8, 12, &mut rng);
        assert_eq!(p.w_o.shape(), &[40, 12]);
        assert_eq!(p.combined.w_q.shape(), &[32, 8]);
        let factors: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(vec![3, 8], 1.0, &mut rng)).collect();
        let out = run(&factors, &p, &[true; 3]).unwrap();
        assert_eq!(out.shape(), &[3, 12]);
    }

    #[test]
    fn single_factor_attends_itself_twice() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut p = MultiFactorParams::init(&[3], 2, 2, 4, &mut rng);
        p.combined = p.factors[0].clone();
        let x = Tensor::uniform(vec![2, 3], 1.0, &mut rng);
        let out = run(std::slice::from_ref(&x), &p, &[true; 2]).unwrap();
        // Both halves of W^O see the same stream.
        let mut folded = p.w_o.clone();
        let (top, bottom) = folded.data_mut().split_at_mut(8);
        for (a, b) in top.iter_mut().zip(bottom.iter()) {
            *a += b;
        }
        let w = Tensor::matrix(2, 4, top.to_vec()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let pv = p.factors[0].map(&mut |t| tape.constant(t.clone()));
        let s = self_attention(&mut tape, xv, &pv, &[true; 2]).unwrap();
        let want = crate::tensor::matmul(tape.value(s), &w).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = MultiFactorParams::init(&[2, 2], 2, 2, 2, &mut rng);
        let err = run(&[Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![3, 2])], &p, &[true; 2]).unwrap_err();
        assert!(matches!(err, Error::Alignment(ref l) if l == &vec![2, 3]));
    }
}
