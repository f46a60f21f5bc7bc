//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of the backward rules it checks.

use super::{Tape, Tensor, Var};
use crate::error::TensorError;

/// One compared gradient entry.
#[derive(Clone, Debug)]
pub struct Entry {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Entry {
    pub fn abs_err(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    /// `|a - n| <= rtol * max(|a|, |n|) + atol`
    pub fn within(&self, rtol: f64, atol: f64) -> bool {
        self.abs_err() <= rtol * self.analytic.abs().max(self.numeric.abs()) + atol
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub entries: Vec<Entry>,
}

impl Report {
    pub fn passes(&self, rtol: f64, atol: f64) -> bool {
        self.entries.iter().all(|e| e.within(rtol, atol))
    }

    /// The entry furthest outside `rtol`/`atol`, measured as a multiple of
    /// its allowance.
    pub fn worst(&self, rtol: f64, atol: f64) -> Option<&Entry> {
        let ratio =
            |e: &Entry| e.abs_err() / (rtol * e.analytic.abs().max(e.numeric.abs()) + atol);
        self.entries
            .iter()
            .max_by(|a, b| ratio(a).total_cmp(&ratio(b)))
    }
}

fn scalar_value(tape: &Tape, out: Var) -> Result<f64, TensorError> {
    let t = tape.value(out);
    t.item().ok_or_else(|| TensorError::NotScalar(t.shape().to_vec()))
}

/// Compares tape gradients of `f` against central differences with the
/// given `step` for every element of every input.
///
/// `f` must be deterministic: it is re-run twice per perturbed element.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Report, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_value(&tape, out)
    };

    let mut work = inputs.to_vec();
    let mut report = Report::default();
    for input in 0..inputs.len() {
        for index in 0..inputs[input].numel() {
            let orig = inputs[input].data()[index];
            work[input].data_mut()[index] = orig + step;
            let plus = eval(&work)?;
            work[input].data_mut()[index] = orig - step;
            let minus = eval(&work)?;
            work[input].data_mut()[index] = orig;
            report.entries.push(Entry {
                input,
                index,
                analytic: analytic[input][index],
                numeric: (plus - minus) / (2.0 * step),
            });
        }
    }
    Ok(report)
}
