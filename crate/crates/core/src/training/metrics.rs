use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Alignment(vec![y.len(), y_hat.len()]));
    }
    if y.is_empty() {
        return Err(Error::Domain("metrics need at least one sample".into()));
    }
    Ok(())
}

fn check_labels(y: &[f64]) -> Result<()> {
    match y.iter().find(|&&v| !(v > 0.0)) {
        Some(bad) => Err(Error::Domain(format!("labels must be positive, got {bad}"))),
        None => Ok(()),
    }
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let mut total = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        total += (a - b).abs();
    }
    Ok(total / y.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let mut total = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        total += (a - b) * (a - b);
    }
    Ok((total / y.len() as f64).sqrt())
}

/// Mean absolute percentage error as a fraction (`0.25` for 25%).
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    check_labels(y)?;
    let mut total = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        total += (a - b).abs() / a;
    }
    Ok(total / y.len() as f64)
}

/// Differentiable MAPE over recorded predictions, each a `[1×1]` var.
pub fn mape_loss(tape: &mut Tape<'_>, y: &[f64], predictions: &[Var]) -> Result<Var> {
    if y.len() != predictions.len() {
        return Err(Error::Alignment(vec![y.len(), predictions.len()]));
    }
    if y.is_empty() {
        return Err(Error::Domain("metrics need at least one sample".into()));
    }
    check_labels(y)?;
    let stacked = tape.concat_cols(predictions)?;
    let labels = tape.constant(Tensor::matrix(1, y.len(), y.to_vec())?);
    let diff = tape.sub(stacked, labels)?;
    let abs = tape.abs(diff);
    let weights: Vec<f64> = y.iter().map(|v| 1.0 / (v * y.len() as f64)).collect();
    let weights = tape.constant(Tensor::matrix(1, y.len(), weights)?);
    let scaled = tape.mul(abs, weights)?;
    Ok(tape.sum(scaled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(mape(&[100.0], &[100.0]).unwrap(), 0.0);
        assert_eq!(mape(&[100.0], &[75.0]).unwrap(), 0.25);
        assert!((mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(mae(&[100.0], &[130.0]).unwrap(), 30.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::Alignment(_))));
        assert!(matches!(rmse(&[], &[]), Err(Error::Domain(_))));
        assert!(matches!(mape(&[0.0], &[1.0]), Err(Error::Domain(_))));
        assert!(matches!(mape(&[-5.0], &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn loss_matches_value_and_gradient() {
        let y = [100.0, 200.0, 50.0];
        let y_hat = [110.0, 180.0, 50.0];
        let mut tape = Tape::new();
        let preds: Vec<Var> = y_hat.iter().map(|&v| tape.param(Tensor::matrix(1, 1, vec![v]).unwrap())).collect();
        let loss = mape_loss(&mut tape, &y, &preds).unwrap();
        assert!((tape.value(loss).data()[0] - mape(&y, &y_hat).unwrap()).abs() < 1e-15);
        tape.backward(loss).unwrap();
        let g: Vec<f64> = preds.iter().map(|&p| tape.grad(p).unwrap()[0]).collect();
        assert!((g[0] - 1.0 / 300.0).abs() < 1e-15);
        assert!((g[1] + 1.0 / 600.0).abs() < 1e-15);
        assert_eq!(g[2], 0.0);
    }
}
