use rand::Rng;

use super::config_err;
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// `y = x·W + b`, optionally followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = Tensor> {
    pub weight: T,
    pub bias: T,
    pub relu: bool,
}

impl<T> DenseLayer<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DenseLayer<U> {
        DenseLayer {
            weight: f(&self.weight),
            bias: f(&self.bias),
            relu: self.relu,
        }
    }
}

impl DenseLayer {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, relu: bool, rng: &mut R) -> Self {
        Self {
            weight: Tensor::xavier(d_in, d_out, rng),
            bias: Tensor::zeros(vec![d_out]),
            relu,
        }
    }
}

/// A stack of dense layers applied independently at every time step.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams<T = Tensor> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T> FfnParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> FfnParams<U> {
        FfnParams {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
        }
    }
}

impl FfnParams {
    /// Layers chaining `widths[0] -> widths[1] -> ...`; every hidden layer
    /// uses ReLU and the last one does when `relu_last` is set.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], relu_last: bool, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(config_err("an FFN needs at least one layer"));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::init(w[0], w[1], i + 1 < n || relu_last, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }
}

/// Applies the stack row by row: `[T×d_in] -> [T×d_out]`.
pub fn ffn_forward(tape: &mut Tape, x: Var, p: &FfnParams<Var>) -> Result<Var> {
    if p.layers.is_empty() {
        return Err(config_err("an FFN needs at least one layer"));
    }
    let mut h = x;
    for (i, layer) in p.layers.iter().enumerate() {
        let width = tape.value(h).cols();
        let w = tape.value(layer.weight);
        if w.ndim() != 2 || w.rows() != width {
            return Err(config_err(format!(
                "FFN layer {i} expects input width {} but receives {width}",
                w.shape()[0]
            )));
        }
        h = tape.matmul(h, layer.weight)?;
        h = tape.add_bias(h, layer.bias)?;
        if layer.relu {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
