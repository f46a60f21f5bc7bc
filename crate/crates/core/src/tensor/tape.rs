use std::borrow::Cow;

use rand::Rng;

use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::TensorError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: Var,
        scales: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    WeightedRowSum {
        x: Var,
        weights: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run record of a computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep in [`Tape::backward`] visits each node
/// once. A tape is meant for one forward/backward pass; build a fresh one
/// per example. Leaves may borrow tensors that outlive the tape, which
/// keeps large parameter tables from being copied per pass.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input: gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// A trainable input whose gradient is kept after [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A borrowed constant.
    pub fn constant_ref(&mut self, value: &'p Tensor) -> Var {
        self.push_leaf(Cow::Borrowed(value), false)
    }

    /// A borrowed trainable input.
    pub fn param_ref(&mut self, value: &'p Tensor) -> Var {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    fn push_leaf(&mut self, value: Cow<'p, Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward seed with respect to `v`, if any
    /// flowed there.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, op)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.derived(out, &[a, b], Op::MatMul(a, b)))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = kernels::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.derived(out, &[a, b], Op::MatMulNt(a, b)))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.derived(out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.derived(out, &[a, b], Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(out, &[a, b], Op::Mul(a, b)))
    }

    /// Adds a length-`c` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.numel() != c {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.derived(out, &[x, bias], Op::AddBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect());
        self.derived(out, &[x], Op::Scale(x, s))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.derived(out, &[x], Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        self.derived(out, &[x], Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        self.derived(out, &[x], Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::abs);
        self.derived(out, &[x], Op::Abs(x))
    }

    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let out = kernels::softmax_rows(self.value(x), mask)?;
        Ok(self.derived(out, &[x], Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let parts =
            kernels::layer_norm_parts(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let out = Tensor::from_parts(self.shape(x).to_vec(), parts.out);
        Ok(self.derived(
            out,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat: parts.xhat,
                rstd: parts.rstd,
            },
        ))
    }

    /// Inverted dropout; returns `x` itself when inactive.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        kernels::check_dropout_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let scales = kernels::dropout_scales(self.value(x).numel(), rate, rng);
        let t = self.value(x);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().zip(&scales).map(|(v, s)| v * s).collect(),
        );
        Ok(self.derived(out, &[x], Op::Dropout { x, scales }))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let out = kernels::embedding_lookup(self.value(table), ids)?;
        Ok(self.derived(
            out,
            &[table],
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_cols needs at least one input".into()))?;
        let rows = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.ndim() != 2 || t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(first), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_parts(vec![rows, total], data);
        Ok(self.derived(out, parts, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_rows needs at least one input".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.ndim() != 2 || t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![rows, cols], data);
        Ok(self.derived(out, parts, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.ndim() != 2 || len == 0 || start + len > t.rows() {
            return Err(TensorError::Invalid(format!(
                "slice_rows {start}..{} out of bounds for {:?}",
                start + len,
                t.shape()
            )));
        }
        let c = t.cols();
        let out = Tensor::from_parts(vec![len, c], t.data()[start * c..(start + len) * c].to_vec());
        Ok(self.derived(out, &[x], Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.ndim() != 2 || len == 0 || start + len > t.cols() {
            return Err(TensorError::Invalid(format!(
                "slice_cols {start}..{} out of bounds for {:?}",
                start + len,
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::from_parts(vec![t.rows(), len], data);
        Ok(self.derived(out, &[x], Op::SliceCols { x, start }))
    }

    /// `Σ_t weights[t] · x[t, :]` as a `[1×d]` row.
    pub fn weighted_row_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.ndim() != 2 || weights.len() != t.rows() {
            return Err(TensorError::Shape {
                op: "weighted_row_sum",
                left: t.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let c = t.cols();
        let mut out = vec![0.0; c];
        for (r, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(t.row(r)) {
                *o += w * v;
            }
        }
        let out = Tensor::from_parts(vec![1, c], out);
        Ok(self.derived(
            out,
            &[x],
            Op::WeightedRowSum {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.derived(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.derived(Tensor::scalar(s), &[x], Op::Mean(x))
    }

    /// Reverse sweep from a one-element output.
    ///
    /// Clears previous gradients, seeds `∂out/∂out = 1` and accumulates
    /// into every node that requires a gradient.
    pub fn backward(&mut self, out: Var) -> Result<(), TensorError> {
        let shape = self.shape(out).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        self.nodes[out.0].grad = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let Some(g) = node.grad.as_deref() else {
                continue;
            };
            backprop(head, node, g);
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// The gradient buffer of `v`, allocated on first use, or `None` when `v`
/// does not take gradients.
fn slot<'a>(nodes: &'a mut [Node<'_>], v: Var) -> Option<(&'a mut Vec<f64>, &'a Tensor)> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.numel();
    let grad = node.grad.get_or_insert_with(|| vec![0.0; n]);
    Some((grad, &node.value))
}

/// Runs `f(grad of target, value of other)`, allocating the gradient on
/// first use. No-op when `target` takes no gradient.
fn with_other(nodes: &mut [Node<'_>], target: Var, other: Var, f: impl FnOnce(&mut [f64], &[f64])) {
    if !nodes[target.0].requires_grad {
        return;
    }
    if target == other {
        let copy = nodes[other.0].value.data().to_vec();
        if let Some((g, _)) = slot(nodes, target) {
            f(g, &copy);
        }
        return;
    }
    let (t, o) = if target.0 < other.0 {
        let (l, r) = nodes.split_at_mut(other.0);
        (&mut l[target.0], &r[0])
    } else {
        let (l, r) = nodes.split_at_mut(target.0);
        (&mut r[0], &l[other.0])
    };
    let n = t.value.numel();
    f(t.grad.get_or_insert_with(|| vec![0.0; n]), o.value.data());
}

fn axpy(dst: &mut [f64], g: &[f64], alpha: f64) {
    for (d, v) in dst.iter_mut().zip(g) {
        *d += alpha * v;
    }
}

fn backprop(head: &mut [Node<'_>], node: &Node<'_>, g: &[f64]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, n) = (out.shape()[0], out.shape()[1]);
            let k = head[a.0].value.shape()[1];
            with_other(head, a, b, |ga, bv| gemm_nt(m, n, k, g, bv, ga));
            with_other(head, b, a, |gb, av| gemm_tn(k, m, n, av, g, gb));
        }
        &Op::MatMulNt(a, b) => {
            let (m, n) = (out.shape()[0], out.shape()[1]);
            let k = head[a.0].value.shape()[1];
            with_other(head, a, b, |ga, bv| gemm_nn(m, n, k, g, bv, ga));
            with_other(head, b, a, |gb, av| gemm_tn(n, m, k, g, av, gb));
        }
        &Op::Add(a, b) => {
            if let Some((ga, _)) = slot(head, a) {
                axpy(ga, g, 1.0);
            }
            if let Some((gb, _)) = slot(head, b) {
                axpy(gb, g, 1.0);
            }
        }
        &Op::Sub(a, b) => {
            if let Some((ga, _)) = slot(head, a) {
                axpy(ga, g, 1.0);
            }
            if let Some((gb, _)) = slot(head, b) {
                axpy(gb, g, -1.0);
            }
        }
        &Op::Mul(a, b) => {
            let product = |dst: &mut [f64], other: &[f64]| {
                for ((d, gi), o) in dst.iter_mut().zip(g).zip(other) {
                    *d += gi * o;
                }
            };
            with_other(head, a, b, product);
            with_other(head, b, a, product);
        }
        &Op::AddBias(x, bias) => {
            if let Some((gx, _)) = slot(head, x) {
                axpy(gx, g, 1.0);
            }
            if let Some((gb, _)) = slot(head, bias) {
                let c = gb.len();
                for row in g.chunks(c) {
                    axpy(gb, row, 1.0);
                }
            }
        }
        &Op::Scale(x, s) => {
            if let Some((gx, _)) = slot(head, x) {
                axpy(gx, g, s);
            }
        }
        &Op::Relu(x) => {
            if let Some((gx, _)) = slot(head, x) {
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *d += gi;
                    }
                }
            }
        }
        &Op::Sigmoid(x) => {
            if let Some((gx, _)) = slot(head, x) {
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * y * (1.0 - y);
                }
            }
        }
        &Op::Tanh(x) => {
            if let Some((gx, _)) = slot(head, x) {
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * (1.0 - y * y);
                }
            }
        }
        &Op::Abs(x) => {
            if let Some((gx, xv)) = slot(head, x) {
                let xv = xv.data().to_vec();
                for ((d, gi), v) in gx.iter_mut().zip(g).zip(&xv) {
                    if *v > 0.0 {
                        *d += gi;
                    } else if *v < 0.0 {
                        *d -= gi;
                    }
                }
            }
        }
        &Op::Softmax(x) => {
            if let Some((gx, _)) = slot(head, x) {
                let c = out.cols();
                for ((dst, y), gr) in gx.chunks_mut(c).zip(out.data().chunks(c)).zip(g.chunks(c)) {
                    let dot = kernels::dot(y, gr);
                    for ((d, yi), gi) in dst.iter_mut().zip(y).zip(gr) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = out.cols();
            let gamma_v = head[gamma.0].value.data().to_vec();
            if let Some((gg, _)) = slot(head, *gamma) {
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for ((acc, gi), hi) in gg.iter_mut().zip(gr).zip(hr) {
                        *acc += gi * hi;
                    }
                }
            }
            if let Some((gb, _)) = slot(head, *beta) {
                for gr in g.chunks(d) {
                    axpy(gb, gr, 1.0);
                }
            }
            if let Some((gx, _)) = slot(head, *x) {
                let mut dxhat = vec![0.0; d];
                for (r, ((dst, gr), hr)) in gx
                    .chunks_mut(d)
                    .zip(g.chunks(d))
                    .zip(xhat.chunks(d))
                    .enumerate()
                {
                    for j in 0..d {
                        dxhat[j] = gr[j] * gamma_v[j];
                    }
                    let sum: f64 = dxhat.iter().sum();
                    let sum_h: f64 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum();
                    let scale = rstd[r] / d as f64;
                    for j in 0..d {
                        dst[j] += scale * (d as f64 * dxhat[j] - sum - hr[j] * sum_h);
                    }
                }
            }
        }
        Op::Dropout { x, scales } => {
            if let Some((gx, _)) = slot(head, *x) {
                for ((d, gi), s) in gx.iter_mut().zip(g).zip(scales) {
                    *d += gi * s;
                }
            }
        }
        Op::Gather { table, ids } => {
            if let Some((gt, tv)) = slot(head, *table) {
                let d = tv.cols();
                for (r, &id) in ids.iter().enumerate() {
                    axpy(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = out.cols();
            let mut offset = 0;
            for &p in parts {
                let w = head[p.0].value.cols();
                if let Some((gp, _)) = slot(head, p) {
                    for (dst, src) in gp.chunks_mut(w).zip(g.chunks(total)) {
                        axpy(dst, &src[offset..offset + w], 1.0);
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = head[p.0].value.numel();
                if let Some((gp, _)) = slot(head, p) {
                    axpy(gp, &g[offset..offset + n], 1.0);
                }
                offset += n;
            }
        }
        &Op::SliceRows { x, start } => {
            let c = out.cols();
            if let Some((gx, _)) = slot(head, x) {
                axpy(&mut gx[start * c..start * c + g.len()], g, 1.0);
            }
        }
        &Op::SliceCols { x, start } => {
            let len = out.cols();
            if let Some((gx, xv)) = slot(head, x) {
                let c = xv.cols();
                for (dst, src) in gx.chunks_mut(c).zip(g.chunks(len)) {
                    axpy(&mut dst[start..start + len], src, 1.0);
                }
            }
        }
        Op::WeightedRowSum { x, weights } => {
            if let Some((gx, xv)) = slot(head, *x) {
                let c = xv.cols();
                for (dst, &w) in gx.chunks_mut(c).zip(weights) {
                    axpy(dst, g, w);
                }
            }
        }
        &Op::Sum(x) => {
            if let Some((gx, _)) = slot(head, x) {
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }
        }
        &Op::Mean(x) => {
            if let Some((gx, _)) = slot(head, x) {
                let n = gx.len() as f64;
                for d in gx.iter_mut() {
                    *d += g[0] / n;
                }
            }
        }
    }
}
