use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::Tensor;
use crate::error::TensorError;

// Below this many multiply-adds the plain loops beat packing into a blocked
// kernel.
const BLOCKED_GEMM_MIN_WORK: usize = 16 * 16 * 16;
// Per-thread work floor for row-parallel products.
const PARALLEL_MIN_WORK: usize = 64 * 64 * 64;

static INTRA_OP_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Sets how many threads a single large matrix product may split across.
/// `1` (the default) keeps every kernel on the calling thread.
pub fn set_intra_op_threads(n: usize) {
    INTRA_OP_THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn intra_op_threads() -> usize {
    INTRA_OP_THREADS.load(Ordering::Relaxed)
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Invalid(format!(
            "{op} needs matrices, got shape {:?}",
            t.shape()
        ))),
    }
}

/// `a [m×k] · b [k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, k) = matrix_dims("matmul", a)?;
    let (k2, n) = matrix_dims("matmul", b)?;
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(m, k, n, a.data(), b.data(), &mut out);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a [m×k] · bᵀ` for `b [n×k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, k) = matrix_dims("matmul_nt", a)?;
    let (n, k2) = matrix_dims("matmul_nt", b)?;
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul_nt",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm_nt(m, k, n, a.data(), b.data(), &mut out);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `out [m×n] += a [m×k] · b [k×n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    gemm_nn_threads(intra_op_threads(), m, k, n, a, b, out)
}

fn gemm_nn_threads(
    threads: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) {
    if threads > 1 && m >= 2 && m * k * n >= threads * PARALLEL_MIN_WORK {
        let rows_per = m.div_ceil(threads);
        std::thread::scope(|s| {
            for (chunk, a_chunk) in out.chunks_mut(rows_per * n).zip(a.chunks(rows_per * k)) {
                s.spawn(move || {
                    let rows = chunk.len() / n;
                    gemm_nn_serial(rows, k, n, a_chunk, b, chunk)
                });
            }
        });
        return;
    }
    gemm_nn_serial(m, k, n, a, b, out)
}

fn gemm_nn_serial(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    if m * k * n >= BLOCKED_GEMM_MIN_WORK {
        blocked(m, k, n, a, (k as isize, 1), b, (n as isize, 1), out);
        return;
    }
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out [m×n] += a [m×k] · bᵀ` where `b` is `[n×k]`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    let threads = intra_op_threads();
    if threads > 1 && m >= 2 && m * k * n >= threads * PARALLEL_MIN_WORK {
        let rows_per = m.div_ceil(threads);
        std::thread::scope(|s| {
            for (chunk, a_chunk) in out.chunks_mut(rows_per * n).zip(a.chunks(rows_per * k)) {
                s.spawn(move || {
                    let rows = chunk.len() / n;
                    gemm_nt_serial(rows, k, n, a_chunk, b, chunk)
                });
            }
        });
        return;
    }
    gemm_nt_serial(m, k, n, a, b, out)
}

fn gemm_nt_serial(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    if m * k * n >= BLOCKED_GEMM_MIN_WORK {
        blocked(m, k, n, a, (k as isize, 1), b, (1, k as isize), out);
        return;
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `out [m×n] += aᵀ · b` where `a` is `[k×m]` and `b` is `[k×n]`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    if m * k * n >= BLOCKED_GEMM_MIN_WORK {
        blocked(m, k, n, a, (1, m as isize), b, (n as isize, 1), out);
        return;
    }
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn blocked(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    out: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the given shapes
    // and strides, and `out` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
///
/// `mask`, when given, has one flag per element; `false` entries are
/// excluded from the normalization and come out as exactly `0`.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, TensorError> {
    if let Some(mask) = mask {
        if mask.len() != x.numel() {
            return Err(TensorError::Shape {
                op: "softmax_rows mask",
                left: x.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
    }
    let cols = x.cols();
    let mut out = vec![0.0; x.numel()];
    for (r, (src, dst)) in x
        .data()
        .chunks(cols)
        .zip(out.chunks_mut(cols))
        .enumerate()
    {
        let row_mask = mask.map(|m| &m[r * cols..(r + 1) * cols]);
        if !softmax_row(src, row_mask, dst) {
            return Err(TensorError::DegenerateMask { row: r });
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Returns `false` when every entry is masked.
pub(crate) fn softmax_row(src: &[f64], mask: Option<&[bool]>, dst: &mut [f64]) -> bool {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let max = src
        .iter()
        .enumerate()
        .filter(|&(j, _)| keep(j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0;
    for (j, (d, &s)) in dst.iter_mut().zip(src).enumerate() {
        *d = if keep(j) { (s - max).exp() } else { 0.0 };
        sum += *d;
    }
    let inv = 1.0 / sum;
    for d in dst.iter_mut() {
        *d *= inv;
    }
    true
}

/// Normalized values and reciprocal standard deviations, one per row.
pub(crate) struct LayerNormParts {
    pub out: Vec<f64>,
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_parts(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<LayerNormParts, TensorError> {
    let d = x.cols();
    if gamma.numel() != d || beta.numel() != d {
        return Err(TensorError::Shape {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gamma.shape().to_vec(),
        });
    }
    if eps <= 0.0 {
        return Err(TensorError::Invalid(format!("layer_norm eps must be positive, got {eps}")));
    }
    let rows = x.rows();
    let mut out = vec![0.0; x.numel()];
    let mut xhat = vec![0.0; x.numel()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let src = &x.data()[r * d..(r + 1) * d];
        let mean = src.iter().sum::<f64>() / d as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        rstd.push(inv);
        for j in 0..d {
            let h = (src[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok(LayerNormParts { out, xhat, rstd })
}

/// Normalizes over the last axis, then scales by `gamma` and shifts by
/// `beta`. Uses the biased variance.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor, TensorError> {
    let parts = layer_norm_parts(x, gamma, beta, eps)?;
    Ok(Tensor::from_parts(x.shape().to_vec(), parts.out))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<(), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::Invalid(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Per-element multipliers for inverted dropout: `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub(crate) fn dropout_scales<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout. Identity when `training` is false or `rate` is zero.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor, TensorError> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let scales = dropout_scales(x.numel(), rate, rng);
    Ok(Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().zip(&scales).map(|(v, s)| v * s).collect(),
    ))
}

/// Gathers rows of a `[V×d]` table.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor, TensorError> {
    let (vocab, d) = matrix_dims("embedding_lookup", table)?;
    if ids.is_empty() {
        return Err(TensorError::Invalid("embedding_lookup needs at least one id".into()));
    }
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= vocab {
            return Err(TensorError::Vocabulary { id, size: vocab });
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), d], out))
}
