use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// `c = a * b + beta * c` for row-major `a` (m×k) and `b` (k×n), with
/// explicit strides so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: callers pass slices whose extents cover the strided index range
    // (checked by the debug assertions on every call site's shapes).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(format!(
            "matmul expects matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        a.data(),
        (k as isize, 1),
        b.data(),
        (n as isize, 1),
        0.0,
        &mut out,
    );
    Tensor::new(vec![m, n], out)
}

pub fn softmax_lastdim(t: &Tensor) -> Result<Tensor> {
    let d = t.last_dim();
    if d == 0 {
        return Err(Error::shape("softmax over an empty axis"));
    }
    t.ensure_finite("softmax input")?;
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = 1.0 / total;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Normalized values and reciprocal standard deviations per row, before the
/// affine step. Shared with the tape's backward pass.
pub(super) fn normalize_rows(t: &Tensor, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let d = t.last_dim();
    let rows = t.numel() / d.max(1);
    let mut xhat = vec![0.0; t.numel()];
    let mut rstd = Vec::with_capacity(rows);
    for (src, dst) in t.data().chunks(d).zip(xhat.chunks_mut(d)) {
        let mean = src.iter().sum::<f64>() / d as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + eps).sqrt();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - mean) * r;
        }
        rstd.push(r);
    }
    (xhat, rstd)
}

/// Layer normalization over the last axis followed by a per-channel affine.
pub fn layer_norm(t: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::contract("layer_norm eps must be positive"));
    }
    let d = t.last_dim();
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::shape(format!(
            "layer_norm over {d} channels with gain {:?} and bias {:?}",
            gain.shape(),
            bias.shape()
        )));
    }
    let (mut xhat, _) = normalize_rows(t, eps);
    for row in xhat.chunks_mut(d) {
        for ((v, g), b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *v = *v * g + b;
        }
    }
    Tensor::new(t.shape().to_vec(), xhat)
}

/// Exact (erf form) Gaussian error linear unit.
pub fn gelu(t: &Tensor) -> Tensor {
    t.map(|x| 0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2)))
}

pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}
