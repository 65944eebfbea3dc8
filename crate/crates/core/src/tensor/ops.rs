use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_COEFF: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Matrix product of `op(a)` and `op(b)` written into `out`, where `op`
/// optionally transposes. `a` is stored `a_rows x a_cols` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<T: Element>(
    a: &[T],
    (a_rows, a_cols): (usize, usize),
    trans_a: bool,
    b: &[T],
    (b_rows, b_cols): (usize, usize),
    trans_b: bool,
    out: &mut [T],
    accumulate: bool,
) {
    let (m, k) = if trans_a { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (kb, n) = if trans_b { (b_cols, b_rows) } else { (b_rows, b_cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output size");
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = T::ZERO);
        }
        return;
    }
    let a_strides = if trans_a {
        (1, a_cols as isize)
    } else {
        (a_cols as isize, 1)
    };
    let b_strides = if trans_b {
        (1, b_cols as isize)
    } else {
        (b_cols as isize, 1)
    };
    let beta = if accumulate { T::ONE } else { T::ZERO };
    // SAFETY: the asserts above pin every view inside its slice.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a,
            a_strides,
            b,
            b_strides,
            beta,
            out,
            (n as isize, 1),
        );
    }
}

/// Standard matrix product `[p x q] * [q x r] -> [p x r]`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_t(a, b, false)
}

/// `a * b` or, with `trans_b`, `a * b^T`.
pub(crate) fn matmul_t<T: Element>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let (p, q) = a.expect_matrix("matmul")?;
    let (br, bc) = b.expect_matrix("matmul")?;
    let (inner, r) = if trans_b { (bc, br) } else { (br, bc) };
    if q != inner {
        return Err(Error::shape(
            "matmul",
            format!("[{p}x{q}] x [{inner}x{r}]"),
        ));
    }
    let mut out = vec![T::ZERO; p * r];
    gemm_into(a.data(), (p, q), false, b.data(), (br, bc), trans_b, &mut out, false);
    Tensor::new(&[p, r], out)
}

/// Row-wise softmax. `mask`, when given, is `p x q` with `true` marking
/// entries that take part; the rest receive exactly zero weight.
pub fn softmax_rows<T: Element>(x: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    let (p, q) = x.expect_matrix("softmax_rows")?;
    if let Some(m) = mask {
        if m.len() != p * q {
            return Err(Error::shape(
                "softmax_rows",
                format!("mask of {} entries for a {p}x{q} input", m.len()),
            ));
        }
    }
    let mut out = vec![T::ZERO; p * q];
    for r in 0..p {
        let row = x.row(r);
        let keep = |c: usize| mask.is_none_or(|m| m[r * q + c]);
        let mut max = T::NEG_INFINITY;
        let mut any = false;
        for (c, &v) in row.iter().enumerate() {
            if keep(c) {
                any = true;
                max = max.max(v);
            }
        }
        if !any {
            return Err(Error::DegenerateMask { row: r });
        }
        let dst = &mut out[r * q..(r + 1) * q];
        let mut sum = T::ZERO;
        for (c, (&v, o)) in row.iter().zip(dst.iter_mut()).enumerate() {
            if keep(c) {
                *o = (v - max).exp();
                sum += *o;
            }
        }
        for o in dst.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::new(&[p, q], out)
}

pub(crate) struct LayerNormParts<T> {
    pub out: Tensor<T>,
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_parts<T: Element>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<LayerNormParts<T>> {
    if !(eps > 0.0) {
        return Err(Error::contract("layer_norm eps must be positive"));
    }
    let (p, d) = x.expect_matrix("layer_norm")?;
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::shape(
            "layer_norm",
            format!("gain/bias of {}/{} for width {d}", gain.numel(), bias.numel()),
        ));
    }
    let eps = T::from_f64(eps);
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut normalized = Vec::with_capacity(p * d);
    let mut inv_std = Vec::with_capacity(p);
    let mut out = Vec::with_capacity(p * d);
    for r in 0..p {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let s = T::ONE / (var + eps).sqrt();
        inv_std.push(s);
        for (c, &v) in row.iter().enumerate() {
            let h = (v - mean) * s;
            normalized.push(h);
            out.push(h * gain.data()[c] + bias.data()[c]);
        }
    }
    Ok(LayerNormParts {
        out: Tensor::new(&[p, d], out)?,
        normalized,
        inv_std,
    })
}

/// Per-row normalization to zero mean and unit variance followed by an
/// elementwise affine map.
pub fn layer_norm<T: Element>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    Ok(layer_norm_parts(x, gain, bias, eps)?.out)
}

/// GELU, tanh approximation.
#[inline]
pub fn gelu<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let u = T::from_f64(SQRT_2_OVER_PI) * (x + T::from_f64(GELU_COEFF) * x * x * x);
    half * x * (T::ONE + u.tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_COEFF);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::ONE + th) + half * x * (T::ONE - th * th) * c * (T::ONE + T::from_f64(3.0) * a * x * x)
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}
