use super::Real;
use crate::error::{Error, Result};

/// Epsilon added to the variance inside the square root.
pub const LAYERNORM_EPS: f64 = 1e-5;

const LANES: usize = 8;

/// Inner product with a fixed eight-lane accumulation order.
///
/// The order is part of the contract: acting-time and replay-time passes
/// call the same routine and must agree bit-for-bit.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha · x`.
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn mean<T: Real>(x: &[T]) -> T {
    let n = T::from_usize(x.len()).unwrap_or_else(T::one);
    x.iter().copied().sum::<T>() / n
}

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Derivative of ReLU at the pre-activation `x` (0 at the kink).
pub fn relu_grad<T: Real>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
        .collect()
}

pub fn tanh<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|v| v.tanh()).collect()
}

/// `1 - tanh(x)^2` evaluated at the pre-activation `x`.
pub fn tanh_grad<T: Real>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|v| {
            let t = v.tanh();
            T::one() - t * t
        })
        .collect()
}

/// Normalize in place to zero mean and (eps-regularized) unit population
/// variance. Returns `1 / sqrt(var + eps)`.
pub(crate) fn layernorm_in_place<T: Real>(x: &mut [T]) -> T {
    let mu = mean(x);
    let mut var = T::zero();
    for v in x.iter() {
        let d = *v - mu;
        var += d * d;
    }
    var /= T::from_usize(x.len()).unwrap();
    let inv_std = T::one() / (var + T::lit(LAYERNORM_EPS)).sqrt();
    for v in x.iter_mut() {
        *v = (*v - mu) * inv_std;
    }
    inv_std
}

/// Parameter-free layer normalization. Returns the normalized vector and
/// the inverse standard deviation needed by [`layernorm_backward`].
pub fn layernorm<T: Real>(x: &[T]) -> Result<(Vec<T>, T)> {
    if x.len() < 2 {
        return Err(Error::shape("layernorm", "length >= 2", x.len()));
    }
    let mut out = x.to_vec();
    let inv_std = layernorm_in_place(&mut out);
    Ok((out, inv_std))
}

/// Gradient w.r.t. the layernorm input given the normalized output and
/// the upstream gradient.
pub fn layernorm_backward<T: Real>(normalized: &[T], inv_std: T, grad: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); grad.len()];
    layernorm_backward_into(normalized, inv_std, grad, &mut out);
    out
}

pub(crate) fn layernorm_backward_into<T: Real>(normalized: &[T], inv_std: T, grad: &[T], out: &mut [T]) {
    let n = T::from_usize(grad.len()).unwrap();
    let g_mean = grad.iter().copied().sum::<T>() / n;
    let gy_mean = dot(grad, normalized) / n;
    for ((o, &g), &y) in out.iter_mut().zip(grad).zip(normalized) {
        *o = inv_std * (g - g_mean - y * gy_mean);
    }
}
