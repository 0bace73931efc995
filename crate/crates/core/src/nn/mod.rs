//! Minimal f64 neural-network building blocks with hand-written backward passes.
//!
//! All trainable values of a model live in one flat [`ParamStore`]; layers keep
//! [`ParamId`] handles into it. Gradients use the same flat layout ([`Grads`]),
//! which keeps optimizers, checkpoints and finite-difference checks trivial.

mod conv;
mod layer_norm;
mod linear;
mod params;

pub use conv::Conv2d;
pub use layer_norm::{LayerNorm, LayerNormCache};
pub use linear::Linear;
pub use params::{Grads, Init, ParamId, ParamSpec, ParamStore};

#[inline]
pub fn relu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the upstream gradient wherever the ReLU output was clamped.
#[inline]
pub fn relu_backward_inplace(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

/// Numerically stable `ln(sum(exp(x)))`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|&v| (v - lse).exp()).collect()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
