//! Dense tensors, reverse-mode differentiation and a finite-difference
//! gradient checker.
//!
//! The free functions here are untaped conveniences over the same kernels the
//! [`Tape`] records, so a value computed with or without a tape is identical.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{softmax_rows, Gradients, NodeId, NormAffine, Tape};
pub use tensor::Tensor;

use crate::error::Result;
use crate::scalar::Scalar;

/// Epsilon shared by layer and instance normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Matrix product `a * b`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.matmul(b)
}

/// Tanh-approximation GELU: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(tape::gelu_scalar)
}

fn norm_untaped<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
    affine: NormAffine,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone());
    let gi = tape.constant(gain.clone());
    let bi = tape.constant(bias.clone());
    let y = tape.row_norm(xi, gi, bi, eps, affine)?;
    Ok(tape.value(y).clone())
}

/// Standardize each row of `x` (C x N) over its N coordinates, then apply a
/// per-coordinate gain and bias.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    norm_untaped(x, gain, bias, eps, NormAffine::PerColumn)
}

/// Standardize each channel of `u` (C x M) over its M samples, then apply a
/// per-channel gain and bias.
pub fn instance_norm<T: Scalar>(
    u: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    norm_untaped(u, gain, bias, eps, NormAffine::PerRow)
}
