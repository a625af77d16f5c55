//! Scalar-loop reference implementations used to cross-check the matrix
//! form of attention.

use crate::error::Result;
use crate::numcore::Tensor;
use crate::scalar::Scalar;
use crate::supra::{head_dim, SupraHeadParams};

/// `A = W_Q^T W_K / sqrt(d)` formed explicitly.
pub fn bilinear_matrix<T: Scalar>(head: &SupraHeadParams<Tensor<T>>) -> Tensor<T> {
    let d = head.dim();
    let scale = T::one() / T::of(d as f64).sqrt();
    Tensor::from_fn2(d, d, |k, l| {
        let mut s = T::zero();
        for r in 0..d {
            s += head.w_q.at(r, k) * head.w_k.at(r, l);
        }
        s * scale
    })
}

/// Per head, `w_ij = sum_{k,l} A_kl u_i^k u_j^l` by explicit double sum.
pub fn bilinear_double_sum<T: Scalar>(
    u_hat: &Tensor<T>,
    heads: &[SupraHeadParams<Tensor<T>>],
) -> Result<Vec<Tensor<T>>> {
    let (c, n) = u_hat.dims2()?;
    let d = head_dim(n, heads)?;
    Ok(heads
        .iter()
        .enumerate()
        .map(|(h, head)| {
            let a = bilinear_matrix(head);
            Tensor::from_fn2(c, c, |i, j| {
                let mut s = T::zero();
                for k in 0..d {
                    for l in 0..d {
                        s += a.at(k, l) * u_hat.at(i, h * d + k) * u_hat.at(j, h * d + l);
                    }
                }
                s
            })
        })
        .collect())
}

/// Attention as `z_i = sum_j exp(a(u_i, u_j)) / sum_k exp(a(u_i, u_k)) b(u_j)`
/// with scalar loops, `a` the bilinear form and `b = W_V`, per head.
pub fn attention_scalar_loop<T: Scalar>(
    u_hat: &Tensor<T>,
    heads: &[SupraHeadParams<Tensor<T>>],
) -> Result<Tensor<T>> {
    let (c, n) = u_hat.dims2()?;
    let d = head_dim(n, heads)?;
    let weights = bilinear_double_sum(u_hat, heads)?;
    let mut out = vec![T::zero(); c * n];
    for (h, head) in heads.iter().enumerate() {
        let w = &weights[h];
        for i in 0..c {
            let shift = (0..c).fold(T::neg_infinity(), |m, j| m.max(w.at(i, j)));
            let denom: T = (0..c).map(|k| (w.at(i, k) - shift).exp()).sum();
            for j in 0..c {
                let p = (w.at(i, j) - shift).exp() / denom;
                for r in 0..d {
                    let mut bu = T::zero();
                    for s in 0..d {
                        bu += head.w_v.at(r, s) * u_hat.at(j, h * d + s);
                    }
                    out[i * n + h * d + r] += p * bu;
                }
            }
        }
    }
    Tensor::new(vec![c, n], out)
}
