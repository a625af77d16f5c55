//! Attention between functions, computed on their subspace coordinates.
//!
//! Each of `h` heads owns a `d x d` slice (`d = N / h`) of the coordinate
//! vectors and three matrices `W_Q, W_K, W_V`. Token `i` attends to token `j`
//! with weight `softmax_j((W_Q u_i)^T (W_K u_j) / sqrt(d))`, so the bilinear
//! form `A = W_Q^T W_K` is never materialized.

pub mod oracle;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{invalid, Result};
use crate::numcore::{NodeId, Tape, Tensor};
use crate::scalar::Scalar;

/// Query, key and value matrices of one head. `P` is a [`Tensor`] for stored
/// parameters or a [`NodeId`] once they are bound to a tape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupraHeadParams<P> {
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
}

impl<P> SupraHeadParams<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> SupraHeadParams<Q> {
        SupraHeadParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &P> {
        [&self.w_q, &self.w_k, &self.w_v].into_iter()
    }
}

impl<T: Scalar> SupraHeadParams<Tensor<T>> {
    /// Entries uniform in `+-1/sqrt(d)`.
    pub fn random(d: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut draw = || Tensor::from_fn2(d, d, |_, _| T::of(rng.random_range(-bound..bound)));
        let w_q = draw();
        let w_k = draw();
        let w_v = draw();
        Self { w_q, w_k, w_v }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            w_q: Tensor::eye(d),
            w_k: Tensor::eye(d),
            w_v: Tensor::eye(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }
}

/// Width of each head's coordinate slice; errors unless every head is
/// `d x d` with `h d = n`.
pub fn head_dim<T: Scalar>(n: usize, heads: &[SupraHeadParams<Tensor<T>>]) -> Result<usize> {
    if heads.is_empty() || n % heads.len() != 0 {
        return Err(invalid(
            "heads",
            format!("{} heads do not divide N = {n}", heads.len()),
        ));
    }
    let d = n / heads.len();
    for (i, head) in heads.iter().enumerate() {
        if head.iter().any(|w| w.shape() != [d, d]) {
            return Err(invalid(
                "heads",
                format!("head {i} matrices must be {d}x{d}"),
            ));
        }
    }
    Ok(d)
}

/// Pre-softmax weights `(U_h W_Q^T)(U_h W_K^T)^T / sqrt(d)` (`C x C`) for
/// every head, where `U_h` is the head's column slice of `u_hat`.
pub fn attention_weights<T: Scalar>(
    u_hat: &Tensor<T>,
    heads: &[SupraHeadParams<Tensor<T>>],
) -> Result<Vec<Tensor<T>>> {
    let (_, n) = u_hat.dims2()?;
    let d = head_dim(n, heads)?;
    let mut tape = Tape::new();
    let u = tape.constant(u_hat.clone());
    let bound: Vec<_> = heads.iter().map(|h| h.map(|w| tape.constant(w.clone()))).collect();
    let mut out = Vec::with_capacity(heads.len());
    for (i, head) in bound.iter().enumerate() {
        let uh = head_slice(&mut tape, u, i, d, heads.len())?;
        let s = scores(&mut tape, uh, head, d)?;
        out.push(tape.value(s).clone());
    }
    Ok(out)
}

/// Multi-head attention between the rows of `u_hat` (`C x N`); returns the
/// concatenated head outputs (`C x N`).
pub fn supra_attention<T: Scalar>(
    u_hat: &Tensor<T>,
    heads: &[SupraHeadParams<Tensor<T>>],
) -> Result<Tensor<T>> {
    let (_, n) = u_hat.dims2()?;
    head_dim(n, heads)?;
    let mut tape = Tape::new();
    let u = tape.constant(u_hat.clone());
    let bound: Vec<_> = heads.iter().map(|h| h.map(|w| tape.constant(w.clone()))).collect();
    let z = supra_attention_node(&mut tape, u, &bound)?;
    Ok(tape.value(z).clone())
}

/// [`supra_attention`] recorded on a tape.
pub fn supra_attention_node<T: Scalar>(
    tape: &mut Tape<T>,
    u_hat: NodeId,
    heads: &[SupraHeadParams<NodeId>],
) -> Result<NodeId> {
    let n = tape.value(u_hat).dims2()?.1;
    let h = heads.len();
    if h == 0 || n % h != 0 {
        return Err(invalid("heads", format!("{h} heads do not divide N = {n}")));
    }
    let d = n / h;
    let mut outs = Vec::with_capacity(h);
    for (i, head) in heads.iter().enumerate() {
        let uh = head_slice(tape, u_hat, i, d, h)?;
        let s = scores(tape, uh, head, d)?;
        let a = tape.softmax_rows(s)?;
        let v = tape.matmul_t(uh, false, head.w_v, true)?;
        outs.push(tape.matmul(a, v)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

fn head_slice<T: Scalar>(
    tape: &mut Tape<T>,
    u_hat: NodeId,
    i: usize,
    d: usize,
    heads: usize,
) -> Result<NodeId> {
    if heads == 1 {
        Ok(u_hat)
    } else {
        tape.slice_cols(u_hat, i * d, d)
    }
}

fn scores<T: Scalar>(
    tape: &mut Tape<T>,
    uh: NodeId,
    head: &SupraHeadParams<NodeId>,
    d: usize,
) -> Result<NodeId> {
    let q = tape.matmul_t(uh, false, head.w_q, true)?;
    let k = tape.matmul_t(uh, false, head.w_k, true)?;
    let s = tape.matmul_t(q, false, k, true)?;
    Ok(tape.scale(s, T::one() / T::of(d as f64).sqrt()))
}

/// Attention between sampled functions `U` (`C x M`): project onto the
/// basis, attend in coordinates, reconstruct on the samples.
pub fn function_space_attention_oracle<T: Scalar>(
    u: &Tensor<T>,
    basis: &Basis<T>,
    heads: &[SupraHeadParams<Tensor<T>>],
) -> Result<Tensor<T>> {
    let z = supra_attention(&basis.project(u)?, heads)?;
    basis.reconstruct(&z)
}
