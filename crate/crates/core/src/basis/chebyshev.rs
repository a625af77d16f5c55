use crate::basis::{grid_weights, Basis, BasisKind, Geometry};
use crate::error::{invalid, Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

/// A column whose norm drops below this fraction of its original norm during
/// orthogonalization is treated as linearly dependent.
const RANK_TOL: f64 = 1e-10;

/// Chebyshev polynomials `T_p(t)` for `p = 0..=deg`.
fn chebyshev_values(deg: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(deg + 1);
    out.push(1.0);
    if deg >= 1 {
        out.push(t);
    }
    for p in 2..=deg {
        out.push(2.0 * t * out[p - 1] - out[p - 2]);
    }
    out
}

/// Tensor products `T_p(2x-1) T_q(2y-1)`, `p <= deg_x`, `q <= deg_y` (ordered
/// with `p` outer), on the same grid and weights as the Fourier basis, then
/// orthonormalized against the weighted inner product by modified
/// Gram-Schmidt with one reorthogonalization pass.
pub fn chebyshev_basis_2d<T: Scalar>(
    deg_x: usize,
    deg_y: usize,
    height: usize,
    width: usize,
) -> Result<Basis<T>> {
    let m = height * width;
    let n = (deg_x + 1) * (deg_y + 1);
    if n > m {
        return Err(invalid(
            "degree",
            format!("{n} polynomials exceed {m} grid points"),
        ));
    }
    let tx: Vec<Vec<f64>> = (1..=height)
        .map(|i| chebyshev_values(deg_x, 2.0 * i as f64 / height as f64 - 1.0))
        .collect();
    let ty: Vec<Vec<f64>> = (1..=width)
        .map(|j| chebyshev_values(deg_y, 2.0 * j as f64 / width as f64 - 1.0))
        .collect();
    let w = 1.0 / m as f64;

    // columns stored contiguously while orthogonalizing
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for p in 0..=deg_x {
        for q in 0..=deg_y {
            let mut v: Vec<f64> = (0..m).map(|idx| tx[idx / width][p] * ty[idx % width][q]).collect();
            let original = dot(&v, &v, w).sqrt();
            for _ in 0..2 {
                for c in &cols {
                    let r = dot(&v, c, w);
                    for (vi, ci) in v.iter_mut().zip(c) {
                        *vi -= r * ci;
                    }
                }
            }
            let norm = dot(&v, &v, w).sqrt();
            if !(norm > RANK_TOL * original) {
                return Err(Error::RankDeficient { degree: (p, q) });
            }
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    let phi = Tensor::from_fn2(m, n, |i, k| T::of(cols[k][i]));
    Basis::from_parts(
        BasisKind::Chebyshev,
        Geometry::grid(height, width),
        phi,
        grid_weights(height, width),
        None,
    )
}

fn dot(a: &[f64], b: &[f64], w: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * w
}
