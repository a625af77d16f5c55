use std::f64::consts::TAU;

use crate::basis::{grid_weights, Basis, BasisKind, Geometry};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

/// Tensor-product trigonometric basis on the `height x width` grid of points
/// `(i/height, j/width)`.
///
/// For frequencies `1 <= i <= modes_x`, `1 <= j <= modes_y` the functions are
/// `2 f(2 pi i x) g(2 pi j y)` with `f, g` in `{cos, sin}`, so each has unit
/// L2 norm on the unit square. Columns come in four blocks (cos-cos,
/// cos-sin, sin-cos, sin-sin), each ordered lexicographically by `(i, j)`,
/// giving `N = 4 modes_x modes_y`.
///
/// Requires `2 modes_x <= height - 1` and `2 modes_y <= width - 1`, which makes
/// the discrete Gram matrix exactly the identity.
pub fn fourier_basis_2d<T: Scalar>(
    modes_x: usize,
    modes_y: usize,
    height: usize,
    width: usize,
) -> Result<Basis<T>> {
    for (axis, modes, points) in [("x", modes_x, height), ("y", modes_y, width)] {
        if modes == 0 || 2 * modes + 1 > points {
            return Err(Error::AboveNyquist {
                axis,
                modes,
                points,
            });
        }
    }
    let m = height * width;
    let per_block = modes_x * modes_y;
    let n = 4 * per_block;

    // 1-D factors: cx[i-1][p] = cos(2 pi i x_p), x_p = (p+1)/height
    let table = |modes: usize, points: usize, f: fn(f64) -> f64| -> Vec<Vec<f64>> {
        (1..=modes)
            .map(|k| {
                (1..=points)
                    .map(|p| f(TAU * (k * p % points) as f64 / points as f64))
                    .collect()
            })
            .collect()
    };
    let cx = table(modes_x, height, f64::cos);
    let sx = table(modes_x, height, f64::sin);
    let cy = table(modes_y, width, f64::cos);
    let sy = table(modes_y, width, f64::sin);
    let blocks: [(&Vec<Vec<f64>>, &Vec<Vec<f64>>); 4] = [(&cx, &cy), (&cx, &sy), (&sx, &cy), (&sx, &sy)];

    let mut phi = vec![T::zero(); m * n];
    for p in 0..height {
        for q in 0..width {
            let row = &mut phi[(p * width + q) * n..(p * width + q + 1) * n];
            for (b, (fx, fy)) in blocks.iter().enumerate() {
                for i in 0..modes_x {
                    for j in 0..modes_y {
                        row[b * per_block + i * modes_y + j] = T::of(2.0 * fx[i][p] * fy[j][q]);
                    }
                }
            }
        }
    }
    Basis::from_parts(
        BasisKind::Fourier,
        Geometry::grid(height, width),
        Tensor::new(vec![m, n], phi)?,
        grid_weights(height, width),
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_rule() {
        let b = fourier_basis_2d::<f64>(6, 6, 64, 64).unwrap();
        assert_eq!(b.dim(), 144);
        assert!(b.gram_deviation() <= 1e-12);
    }

    #[test]
    fn single_mode_gram_is_identity() {
        let b = fourier_basis_2d::<f64>(1, 1, 16, 16).unwrap();
        assert_eq!(b.dim(), 4);
        assert!(b.gram_deviation() <= 1e-12);
    }

    #[test]
    fn sin_sin_member_has_unit_coefficient() {
        let (h, w) = (16, 16);
        let b = fourier_basis_2d::<f64>(2, 2, h, w).unwrap();
        let u = Tensor::from_fn2(1, h * w, |_, idx| {
            let x = (idx / w + 1) as f64 / h as f64;
            let y = (idx % w + 1) as f64 / w as f64;
            2.0 * (TAU * x).sin() * (TAU * y).sin()
        });
        let c = b.project(&u).unwrap();
        // sin-sin block starts at 3 * 4, (i, j) = (1, 1) is its first entry
        for k in 0..b.dim() {
            let want = if k == 12 { 1.0 } else { 0.0 };
            assert!((c.at(0, k) - want).abs() <= 1e-12, "k={k}: {}", c.at(0, k));
        }
    }

    #[test]
    fn nyquist_rejected() {
        assert!(matches!(
            fourier_basis_2d::<f64>(4, 1, 8, 8),
            Err(Error::AboveNyquist { axis: "x", .. })
        ));
        assert!(fourier_basis_2d::<f64>(3, 3, 7, 7).is_ok());
        assert!(fourier_basis_2d::<f64>(1, 0, 8, 8).is_err());
    }
}
