use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numcore::Tensor;

/// Spectral parameters of a periodic Gaussian random field on the unit
/// square: mode `n` has amplitude `((l |k|)^2 + tau^2)^(-alpha/2)` with
/// `k = 2 pi n` and `l` the length scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfParams {
    pub alpha: f64,
    pub tau: f64,
    pub length_scale: f64,
}

impl Default for GrfParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            tau: 3.0,
            length_scale: 1.0,
        }
    }
}

/// Signed integer frequency of FFT bin `p` out of `n`.
fn frequency(p: usize, n: usize) -> f64 {
    if p <= n / 2 {
        p as f64
    } else {
        p as f64 - n as f64
    }
}

/// Sample an `height x width` field: complex white noise scaled by the
/// spectrum, inverse FFT, real part.
pub fn grf_sample(height: usize, width: usize, params: &GrfParams, seed: u64) -> Result<Tensor<f64>> {
    if height < 8 || width < 8 {
        return Err(invalid("grid", format!("need at least 8x8, got {height}x{width}")));
    }
    if !(params.alpha > 0.0 && params.tau > 0.0 && params.length_scale > 0.0) {
        return Err(invalid("grf", "alpha, tau and length_scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(height * width);
    for p in 0..height {
        for q in 0..width {
            let kx = std::f64::consts::TAU * frequency(p, height);
            let ky = std::f64::consts::TAU * frequency(q, width);
            let k2 = (kx * kx + ky * ky) * params.length_scale * params.length_scale;
            let amp = (k2 + params.tau * params.tau).powf(-params.alpha / 2.0);
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            buf.push(Complex::new(re * amp, im * amp));
        }
    }
    fft2(&mut buf, height, width, true);
    Tensor::new(vec![height, width], buf.iter().map(|c| c.re).collect())
}

/// In-place 2-D FFT (unnormalized) over a row-major buffer.
pub(crate) fn fft2(buf: &mut [Complex<f64>], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); height];
    for q in 0..width {
        for p in 0..height {
            col[p] = buf[p * width + q];
        }
        col_fft.process(&mut col);
        for p in 0..height {
            buf[p * width + q] = col[p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_from_seed() {
        let p = GrfParams::default();
        let a = grf_sample(16, 12, &p, 3).unwrap();
        assert_eq!(a, grf_sample(16, 12, &p, 3).unwrap());
        assert_ne!(a, grf_sample(16, 12, &p, 4).unwrap());
        assert!(grf_sample(4, 12, &p, 3).is_err());
    }

    #[test]
    fn spatial_means_center_on_zero() {
        let p = GrfParams::default();
        let means: Vec<f64> = (0..64)
            .map(|s| {
                let f = grf_sample(32, 32, &p, s).unwrap();
                f.sum() / f.len() as f64
            })
            .collect();
        let mu = means.iter().sum::<f64>() / 64.0;
        let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / 63.0;
        let se = (var / 64.0).sqrt();
        assert!(mu.abs() <= 3.0 * se, "mean {mu}, se {se}");
    }

    fn high_frequency_fraction(field: &Tensor<f64>, h: usize, w: usize) -> f64 {
        let mut buf: Vec<Complex<f64>> = field.data().iter().map(|&x| Complex::new(x, 0.0)).collect();
        fft2(&mut buf, h, w, false);
        let (mut hi, mut total) = (0.0, 0.0);
        for p in 0..h {
            for q in 0..w {
                let e = buf[p * w + q].norm_sqr();
                total += e;
                if frequency(p, h).abs().max(frequency(q, w).abs()) > (h / 8) as f64 {
                    hi += e;
                }
            }
        }
        hi / total
    }

    #[test]
    fn smoother_with_larger_alpha() {
        let fractions: Vec<f64> = [2.0, 3.0, 4.0]
            .iter()
            .map(|&alpha| {
                let p = GrfParams {
                    alpha,
                    ..GrfParams::default()
                };
                (0..8)
                    .map(|s| high_frequency_fraction(&grf_sample(32, 32, &p, s).unwrap(), 32, 32))
                    .sum::<f64>()
                    / 8.0
            })
            .collect();
        assert!(fractions[0] > fractions[1] && fractions[1] > fractions[2], "{fractions:?}");
    }
}
