//! Wall-clock comparison of a SUPRA attention layer against dense attention
//! with one token per sample point.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{fourier_basis_2d, Basis};
use crate::error::{invalid, Result};
use crate::numcore::{softmax_rows, Tensor};
use crate::supra::{supra_attention, SupraHeadParams};

pub const SUPRA_IMPL: &str = "supra";
pub const TOKEN_IMPL: &str = "function_token";
/// Query rows processed at a time by the token reference.
const TOKEN_BLOCK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub points: Vec<usize>,
    pub channels: Vec<usize>,
    pub basis_dims: Vec<usize>,
    pub heads: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            points: vec![1024, 4096, 16384],
            channels: vec![32, 64],
            basis_dims: vec![64, 128],
            heads: 4,
            repeats: 5,
            warmup: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "impl")]
    pub implementation: String,
    pub m: usize,
    pub c: usize,
    /// Subspace dimension; 0 for the token reference, which has none.
    pub n: usize,
    pub wall_seconds: f64,
    pub bytes_peak_estimate: usize,
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("impl,M,C,N,wall_seconds,bytes_peak_estimate\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6e},{}",
            r.implementation, r.m, r.c, r.n, r.wall_seconds, r.bytes_peak_estimate
        );
    }
    s
}

/// Project, attend in the subspace, reconstruct: `C x M -> C x M`.
pub fn supra_layer(u: &Tensor<f64>, basis: &Basis<f64>, heads: &[SupraHeadParams<Tensor<f64>>]) -> Result<Tensor<f64>> {
    basis.reconstruct(&supra_attention(&basis.project(u)?, heads)?)
}

/// Dense softmax attention over the `M` point tokens of `u` (`C x M`), with
/// `C x C` projections: `V softmax(Q^T K / sqrt(C))^T`. Query rows are
/// processed in blocks so the `M x M` score matrix is never stored.
pub fn token_attention(u: &Tensor<f64>, w_q: &Tensor<f64>, w_k: &Tensor<f64>, w_v: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, m) = u.dims2()?;
    let q = w_q.matmul(u)?;
    let k = w_k.matmul(u)?;
    let v = w_v.matmul(u)?;
    let scale = 1.0 / (c as f64).sqrt();
    let qt = q.transpose()?;
    let mut out = vec![0.0; c * m];
    for start in (0..m).step_by(TOKEN_BLOCK) {
        let rows = TOKEN_BLOCK.min(m - start);
        let qb = Tensor::new(vec![rows, c], qt.data()[start * c..(start + rows) * c].to_vec())?;
        let a = softmax_rows(&qb.matmul(&k)?.scale(scale))?;
        let z = v.matmul_t(false, &a, true)?;
        for ch in 0..c {
            out[ch * m + start..ch * m + start + rows].copy_from_slice(z.row(ch));
        }
    }
    Tensor::new(vec![c, m], out)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time(warmup: usize, repeats: usize, mut f: impl FnMut() -> Result<Tensor<f64>>) -> Result<f64> {
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(f()?);
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

fn square_side(m: usize) -> Result<usize> {
    let s = (m as f64).sqrt().round() as usize;
    if s * s != m {
        return Err(invalid("points", format!("{m} is not a square grid size")));
    }
    Ok(s)
}

/// Fourier modes `(m, n)` with `4 m n = dim`, as square as possible.
fn fourier_modes(dim: usize) -> Result<(usize, usize)> {
    if dim % 4 != 0 {
        return Err(invalid("basis_dims", format!("{dim} is not a multiple of 4")));
    }
    let q = dim / 4;
    let mx = (1..=q).filter(|a| q % a == 0 && a * a <= q).max().unwrap_or(1);
    Ok((mx, q / mx))
}

/// Time both implementations over the configured sweep. Rows come in sweep
/// order; the token reference is timed once per `(M, C)`.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 {
        return Err(invalid("repeats", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &m in &cfg.points {
        let side = square_side(m)?;
        for &c in &cfg.channels {
            let u = Tensor::from_fn2(c, m, |i, j| ((i * 31 + j * 17) % 97) as f64 / 97.0 - 0.5);
            for &n in &cfg.basis_dims {
                let (mx, my) = fourier_modes(n)?;
                let basis = fourier_basis_2d::<f64>(mx, my, side, side)?;
                if n % cfg.heads != 0 {
                    return Err(invalid("heads", format!("{} does not divide N = {n}", cfg.heads)));
                }
                let d = n / cfg.heads;
                let heads: Vec<_> = (0..cfg.heads).map(|_| SupraHeadParams::random(d, &mut rng)).collect();
                let secs = time(cfg.warmup, cfg.repeats, || supra_layer(&u, &basis, &heads))?;
                rows.push(BenchRow {
                    implementation: SUPRA_IMPL.into(),
                    m,
                    c,
                    n,
                    wall_seconds: secs,
                    bytes_peak_estimate: 8 * (m * n + 2 * c * m + 4 * c * n + 3 * cfg.heads * d * d + c * c),
                });
            }
            let w: Vec<Tensor<f64>> = (0..3)
                .map(|_| SupraHeadParams::<Tensor<f64>>::random(c, &mut rng).w_q)
                .collect();
            let secs = time(cfg.warmup, cfg.repeats, || token_attention(&u, &w[0], &w[1], &w[2]))?;
            rows.push(BenchRow {
                implementation: TOKEN_IMPL.into(),
                m,
                c,
                n: 0,
                wall_seconds: secs,
                bytes_peak_estimate: 8 * (5 * c * m + 2 * TOKEN_BLOCK * m + 3 * c * c),
            });
        }
    }
    Ok(rows)
}

/// Ratio of wall times between consecutive `M` values for one implementation
/// at fixed `C` and `N`, in increasing `M`.
pub fn growth_ratios(rows: &[BenchRow], implementation: &str, c: usize, n: usize) -> Vec<(usize, usize, f64)> {
    let mut pts: Vec<&BenchRow> = rows
        .iter()
        .filter(|r| r.implementation == implementation && r.c == c && r.n == n)
        .collect();
    pts.sort_by_key(|r| r.m);
    pts.windows(2)
        .map(|w| (w[0].m, w[1].m, w[1].wall_seconds / w[0].wall_seconds))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_token_attention(u: &Tensor<f64>, wq: &Tensor<f64>, wk: &Tensor<f64>, wv: &Tensor<f64>) -> Tensor<f64> {
        let (c, m) = u.dims2().unwrap();
        let q = wq.matmul(u).unwrap();
        let k = wk.matmul(u).unwrap();
        let v = wv.matmul(u).unwrap();
        let mut out = Tensor::zeros(&[c, m]);
        for i in 0..m {
            let s: Vec<f64> = (0..m)
                .map(|j| (0..c).map(|r| q.at(r, i) * k.at(r, j)).sum::<f64>() / (c as f64).sqrt())
                .collect();
            let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for r in 0..c {
                out.data_mut()[r * m + i] = (0..m).map(|j| v.at(r, j) * e[j] / z).sum();
            }
        }
        out
    }

    #[test]
    fn blocked_reference_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, m) = (3, TOKEN_BLOCK + 37);
        let u = Tensor::from_fn2(c, m, |i, j| ((i + 2 * j) as f64 * 0.37).sin());
        let w: Vec<_> = (0..3).map(|_| SupraHeadParams::<Tensor<f64>>::random(c, &mut rng).w_q).collect();
        let got = token_attention(&u, &w[0], &w[1], &w[2]).unwrap();
        let want = dense_token_attention(&u, &w[0], &w[1], &w[2]);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn mode_split_and_csv() {
        assert_eq!(fourier_modes(64).unwrap(), (4, 4));
        assert_eq!(fourier_modes(128).unwrap(), (4, 8));
        assert!(fourier_modes(30).is_err());
        let cfg = BenchConfig {
            points: vec![64, 256],
            channels: vec![4],
            basis_dims: vec![16],
            heads: 2,
            repeats: 1,
            warmup: 0,
            seed: 0,
        };
        let rows = run_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = to_csv(&rows);
        assert!(csv.starts_with("impl,M,C,N,wall_seconds,bytes_peak_estimate\n"));
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(growth_ratios(&rows, TOKEN_IMPL, 4, 0).len(), 1);
    }
}
