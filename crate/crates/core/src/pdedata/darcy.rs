use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numcore::Tensor;
use crate::pdedata::cg::pcg;

pub const CG_TOLERANCE: f64 = 1e-10;

/// How the coefficient on a cell face is formed from its two nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceMean {
    #[default]
    Harmonic,
    Arithmetic,
}

impl FaceMean {
    fn of(self, a: f64, b: f64) -> f64 {
        match self {
            FaceMean::Harmonic => 2.0 * a * b / (a + b),
            FaceMean::Arithmetic => 0.5 * (a + b),
        }
    }
}

/// Generator constants for the two-valued Darcy coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcyParams {
    pub a_hi: f64,
    pub a_lo: f64,
    pub forcing: f64,
    #[serde(default)]
    pub face_mean: FaceMean,
}

impl Default for DarcyParams {
    fn default() -> Self {
        Self {
            a_hi: 12.0,
            a_lo: 3.0,
            forcing: 1.0,
            face_mean: FaceMean::Harmonic,
        }
    }
}

/// Threshold a field at zero into `a_hi` / `a_lo`.
pub fn darcy_coefficient(field: &Tensor<f64>, a_hi: f64, a_lo: f64) -> Result<Tensor<f64>> {
    if !field.all_finite() {
        return Err(Error::NonFinite {
            what: "coefficient field".into(),
        });
    }
    if !(a_hi > 0.0 && a_lo > 0.0) {
        return Err(invalid("coefficient", "a_hi and a_lo must be positive"));
    }
    Ok(field.map(|v| if v >= 0.0 { a_hi } else { a_lo }))
}

/// Solve `-div(a grad u) = f` on the nodes `(i/(H-1), j/(W-1))` of the unit
/// square with `u = 0` on the boundary, using the conservative five-point
/// scheme and Jacobi-preconditioned CG.
pub fn darcy_solve_fd(a: &Tensor<f64>, f: &Tensor<f64>, face: FaceMean) -> Result<Tensor<f64>> {
    let (h, w) = a.dims2()?;
    if f.shape() != a.shape() {
        return Err(Error::ShapeMismatch {
            op: "darcy_solve_fd",
            left: a.shape().to_vec(),
            right: f.shape().to_vec(),
        });
    }
    if h < 3 || w < 3 {
        return Err(invalid("grid", format!("need at least 3x3 nodes, got {h}x{w}")));
    }
    if !f.all_finite() || a.data().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("coefficient", "a must be positive and f finite"));
    }
    let (ih, iw) = (h - 2, w - 2);
    let n = ih * iw;
    let cx = ((h - 1) * (h - 1)) as f64;
    let cy = ((w - 1) * (w - 1)) as f64;
    let ad = a.data();
    let node = |i: usize, j: usize| ad[i * w + j];
    // Face couplings of interior unknown (p, q) at node (p + 1, q + 1).
    let mut north = vec![0.0; n];
    let mut south = vec![0.0; n];
    let mut west = vec![0.0; n];
    let mut east = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for p in 0..ih {
        for q in 0..iw {
            let (i, j) = (p + 1, q + 1);
            let k = p * iw + q;
            north[k] = cx * face.of(node(i, j), node(i - 1, j));
            south[k] = cx * face.of(node(i, j), node(i + 1, j));
            west[k] = cy * face.of(node(i, j), node(i, j - 1));
            east[k] = cy * face.of(node(i, j), node(i, j + 1));
            diag[k] = north[k] + south[k] + west[k] + east[k];
        }
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        for p in 0..ih {
            for q in 0..iw {
                let k = p * iw + q;
                let mut v = diag[k] * x[k];
                if p > 0 {
                    v -= north[k] * x[k - iw];
                }
                if p + 1 < ih {
                    v -= south[k] * x[k + iw];
                }
                if q > 0 {
                    v -= west[k] * x[k - 1];
                }
                if q + 1 < iw {
                    v -= east[k] * x[k + 1];
                }
                y[k] = v;
            }
        }
    };
    let fd = f.data();
    let b: Vec<f64> = (0..n).map(|k| fd[(k / iw + 1) * w + k % iw + 1]).collect();
    let (x, _) = pcg(apply, &diag, &b, CG_TOLERANCE, 10 * h * w)?;
    let mut u = vec![0.0; h * w];
    for p in 0..ih {
        for q in 0..iw {
            u[(p + 1) * w + q + 1] = x[p * iw + q];
        }
    }
    Tensor::new(vec![h, w], u)
}
