use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numcore::{NodeId, Tape, Tensor};

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Relative L2 error.
    L2,
    /// Relative L2 plus `weight` times the relative H1 seminorm of the error.
    L2H1 { weight: f64 },
}

fn check_pair(u: &Tensor<f64>, target: &Tensor<f64>) -> Result<()> {
    if u.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            left: u.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    Ok(())
}

/// `|u - u*| / |u*|` with the plain Euclidean norm over all entries.
pub fn rel_l2(u: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    check_pair(u, target)?;
    let denom = target.norm();
    if denom == 0.0 {
        return Err(invalid("target", "relative error of a zero target"));
    }
    Ok(u.zip_map(target, |a, b| a - b)?.norm() / denom)
}

/// Mean of [`rel_l2`] over paired samples.
pub fn mean_rel_l2<'a>(pairs: impl IntoIterator<Item = (&'a Tensor<f64>, &'a Tensor<f64>)>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (u, t) in pairs {
        total += rel_l2(u, t)?;
        n += 1;
    }
    if n == 0 {
        return Err(invalid("samples", "no samples to average"));
    }
    Ok(total / n as f64)
}

/// Finite-difference gradient of each row of a `channels x HW` tensor on an
/// `h x w` grid with spacings `dx`, `dy`.
pub fn grid_gradient(u: &Tensor<f64>, h: usize, w: usize, dx: f64, dy: f64) -> Result<Tensor<f64>> {
    let mut tape = Tape::new();
    let a = tape.constant(u.clone());
    let g = tape.grid_gradient(a, h, w, dx, dy)?;
    Ok(tape.value(g).clone())
}

/// Discrete seminorm `sqrt(sum |grad u|^2)` over the grid points.
pub fn h1_seminorm(u: &Tensor<f64>, h: usize, w: usize, dx: f64, dy: f64) -> Result<f64> {
    Ok(grid_gradient(u, h, w, dx, dy)?.norm())
}

/// `|grad(u - u*)| / |grad u*|`.
pub fn h1_loss(u: &Tensor<f64>, target: &Tensor<f64>, h: usize, w: usize, dx: f64, dy: f64) -> Result<f64> {
    check_pair(u, target)?;
    let denom = h1_seminorm(target, h, w, dx, dy)?;
    if denom == 0.0 {
        return Err(invalid("target", "relative seminorm of a constant target"));
    }
    Ok(h1_seminorm(&u.zip_map(target, |a, b| a - b)?, h, w, dx, dy)? / denom)
}

/// Grid layout needed by the H1 term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpacing {
    pub h: usize,
    pub w: usize,
    pub dx: f64,
    pub dy: f64,
}

/// Record the loss of prediction `u` against the constant `target` on a tape.
pub fn loss_on_tape(
    tape: &mut Tape<f64>,
    kind: LossKind,
    u: NodeId,
    target: &Tensor<f64>,
    grid: Option<GridSpacing>,
) -> Result<NodeId> {
    let denom = target.norm();
    if denom == 0.0 {
        return Err(invalid("target", "relative error of a zero target"));
    }
    let t = tape.constant(target.clone());
    let diff = tape.sub(u, t)?;
    let sq = tape.sum_squares(diff);
    let norm = tape.sqrt(sq);
    let l2 = tape.scale(norm, 1.0 / denom);
    match kind {
        LossKind::L2 => Ok(l2),
        LossKind::L2H1 { weight } => {
            let g = grid.ok_or_else(|| invalid("loss", "the H1 term needs grid geometry"))?;
            let gdenom = h1_seminorm(target, g.h, g.w, g.dx, g.dy)?;
            if gdenom == 0.0 {
                return Err(invalid("target", "relative seminorm of a constant target"));
            }
            let grad = tape.grid_gradient(diff, g.h, g.w, g.dx, g.dy)?;
            let gsq = tape.sum_squares(grad);
            let gnorm = tape.sqrt(gsq);
            let h1 = tape.scale(gnorm, weight / gdenom);
            tape.add(l2, h1)
        }
    }
}
