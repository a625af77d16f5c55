use crate::error::{invalid, Result};
use crate::numcore::{NodeId, Tape, Tensor};
use crate::scalar::Scalar;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    /// `max_i |fd_i - g_i| / max(|g_i|, 1e-8)` over finite components.
    pub max_rel_err: T,
    /// Component attaining `max_rel_err`.
    pub worst_index: usize,
    pub analytic: Tensor<T>,
    pub numeric: Tensor<T>,
    /// Components where `f(theta +- h e_i)` was not finite.
    pub non_finite: Vec<usize>,
}

impl<T: Scalar> GradCheckReport<T> {
    pub fn passed(&self, tol: T) -> bool {
        self.non_finite.is_empty() && self.max_rel_err < tol
    }
}

const DENOM_FLOOR: f64 = 1e-8;

/// Check the tape gradient of a scalar function of `theta` against central
/// differences with step `h`.
///
/// `f` receives a fresh tape and the leaf holding `theta`, and must return the
/// scalar loss node.
pub fn grad_check<T, F>(f: F, theta: &Tensor<T>, h: T) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, NodeId) -> Result<NodeId>,
{
    if !(h >= T::of(1e-7) && h <= T::of(1e-4)) {
        return Err(invalid("h", format!("{h} outside [1e-7, 1e-4]")));
    }
    let mut tape = Tape::new();
    let leaf = tape.param(theta.clone());
    let loss = f(&mut tape, leaf)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get_or_zeros(leaf, theta.shape());

    let eval = |t: Tensor<T>| -> Result<T> {
        let mut tape = Tape::new();
        let leaf = tape.constant(t);
        let loss = f(&mut tape, leaf)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut numeric = vec![T::zero(); theta.len()];
    let mut non_finite = Vec::new();
    let mut max_rel_err = T::zero();
    let mut worst_index = 0;
    let floor = T::of(DENOM_FLOOR);
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += h;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= h;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        if !fp.is_finite() || !fm.is_finite() {
            non_finite.push(i);
            numeric[i] = T::nan();
            continue;
        }
        numeric[i] = (fp - fm) / (h + h);
        let g = analytic.data()[i];
        let rel = (numeric[i] - g).abs() / g.abs().max(floor);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_index,
        analytic,
        numeric: Tensor::new(theta.shape().to_vec(), numeric)?,
        non_finite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, r: usize, c: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn2(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn quadratic_matches_two_theta() {
        let theta = random(10, 4, 3);
        let rep = grad_check(|t, x| Ok(t.sum_squares(x)), &theta, 1e-5).unwrap();
        assert!(rep.max_rel_err < 1e-8, "{}", rep.max_rel_err);
        assert!(rep.analytic.max_abs_diff(&theta.scale(2.0)) < 1e-15);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let theta = random(11, 2, 2);
        let rep = grad_check(
            |t, _x| Ok(t.constant(Tensor::scalar(3.5))),
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(rep.analytic.max_abs() == 0.0);
        assert!(rep.numeric.max_abs() < 1e-10);
    }

    #[test]
    fn step_outside_range_rejected() {
        let theta = random(12, 1, 1);
        assert!(grad_check(|t, x| Ok(t.sum(x)), &theta, 1e-3).is_err());
        assert!(grad_check(|t, x| Ok(t.sum(x)), &theta, 1e-9).is_err());
    }

    #[test]
    fn non_finite_components_reported() {
        // sqrt of a value that goes negative under perturbation
        let theta = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let rep = grad_check(
            |t, x| {
                let s = t.sqrt(x);
                Ok(t.sum(s))
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert_eq!(rep.non_finite, vec![0]);
        assert!(!rep.passed(1e-5));
    }

    // every differentiable op on model-sized random inputs
    #[test]
    fn every_op_passes_fd_check() {
        let a = random(20, 4, 6);
        let w = random(21, 6, 6);
        let gain = random(22, 1, 6).reshape(vec![6]).unwrap();
        let bias = random(23, 1, 6).reshape(vec![6]).unwrap();
        let rgain = random(24, 1, 4).reshape(vec![4]).unwrap();
        let weights = random(25, 4, 12);
        let check = |name: &str, f: &dyn Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>, theta: &Tensor<f64>| {
            let rep = grad_check(f, theta, 1e-5).unwrap();
            assert!(rep.passed(1e-5), "{name}: rel err {}", rep.max_rel_err);
        };
        let project = |t: &mut Tape<f64>, y: NodeId| -> Result<NodeId> {
            // fixed random linear functional keeps gradients away from zero
            let r = t.constant(random(99, t.shape(y)[0], t.shape(y)[1]));
            let m = t.mul(y, r)?;
            Ok(t.sum(m))
        };
        check("matmul", &|t, x| {
            let wn = t.constant(w.clone());
            let y = t.matmul(x, wn)?;
            project(t, y)
        }, &a);
        check("matmul_t", &|t, x| {
            let an = t.constant(a.clone());
            let y = t.matmul_t(an, false, x, true)?;
            project(t, y)
        }, &w);
        check("softmax", &|t, x| {
            let y = t.softmax_rows(x)?;
            project(t, y)
        }, &a);
        check("layer_norm x", &|t, x| {
            let g = t.constant(gain.clone());
            let b = t.constant(bias.clone());
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y)
        }, &a);
        check("layer_norm gain", &|t, g| {
            let x = t.constant(a.clone());
            let b = t.constant(bias.clone());
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y)
        }, &gain);
        check("instance_norm x", &|t, x| {
            let g = t.constant(rgain.clone());
            let b = t.constant(rgain.clone());
            let y = t.instance_norm(x, g, b, 1e-5)?;
            project(t, y)
        }, &a);
        check("instance_norm bias", &|t, b| {
            let x = t.constant(a.clone());
            let g = t.constant(rgain.clone());
            let y = t.instance_norm(x, g, b, 1e-5)?;
            let y2 = t.gelu(y);
            project(t, y2)
        }, &rgain);
        check("gelu", &|t, x| {
            let y = t.gelu(x);
            project(t, y)
        }, &a);
        check("row bias / mul_rows", &|t, x| {
            let b = t.constant(rgain.clone());
            let y = t.add_row_bias(x, b)?;
            let y = t.mul_rows(y, b)?;
            project(t, y)
        }, &a);
        check("mul_rows scale", &|t, s| {
            let x = t.constant(a.clone());
            let y = t.mul_rows(x, s)?;
            project(t, y)
        }, &rgain);
        check("slice/concat/transpose", &|t, x| {
            let l = t.slice_cols(x, 0, 2)?;
            let r = t.slice_cols(x, 3, 3)?;
            let c = t.concat_cols(&[r, l])?;
            let tt = t.transpose(c)?;
            project(t, tt)
        }, &a);
        check("sqrt(sum_squares)", &|t, x| {
            let s = t.sum_squares(x);
            Ok(t.sqrt(s))
        }, &a);
        check("grid_gradient", &|t, x| {
            let g = t.grid_gradient(x, 3, 4, 1.0 / 3.0, 0.25)?;
            let s = t.sum_squares(g);
            Ok(t.sqrt(s))
        }, &weights);
    }
}
