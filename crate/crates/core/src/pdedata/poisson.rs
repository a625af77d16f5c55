use crate::error::{invalid, Result};
use crate::meshfem::{assemble_lumped_mass, assemble_stiffness, TriMesh};
use crate::numcore::Tensor;
use crate::pdedata::cg::pcg;

pub const CG_TOLERANCE: f64 = 1e-10;

/// Solve the P1 Galerkin system `K u = M f` with `u = 0` on boundary
/// vertices; `f` holds one value per vertex.
pub fn poisson_fem_solve(mesh: &TriMesh<f64>, f: &[f64]) -> Result<Vec<f64>> {
    let nv = mesh.num_vertices();
    if f.len() != nv {
        return Err(invalid(
            "forcing",
            format!("expected {nv} vertex values, got {}", f.len()),
        ));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::NonFinite {
            what: "forcing".into(),
        });
    }
    let k = assemble_stiffness(mesh)?;
    let mass = assemble_lumped_mass(mesh)?;
    let interior: Vec<usize> = (0..nv).filter(|&i| !mesh.boundary_flags()[i]).collect();
    if interior.is_empty() {
        return Err(invalid("mesh", "no interior vertices"));
    }
    let mut slot = vec![usize::MAX; nv];
    for (s, &i) in interior.iter().enumerate() {
        slot[i] = s;
    }
    let b: Vec<f64> = interior.iter().map(|&i| mass.data()[i] * f[i]).collect();
    let diag: Vec<f64> = interior.iter().map(|&i| k.get(i, i)).collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        for (s, &i) in interior.iter().enumerate() {
            y[s] = k
                .row(i)
                .filter(|&(j, _)| slot[j] != usize::MAX)
                .map(|(j, v)| v * x[slot[j]])
                .sum();
        }
    };
    let (x, _) = pcg(apply, &diag, &b, CG_TOLERANCE, 10 * nv)?;
    let mut u = vec![0.0; nv];
    for (s, &i) in interior.iter().enumerate() {
        u[i] = x[s];
    }
    Ok(u)
}

/// Bilinear interpolation of an `S x S` periodic field covering
/// `[lo, lo + span)^2`, with grid node `(p, q)` at `(lo + span p/S, lo + span q/S)`.
pub fn interpolate_periodic(field: &Tensor<f64>, lo: f64, span: f64, x: f64, y: f64) -> f64 {
    let (s, t) = (field.rows(), field.cols());
    let gx = (x - lo) / span * s as f64;
    let gy = (y - lo) / span * t as f64;
    let (fx, fy) = (gx.floor(), gy.floor());
    let (wx, wy) = (gx - fx, gy - fy);
    let p0 = (fx as i64).rem_euclid(s as i64) as usize;
    let q0 = (fy as i64).rem_euclid(t as i64) as usize;
    let (p1, q1) = ((p0 + 1) % s, (q0 + 1) % t);
    (1.0 - wx) * ((1.0 - wy) * field.at(p0, q0) + wy * field.at(p0, q1))
        + wx * ((1.0 - wy) * field.at(p1, q0) + wy * field.at(p1, q1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshfem::assemble_stiffness;

    fn forcing(mesh: &TriMesh<f64>) -> Vec<f64> {
        mesh.vertices().iter().map(|v| 1.0 + v[0] * v[1] + 0.5 * v[0]).collect()
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let mesh = TriMesh::annulus(0.5, 1.0, 5, 16).unwrap();
        let u = poisson_fem_solve(&mesh, &vec![0.0; mesh.num_vertices()]).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_identity_and_boundary() {
        let mesh = TriMesh::annulus(0.5, 1.0, 9, 32).unwrap();
        let f = forcing(&mesh);
        let u = poisson_fem_solve(&mesh, &f).unwrap();
        let k = assemble_stiffness(&mesh).unwrap();
        let m = assemble_lumped_mass(&mesh).unwrap();
        let lhs = k.quadratic_form(&u);
        let rhs: f64 = (0..u.len()).map(|i| u[i] * m.data()[i] * f[i]).sum();
        assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs(), "{lhs} vs {rhs}");
        for (i, &b) in mesh.boundary_flags().iter().enumerate() {
            if b {
                assert_eq!(u[i], 0.0);
            }
        }
    }

    #[test]
    fn refinement_changes_shrink() {
        let levels = [(5, 16), (9, 32), (17, 64), (33, 128)];
        let coarse_sectors = 16;
        let solutions: Vec<Vec<f64>> = levels
            .iter()
            .map(|&(rings, sectors)| {
                let mesh = TriMesh::annulus(0.5, 1.0, rings, sectors).unwrap();
                let u = poisson_fem_solve(&mesh, &forcing(&mesh)).unwrap();
                let stride = (rings - 1) / 4;
                let ratio = sectors / coarse_sectors;
                let mut at_coarse = Vec::new();
                for a in 0..5 {
                    for b in 0..coarse_sectors {
                        at_coarse.push(u[a * stride * sectors + b * ratio]);
                    }
                }
                at_coarse
            })
            .collect();
        let changes: Vec<f64> = solutions
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect();
        assert!(changes[0] > changes[1] && changes[1] > changes[2], "{changes:?}");
    }

    #[test]
    fn periodic_interpolation_hits_nodes_and_wraps() {
        let field = Tensor::from_fn2(4, 4, |p, q| (p * 4 + q) as f64);
        assert_eq!(interpolate_periodic(&field, -1.0, 2.0, -0.5, 0.0), 6.0);
        assert_eq!(interpolate_periodic(&field, -1.0, 2.0, 1.5, 2.0), 6.0);
        let mid = interpolate_periodic(&field, -1.0, 2.0, 0.75, -1.0);
        assert!((mid - 0.5 * (12.0 + 0.0)).abs() < 1e-12);
    }
}
