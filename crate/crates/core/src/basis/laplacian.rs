use crate::basis::{Basis, BasisKind, Geometry};
use crate::error::Result;
use crate::meshfem::{
    assemble_lumped_mass, assemble_stiffness, smallest_eigenpairs, BoundaryCondition, TriMesh,
};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

/// The `n` lowest Neumann eigenfunctions of the mesh Laplacian.
///
/// Weights are the lumped masses normalized to sum to 1, and the mass-
/// orthonormal eigenvectors are rescaled by `sqrt(area)` so the basis is
/// orthonormal under those weights. The first function is the constant 1.
pub fn laplacian_eigenbasis<T: Scalar>(mesh: &TriMesh<T>, n: usize) -> Result<Basis<T>> {
    let k = assemble_stiffness(mesh)?;
    let mass = assemble_lumped_mass(mesh)?;
    let pairs = smallest_eigenpairs(&k, &mass, mesh.boundary_flags(), n, BoundaryCondition::Neumann)?;
    let area = mass.sum();
    let scale = area.sqrt();
    let weights = mass.map(|x| x / area);
    let phi: Tensor<T> = pairs.vectors.scale(scale);
    Basis::from_parts(
        BasisKind::Laplacian,
        Geometry::of_mesh(mesh),
        phi,
        weights,
        Some(pairs.values),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_first_function() {
        let mesh = TriMesh::<f64>::annulus(0.25, 1.0, 6, 24).unwrap();
        let b = laplacian_eigenbasis(&mesh, 10).unwrap();
        assert!((0..b.num_points()).all(|i| (b.phi().at(i, 0) - 1.0).abs() < 1e-10));
        let u = Tensor::full(&[1, b.num_points()], 3.0);
        let c = b.project(&u).unwrap();
        assert!((c.at(0, 0) - 3.0).abs() < 1e-10);
        assert!((1..b.dim()).all(|k| c.at(0, k).abs() < 1e-10));
    }

    #[test]
    fn first_nonzero_neumann_eigenvalue_on_square() {
        let mesh = TriMesh::<f64>::unit_square(33, 33).unwrap();
        let b = laplacian_eigenbasis(&mesh, 3).unwrap();
        let ev = b.eigenvalues().unwrap();
        assert!(ev[0].abs() < 1e-9);
        assert!((ev[1] - PI * PI).abs() / (PI * PI) < 0.02, "{}", ev[1]);
    }

    #[test]
    fn annulus_128_is_orthonormal() {
        let mesh = TriMesh::<f64>::annulus(0.25, 1.0, 16, 64).unwrap();
        let b = laplacian_eigenbasis(&mesh, 128).unwrap();
        assert_eq!((b.num_points(), b.dim()), (1024, 128));
        assert!(b.gram_deviation() <= 1e-8);
    }
}
