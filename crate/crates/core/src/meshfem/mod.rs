//! Triangle meshes, P1 finite-element assembly and the generalized Laplacian
//! eigenproblem.

mod assembly;
mod eigen;
mod mesh;
mod off;

pub use assembly::{assemble_lumped_mass, assemble_stiffness, element_stiffness, SparseSym};
pub use eigen::{
    smallest_eigenpairs, symmetric_eigen, BoundaryCondition, EigenPairs, MAX_DENSE_DIM,
};
pub use mesh::TriMesh;
pub use off::{load_off, parse_off, save_off, to_off};
