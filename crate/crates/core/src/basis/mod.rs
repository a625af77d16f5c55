//! Orthonormal subspace bases and the maps between point samples and
//! subspace coordinates.
//!
//! A [`Basis`] holds the `M x N` evaluation matrix `Phi` (`Phi[i][k]` is basis
//! function `k` at sample point `i`) together with per-point quadrature
//! weights. Every basis satisfies `Phi^T diag(w) Phi = I`, so projection is
//! the weighted sum `U diag(w) Phi` and reconstruction is `U_hat Phi^T`.

mod cache;
mod chebyshev;
mod fourier;
mod laplacian;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{load_cache, save_cache, CacheMeta};
pub use chebyshev::chebyshev_basis_2d;
pub use fourier::fourier_basis_2d;
pub use laplacian::laplacian_eigenbasis;

use crate::error::{invalid, Error, Result};
use crate::meshfem::TriMesh;
use crate::numcore::{NodeId, Tape, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Fourier,
    Chebyshev,
    Laplacian,
}

impl std::fmt::Display for BasisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BasisKind::Fourier => "fourier",
            BasisKind::Chebyshev => "chebyshev",
            BasisKind::Laplacian => "laplacian",
        })
    }
}

/// Where the sample points live.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    /// `height x width` points `(i/height, j/width)`, `i, j >= 1`, flattened
    /// row-major.
    Grid { height: usize, width: usize },
    /// Vertices of a triangle mesh identified by its content hash.
    Mesh { hash: String, vertices: usize },
}

impl Geometry {
    pub fn grid(height: usize, width: usize) -> Self {
        Geometry::Grid { height, width }
    }

    pub fn of_mesh<T: Scalar>(mesh: &TriMesh<T>) -> Self {
        Geometry::Mesh {
            hash: mesh.content_hash(),
            vertices: mesh.num_vertices(),
        }
    }

    pub fn num_points(&self) -> usize {
        match self {
            Geometry::Grid { height, width } => height * width,
            Geometry::Mesh { vertices, .. } => *vertices,
        }
    }

    /// Short identifier compared when a model meets a sample.
    pub fn hash(&self) -> String {
        match self {
            Geometry::Grid { height, width } => {
                let mut h = Sha256::new();
                h.update(format!("grid {height}x{width}").as_bytes());
                hex::encode(&h.finalize()[..8])
            }
            Geometry::Mesh { hash, .. } => hash.clone(),
        }
    }

    /// Sample coordinates as a `2 x M` tensor.
    pub fn coordinates<T: Scalar>(&self, mesh: Option<&TriMesh<T>>) -> Result<Tensor<T>> {
        match self {
            Geometry::Grid { height, width } => {
                let (h, w) = (*height, *width);
                let mut data = Vec::with_capacity(2 * h * w);
                for i in 0..h {
                    for _ in 0..w {
                        data.push(T::of((i + 1) as f64 / h as f64));
                    }
                }
                for _ in 0..h {
                    for j in 0..w {
                        data.push(T::of((j + 1) as f64 / w as f64));
                    }
                }
                Tensor::new(vec![2, h * w], data)
            }
            Geometry::Mesh { hash, vertices } => {
                let mesh = mesh.ok_or_else(|| invalid("mesh", "mesh geometry needs the mesh"))?;
                if mesh.content_hash() != *hash {
                    return Err(Error::GeometryMismatch {
                        expected: hash.clone(),
                        found: mesh.content_hash(),
                    });
                }
                Tensor::new(vec![2, *vertices], mesh.coordinate_rows())
            }
        }
    }
}

/// Which basis to build, as stored in run configurations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    Fourier { modes_x: usize, modes_y: usize },
    Chebyshev { deg_x: usize, deg_y: usize },
    Laplacian { count: usize },
}

impl BasisSpec {
    /// Number of basis functions this spec produces.
    pub fn dim(&self) -> usize {
        match *self {
            BasisSpec::Fourier { modes_x, modes_y } => 4 * modes_x * modes_y,
            BasisSpec::Chebyshev { deg_x, deg_y } => (deg_x + 1) * (deg_y + 1),
            BasisSpec::Laplacian { count } => count,
        }
    }

    pub fn build_on_grid<T: Scalar>(&self, height: usize, width: usize) -> Result<Basis<T>> {
        match *self {
            BasisSpec::Fourier { modes_x, modes_y } => {
                fourier_basis_2d(modes_x, modes_y, height, width)
            }
            BasisSpec::Chebyshev { deg_x, deg_y } => chebyshev_basis_2d(deg_x, deg_y, height, width),
            BasisSpec::Laplacian { .. } => Err(invalid(
                "basis",
                "laplacian bases are built on meshes; use a mesh geometry",
            )),
        }
    }

    pub fn build_on_mesh<T: Scalar>(&self, mesh: &TriMesh<T>) -> Result<Basis<T>> {
        match *self {
            BasisSpec::Laplacian { count } => laplacian_eigenbasis(mesh, count),
            _ => Err(invalid(
                "basis",
                "fourier and chebyshev bases need a regular grid",
            )),
        }
    }
}

/// Largest tolerated `max |G - I|` for a basis of scalar type `T`.
pub fn gram_tolerance<T: Scalar>() -> T {
    T::of(1e-8).max(T::epsilon() * T::of(1e3))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Basis<T> {
    kind: BasisKind,
    geometry: Geometry,
    phi: Tensor<T>,
    weights: Tensor<T>,
    /// `diag(w) Phi`, the projection operator.
    weighted_phi: Tensor<T>,
    eigenvalues: Option<Vec<T>>,
}

impl<T: Scalar> Basis<T> {
    /// Assemble and validate a basis: positive weights, `N <= M`, and a Gram
    /// matrix within [`gram_tolerance`] of the identity.
    pub fn from_parts(
        kind: BasisKind,
        geometry: Geometry,
        phi: Tensor<T>,
        weights: Tensor<T>,
        eigenvalues: Option<Vec<T>>,
    ) -> Result<Self> {
        let (m, n) = phi.dims2()?;
        if m != geometry.num_points() {
            return Err(invalid(
                "basis",
                format!("{m} rows but geometry has {} points", geometry.num_points()),
            ));
        }
        if weights.len() != m {
            return Err(Error::ShapeMismatch {
                op: "basis weights",
                left: vec![m],
                right: weights.shape().to_vec(),
            });
        }
        if n > m {
            return Err(invalid("basis", format!("N = {n} exceeds M = {m}")));
        }
        if let Some(ev) = &eigenvalues {
            if ev.len() != n {
                return Err(invalid("eigenvalues", format!("expected {n}, got {}", ev.len())));
            }
        }
        if !weights.data().iter().all(|&w| w > T::zero() && w.is_finite()) {
            return Err(invalid("weights", "quadrature weights must be positive"));
        }
        if !phi.all_finite() {
            return Err(Error::NonFinite { what: "basis matrix".into() });
        }
        let weighted_phi = Tensor::from_fn2(m, n, |i, k| weights.data()[i] * phi.at(i, k));
        let basis = Self {
            kind,
            geometry,
            phi,
            weights,
            weighted_phi,
            eigenvalues,
        };
        let dev = basis.gram_deviation();
        if !(dev <= gram_tolerance::<T>()) {
            return Err(invalid(
                "basis",
                format!("Gram deviation {dev} exceeds {}", gram_tolerance::<T>()),
            ));
        }
        Ok(basis)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Number of sample points `M`.
    pub fn num_points(&self) -> usize {
        self.phi.rows()
    }

    /// Number of basis functions `N`.
    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    /// `M x N` evaluation matrix.
    pub fn phi(&self) -> &Tensor<T> {
        &self.phi
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    /// Laplacian eigenvalues, ascending, when the basis came from a mesh.
    pub fn eigenvalues(&self) -> Option<&[T]> {
        self.eigenvalues.as_deref()
    }

    /// `Phi^T diag(w) Phi`.
    pub fn gram(&self) -> Tensor<T> {
        self.phi
            .matmul_t(true, &self.weighted_phi, false)
            .expect("consistent basis shapes")
    }

    /// `max |G - I|`.
    pub fn gram_deviation(&self) -> T {
        let g = self.gram();
        let n = g.rows();
        let mut dev = T::zero();
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { T::one() } else { T::zero() };
                dev = dev.max((g.at(i, j) - target).abs());
            }
        }
        dev
    }

    fn check_points(&self, op: &'static str, u: &Tensor<T>) -> Result<()> {
        let (_, m) = u.dims2()?;
        if m != self.num_points() {
            return Err(Error::ShapeMismatch {
                op,
                left: u.shape().to_vec(),
                right: vec![self.num_points(), self.dim()],
            });
        }
        Ok(())
    }

    fn check_coords(&self, op: &'static str, u_hat: &Tensor<T>) -> Result<()> {
        let (_, n) = u_hat.dims2()?;
        if n != self.dim() {
            return Err(Error::ShapeMismatch {
                op,
                left: u_hat.shape().to_vec(),
                right: vec![self.num_points(), self.dim()],
            });
        }
        Ok(())
    }

    /// Coordinates `U diag(w) Phi` (`C x N`) of channel functions `U`
    /// (`C x M`).
    pub fn project(&self, u: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_points("project", u)?;
        u.matmul(&self.weighted_phi)
    }

    /// Samples `U_hat Phi^T` (`C x M`) of coordinates `U_hat` (`C x N`).
    pub fn reconstruct(&self, u_hat: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_coords("reconstruct", u_hat)?;
        u_hat.matmul_t(false, &self.phi, true)
    }

    /// [`Basis::project`] recorded on a tape.
    pub fn project_node(&self, tape: &mut Tape<T>, u: NodeId) -> Result<NodeId> {
        self.check_points("project", tape.value(u))?;
        let p = tape.constant(self.weighted_phi.clone());
        tape.matmul(u, p)
    }

    /// [`Basis::reconstruct`] recorded on a tape.
    pub fn reconstruct_node(&self, tape: &mut Tape<T>, u_hat: NodeId) -> Result<NodeId> {
        self.check_coords("reconstruct", tape.value(u_hat))?;
        let p = tape.constant(self.phi.clone());
        tape.matmul_t(u_hat, false, p, true)
    }

    /// The same basis with rows reordered: row `i` of the result is row
    /// `perm[i]` of `self`. The geometry is kept, so this is for testing
    /// point-reindexing symmetries.
    pub fn permute_points(&self, perm: &[usize]) -> Result<Self> {
        let m = self.num_points();
        let mut seen = vec![false; m];
        if perm.len() != m || !perm.iter().all(|&p| p < m && !std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("perm", "not a permutation of the sample points"));
        }
        let n = self.dim();
        let phi = Tensor::from_fn2(m, n, |i, k| self.phi.at(perm[i], k));
        let w = Tensor::new(vec![m], perm.iter().map(|&p| self.weights.data()[p]).collect())?;
        Self::from_parts(self.kind, self.geometry.clone(), phi, w, self.eigenvalues.clone())
    }

    pub fn cast<U: Scalar>(&self) -> Basis<U> {
        Basis {
            kind: self.kind,
            geometry: self.geometry.clone(),
            phi: self.phi.cast(),
            weights: self.weights.cast(),
            weighted_phi: self.weighted_phi.cast(),
            eigenvalues: self
                .eigenvalues
                .as_ref()
                .map(|e| e.iter().map(|&x| U::of(x.as_f64())).collect()),
        }
    }
}

/// Uniform weights `1/(HW)` of a regular grid.
pub(crate) fn grid_weights<T: Scalar>(height: usize, width: usize) -> Tensor<T> {
    let m = height * width;
    Tensor::full(&[m], T::one() / T::of(m as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshfem::TriMesh;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn random(seed: u64, r: usize, c: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn2(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn bases() -> Vec<Basis<f64>> {
        let mesh = TriMesh::<f64>::annulus(0.25, 1.0, 6, 24).unwrap();
        vec![
            fourier_basis_2d(2, 3, 16, 12).unwrap(),
            chebyshev_basis_2d(4, 3, 16, 12).unwrap(),
            laplacian_eigenbasis(&mesh, 24).unwrap(),
        ]
    }

    fn sample_fn(basis: &Basis<f64>, f: impl Fn(f64, f64) -> f64) -> Tensor<f64> {
        let xy = basis.geometry().coordinates::<f64>(None).unwrap();
        let m = basis.num_points();
        Tensor::from_fn2(1, m, |_, i| f(xy.at(0, i), xy.at(1, i)))
    }

    #[test]
    fn unit_vectors_and_zero() {
        for b in bases() {
            let n = b.dim();
            let rows = b.phi().transpose().unwrap();
            let coords = b.project(&rows).unwrap();
            assert!(coords.max_abs_diff(&Tensor::eye(n)) <= 1e-10);
            let zero = Tensor::zeros(&[3, b.num_points()]);
            assert_eq!(b.project(&zero).unwrap().max_abs(), 0.0);
            let delta = Tensor::from_fn2(1, n, |_, k| if k == n / 2 { 1.0 } else { 0.0 });
            let f = b.reconstruct(&delta).unwrap();
            let col: Vec<f64> = (0..b.num_points()).map(|i| b.phi().at(i, n / 2)).collect();
            assert_eq!(f.data(), &col[..]);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let b = fourier_basis_2d::<f64>(1, 1, 8, 8).unwrap();
        assert!(b.project(&Tensor::zeros(&[2, 63])).is_err());
        assert!(b.reconstruct(&Tensor::zeros(&[2, 5])).is_err());
    }

    #[test]
    fn projection_error_shrinks_with_more_functions() {
        let u = |x: f64, y: f64| ((TAU * x).sin() + (TAU * y).cos()).exp();
        let errs: Vec<f64> = [2, 4, 6]
            .iter()
            .map(|&m| {
                let b = fourier_basis_2d::<f64>(m, m, 32, 32).unwrap();
                let s = sample_fn(&b, u);
                let back = b.reconstruct(&b.project(&s).unwrap()).unwrap();
                back.zip_map(&s, |a, c| a - c).unwrap().norm()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn laplacian_projection_error_non_increasing() {
        let mesh = TriMesh::<f64>::annulus(0.25, 1.0, 8, 32).unwrap();
        let big = laplacian_eigenbasis(&mesh, 64).unwrap();
        let xy = Geometry::of_mesh(&mesh).coordinates(Some(&mesh)).unwrap();
        let u = Tensor::from_fn2(1, mesh.num_vertices(), |_, i| (xy.at(0, i) * xy.at(1, i)).cos());
        let mut last = f64::INFINITY;
        for n in [4, 16, 64] {
            let phi = Tensor::from_fn2(big.num_points(), n, |i, k| big.phi().at(i, k));
            let b = Basis::from_parts(
                BasisKind::Laplacian,
                big.geometry().clone(),
                phi,
                big.weights().clone(),
                None,
            )
            .unwrap();
            let back = b.reconstruct(&b.project(&u).unwrap()).unwrap();
            let err = back.zip_map(&u, |a, c| a - c).unwrap().norm();
            assert!(err <= last + 1e-12);
            last = err;
        }
    }

    #[test]
    fn geometry_hash_distinguishes_grids() {
        assert_ne!(Geometry::grid(8, 8).hash(), Geometry::grid(8, 9).hash());
        assert_eq!(Geometry::grid(8, 8).hash(), Geometry::grid(8, 8).hash());
    }

    #[test]
    fn taped_maps_match_plain() {
        let b = chebyshev_basis_2d::<f64>(2, 2, 8, 8).unwrap();
        let u = random(3, 2, 64);
        let mut t = Tape::new();
        let un = t.constant(u.clone());
        let p = b.project_node(&mut t, un).unwrap();
        let r = b.reconstruct_node(&mut t, p).unwrap();
        assert_eq!(t.value(p), &b.project(&u).unwrap());
        assert_eq!(t.value(r), &b.reconstruct(&b.project(&u).unwrap()).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn project_inverts_reconstruct(seed in any::<u64>(), which in 0usize..3) {
            let b = &bases()[which];
            let c = random(seed, 3, b.dim());
            let back = b.project(&b.reconstruct(&c).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&c) <= 1e-10);
        }

        #[test]
        fn reconstruct_project_is_idempotent(seed in any::<u64>(), which in 0usize..3) {
            let b = &bases()[which];
            let u = random(seed, 2, b.num_points());
            let once = b.reconstruct(&b.project(&u).unwrap()).unwrap();
            let twice = b.reconstruct(&b.project(&once).unwrap()).unwrap();
            prop_assert!(twice.max_abs_diff(&once) <= 1e-10);
        }
    }
}
