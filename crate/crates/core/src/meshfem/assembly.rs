use crate::error::{Error, Result};
use crate::meshfem::mesh::{signed_area, DEGENERATE_REL_AREA};
use crate::meshfem::TriMesh;
use crate::numcore::Tensor;
use crate::scalar::Scalar;

/// Symmetric sparse matrix in CSR form with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym<T> {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

/// Numeric symmetry tolerance checked on construction.
const SYMMETRY_TOL: f64 = 1e-12;

impl<T: Scalar> SparseSym<T> {
    /// Build from unsorted `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument {
                    name: "triplet",
                    reason: format!("({i}, {j}) outside {n}x{n}"),
                });
            }
            rows[i].push((j, v));
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if col_indices.len() > *row_offsets.last().unwrap()
                    && *col_indices.last().unwrap() == j
                {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        let m = Self {
            n,
            row_offsets,
            col_indices,
            values,
        };
        let asym = m.asymmetry();
        if asym > T::of(SYMMETRY_TOL) * (T::one() + m.max_abs()) {
            return Err(Error::InvalidArgument {
                name: "matrix",
                reason: format!("not symmetric (max |a_ij - a_ji| = {asym})"),
            });
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[s..e]
            .iter()
            .copied()
            .zip(self.values[s..e].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        match self.col_indices[s..e].binary_search(&j) {
            Ok(k) => self.values[s + k],
            Err(_) => T::zero(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn quadratic_form(&self, x: &[T]) -> T {
        self.matvec(x).iter().zip(x).map(|(&a, &b)| a * b).sum()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `max |a_ij - a_ji|` over stored entries.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut d = vec![T::zero(); self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[i * self.n + j] = v;
            }
        }
        Tensor::new(vec![self.n, self.n], d).expect("square")
    }
}

fn check_area<T: Scalar>(mesh: &TriMesh<T>, t: usize) -> Result<T> {
    let area = mesh.triangle_area(t);
    if area <= T::of(DEGENERATE_REL_AREA) * mesh.bbox_diag_sq() {
        return Err(Error::DegenerateTriangle {
            face: t,
            area: area.as_f64(),
        });
    }
    Ok(area)
}

/// P1 element stiffness of one triangle: `K_ij = (e_i . e_j) / (4A)` where
/// `e_i` is the edge opposite vertex `i`. Off-diagonals equal
/// `-(cot of the opposite angle) / 2`.
pub fn element_stiffness<T: Scalar>(p: [[T; 2]; 3]) -> [[T; 3]; 3] {
    let area = signed_area(p[0], p[1], p[2]);
    let edge = |i: usize| {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        [b[0] - a[0], b[1] - a[1]]
    };
    let e = [edge(0), edge(1), edge(2)];
    let mut k = [[T::zero(); 3]; 3];
    let four_a = T::of(4.0) * area;
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (e[i][0] * e[j][0] + e[i][1] * e[j][1]) / four_a;
        }
    }
    k
}

/// Assemble the P1 stiffness (cotangent Laplacian) matrix of `-Δ`.
pub fn assemble_stiffness<T: Scalar>(mesh: &TriMesh<T>) -> Result<SparseSym<T>> {
    let v = mesh.vertices();
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        check_area(mesh, t)?;
        let k = element_stiffness([v[tri[0]], v[tri[1]], v[tri[2]]]);
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((tri[a], tri[b], k[a][b]));
            }
        }
    }
    SparseSym::from_triplets(mesh.num_vertices(), &triplets)
}

/// Lumped (diagonal) mass: each vertex receives a third of the area of every
/// incident triangle.
pub fn assemble_lumped_mass<T: Scalar>(mesh: &TriMesh<T>) -> Result<Tensor<T>> {
    let mut m = vec![T::zero(); mesh.num_vertices()];
    let third = T::one() / T::of(3.0);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = check_area(mesh, t)?;
        for &i in tri {
            m[i] += a * third;
        }
    }
    Tensor::new(vec![mesh.num_vertices()], m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_right_triangle_element() {
        let k = element_stiffness([[0.0f64, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_in_kernel_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for mesh in [
            TriMesh::<f64>::unit_square(9, 7).unwrap(),
            TriMesh::<f64>::annulus(0.25, 1.0, 6, 20).unwrap(),
        ] {
            let k = assemble_stiffness(&mesh).unwrap();
            assert!(k.row_sums().iter().all(|s| s.abs() < 1e-10));
            let ones = vec![1.0; k.dim()];
            assert!(k.matvec(&ones).iter().all(|s| s.abs() < 1e-10));
            for _ in 0..100 {
                let x: Vec<f64> = (0..k.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                assert!(k.quadratic_form(&x) >= -1e-12);
            }
            assert!(k.asymmetry() <= 1e-12);
        }
    }

    #[test]
    fn lumped_mass_totals() {
        let single = TriMesh::<f64>::new(
            vec![[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let m = assemble_lumped_mass(&single).unwrap();
        assert!(m.data().iter().all(|&x| (x - 1.0).abs() < 1e-15));

        let coarse = assemble_lumped_mass(&TriMesh::<f64>::unit_square(5, 5).unwrap()).unwrap();
        let fine = assemble_lumped_mass(&TriMesh::<f64>::unit_square(9, 9).unwrap()).unwrap();
        assert!((coarse.sum() - 1.0).abs() < 1e-12);
        assert!((fine.sum() - coarse.sum()).abs() < 1e-12);
        assert!(fine.data().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn triplets_merge_and_sort() {
        let m = SparseSym::<f64>::from_triplets(
            2,
            &[(0, 1, 1.0), (1, 0, 1.0), (0, 0, 2.0), (0, 1, 0.5), (1, 0, 0.5)],
        )
        .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 1), 1.5);
        assert!(SparseSym::<f64>::from_triplets(2, &[(0, 1, 1.0)]).is_err());
    }
}
