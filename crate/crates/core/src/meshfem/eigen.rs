use crate::error::{invalid, Error, Result};
use crate::meshfem::SparseSym;
use crate::numcore::Tensor;
use crate::scalar::Scalar;

/// Largest system handed to the dense eigensolver.
pub const MAX_DENSE_DIM: usize = 4096;

const MAX_QL_ITERATIONS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BoundaryCondition {
    #[default]
    Neumann,
    /// Boundary vertices are pinned to zero.
    Dirichlet,
}

/// Generalized eigenpairs `K phi = lambda diag(m) phi`.
#[derive(Clone, Debug)]
pub struct EigenPairs<T> {
    /// Ascending eigenvalues.
    pub values: Vec<T>,
    /// `V x N`, column `k` is the eigenvector of `values[k]`, normalized so
    /// `Phi^T diag(m) Phi = I`.
    pub vectors: Tensor<T>,
}

/// The `n` smallest eigenpairs of `K phi = lambda diag(mass) phi`.
///
/// The problem is reduced to the standard symmetric problem for
/// `M^{-1/2} K M^{-1/2}` and solved densely. With
/// [`BoundaryCondition::Dirichlet`], rows and columns of vertices flagged in
/// `boundary` are removed first and the eigenvectors are extended by zeros.
/// Each eigenvector is signed so its largest-magnitude entry is positive.
pub fn smallest_eigenpairs<T: Scalar>(
    k: &SparseSym<T>,
    mass: &Tensor<T>,
    boundary: &[bool],
    n: usize,
    bc: BoundaryCondition,
) -> Result<EigenPairs<T>> {
    let v = k.dim();
    if mass.len() != v || boundary.len() != v {
        return Err(invalid(
            "mass",
            format!(
                "expected {v} mass entries and boundary flags, got {} and {}",
                mass.len(),
                boundary.len()
            ),
        ));
    }
    if let Some(i) = mass.data().iter().position(|&x| !(x > T::zero())) {
        return Err(invalid("mass", format!("entry {i} is not positive")));
    }
    let free: Vec<usize> = match bc {
        BoundaryCondition::Neumann => (0..v).collect(),
        BoundaryCondition::Dirichlet => (0..v).filter(|&i| !boundary[i]).collect(),
    };
    let dim = free.len();
    if n == 0 || n > dim {
        return Err(Error::TooManyEigenpairs {
            requested: n,
            available: dim,
        });
    }
    if dim > MAX_DENSE_DIM {
        return Err(invalid(
            "mesh",
            format!("{dim} unknowns exceed the dense eigensolver cap of {MAX_DENSE_DIM}"),
        ));
    }

    let mut local = vec![usize::MAX; v];
    for (a, &i) in free.iter().enumerate() {
        local[i] = a;
    }
    let rsqrt: Vec<T> = free
        .iter()
        .map(|&i| T::one() / mass.data()[i].sqrt())
        .collect();
    // column-major; symmetric so the layout only matters for the solver
    let mut s = vec![T::zero(); dim * dim];
    for (a, &i) in free.iter().enumerate() {
        for (j, val) in k.row(i) {
            let b = local[j];
            if b != usize::MAX {
                s[b * dim + a] = val * rsqrt[a] * rsqrt[b];
            }
        }
    }

    let mut d = vec![T::zero(); dim];
    let mut e = vec![T::zero(); dim];
    tred2(dim, &mut s, &mut d, &mut e);
    tql2(dim, &mut s, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).expect("finite eigenvalues"));

    let mut vectors = vec![T::zero(); v * n];
    let mut values = Vec::with_capacity(n);
    for (col, &src) in order.iter().take(n).enumerate() {
        values.push(d[src]);
        let y = &s[src * dim..(src + 1) * dim];
        let phi: Vec<T> = y.iter().zip(&rsqrt).map(|(&a, &r)| a * r).collect();
        let sign = if dominant_entry(&phi) < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        for (a, &i) in free.iter().enumerate() {
            vectors[i * n + col] = sign * phi[a];
        }
    }
    Ok(EigenPairs {
        values,
        vectors: Tensor::new(vec![v, n], vectors)?,
    })
}

/// First entry whose magnitude is within a relative `1e-9` of the maximum,
/// so near-ties from mesh symmetry resolve by index rather than rounding.
fn dominant_entry<T: Scalar>(v: &[T]) -> T {
    let peak = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let cut = peak * (T::one() - T::of(1e-9));
    v.iter().copied().find(|x| x.abs() >= cut).unwrap_or(T::zero())
}

/// Householder reduction of a symmetric matrix to tridiagonal form,
/// accumulating the transformation in `z` (column-major, `n x n`).
/// On return `d` holds the diagonal and `e[1..]` the subdiagonal.
fn tred2<T: Scalar>(n: usize, z: &mut [T], d: &mut [T], e: &mut [T]) {
    let at = |i: usize, j: usize| j * n + i;
    for j in 0..n {
        d[j] = z[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for &dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = z[at(i - 1, j)];
                z[at(i, j)] = T::zero();
                z[at(j, i)] = T::zero();
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = T::zero();
            }
            for j in 0..i {
                let f = d[j];
                z[at(j, i)] = f;
                let mut g = e[j] + z[at(j, j)] * f;
                for kk in j + 1..i {
                    let zkj = z[at(kk, j)];
                    g += zkj * d[kk];
                    e[kk] += zkj * f;
                }
                e[j] = g;
            }
            let mut f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for kk in j..i {
                    z[at(kk, j)] -= f * e[kk] + g * d[kk];
                }
                d[j] = z[at(i - 1, j)];
                z[at(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        z[at(n - 1, i)] = z[at(i, i)];
        z[at(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for kk in 0..=i {
                d[kk] = z[at(kk, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for kk in 0..=i {
                    g += z[at(kk, i + 1)] * z[at(kk, j)];
                }
                for kk in 0..=i {
                    z[at(kk, j)] -= g * d[kk];
                }
            }
        }
        for kk in 0..=i {
            z[at(kk, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = z[at(n - 1, j)];
        z[at(n - 1, j)] = T::zero();
    }
    z[at(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

/// Implicit QL iterations on the tridiagonal matrix from [`tred2`], rotating
/// the accumulated eigenvectors in `z`.
fn tql2<T: Scalar>(n: usize, z: &mut [T], d: &mut [T], e: &mut [T]) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();

    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::EigenNoConvergence { index: l });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (T::of(2.0) * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (left, right) = z.split_at_mut((i + 1) * n);
                    let zi = &mut left[i * n..];
                    let zi1 = &mut right[..n];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

/// Eigen-decomposition of a dense symmetric matrix (row-major `n x n`):
/// ascending eigenvalues and a row-major matrix whose columns are the
/// orthonormal eigenvectors.
pub fn symmetric_eigen<T: Scalar>(a: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
    let (n, c) = a.dims2()?;
    if n != c {
        return Err(invalid("matrix", format!("not square: {n}x{c}")));
    }
    // symmetric input, so row-major equals column-major
    let mut z = a.data().to_vec();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tred2(n, &mut z, &mut d, &mut e);
    tql2(n, &mut z, &mut d, &mut e)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].partial_cmp(&d[y]).expect("finite eigenvalues"));
    let values = order.iter().map(|&k| d[k]).collect();
    let vecs = Tensor::from_fn2(n, n, |i, col| z[order[col] * n + i]);
    Ok((values, vecs))
}
