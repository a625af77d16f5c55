use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Planar triangle mesh with per-vertex boundary flags.
///
/// Construction validates indices, orients every triangle counter-clockwise,
/// rejects degenerate triangles and disconnected meshes, and derives the
/// boundary from edges used by exactly one triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh<T> {
    vertices: Vec<[T; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
}

/// Degeneracy threshold relative to the squared bounding-box diagonal.
pub(crate) const DEGENERATE_REL_AREA: f64 = 1e-14;

pub(crate) fn signed_area<T: Scalar>(p: [T; 2], q: [T; 2], r: [T; 2]) -> T {
    ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1])) * T::of(0.5)
}

impl<T: Scalar> TriMesh<T> {
    pub fn new(vertices: Vec<[T; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if nv < 3 || triangles.is_empty() {
            return Err(invalid("mesh", "needs at least 3 vertices and one triangle"));
        }
        if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::NonFinite {
                what: "mesh vertices".into(),
            });
        }
        let mut tris = triangles;
        for (f, t) in tris.iter().enumerate() {
            for &i in t {
                if i >= nv {
                    return Err(Error::IndexOutOfRange {
                        face: f,
                        index: i,
                        vertices: nv,
                    });
                }
            }
        }
        let threshold = T::of(DEGENERATE_REL_AREA) * bbox_diag_sq(&vertices);
        for (f, t) in tris.iter_mut().enumerate() {
            let a = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if a.abs() <= threshold || t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::DegenerateTriangle {
                    face: f,
                    area: a.as_f64(),
                });
            }
            if a < T::zero() {
                t.swap(1, 2);
            }
        }
        let components = count_components(nv, &tris);
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        let boundary = boundary_flags(nv, &tris);
        Ok(Self {
            vertices,
            triangles: tris,
            boundary,
        })
    }

    pub fn vertices(&self) -> &[[T; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        edge_use_counts(&self.triangles).len()
    }

    pub fn triangle_area(&self, t: usize) -> T {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> T {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn bbox_diag_sq(&self) -> T {
        bbox_diag_sq(&self.vertices)
    }

    /// Stable content hash (hex, 16 chars) over coordinates and connectivity.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"trimesh");
        for v in &self.vertices {
            h.update(v[0].as_f64().to_le_bytes());
            h.update(v[1].as_f64().to_le_bytes());
        }
        for t in &self.triangles {
            for &i in t {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Vertex coordinates as a `2 x V` row-major buffer (x row then y row).
    pub fn coordinate_rows(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(2 * self.vertices.len());
        out.extend(self.vertices.iter().map(|v| v[0]));
        out.extend(self.vertices.iter().map(|v| v[1]));
        out
    }

    /// Uniform triangulation of `[0,1]^2` with `nx x ny` vertices, each cell
    /// split along its rising diagonal.
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(invalid("resolution", "need at least 2x2 vertices"));
        }
        let mut vertices = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                vertices.push([
                    T::of(i as f64 / (nx - 1) as f64),
                    T::of(j as f64 / (ny - 1) as f64),
                ]);
            }
        }
        let id = |i: usize, j: usize| j * nx + i;
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(vertices, triangles)
    }

    /// Structured polar triangulation of the annulus `r_inner <= r <= r_outer`
    /// with `rings` radial levels and `sectors` angular divisions; the periodic
    /// seam is welded so there are `rings * sectors` vertices.
    pub fn annulus(r_inner: T, r_outer: T, rings: usize, sectors: usize) -> Result<Self> {
        if !(r_inner > T::zero() && r_inner < r_outer) {
            return Err(invalid(
                "radii",
                format!("need 0 < r_inner < r_outer, got ({r_inner}, {r_outer})"),
            ));
        }
        if rings < 2 || sectors < 3 {
            return Err(invalid(
                "resolution",
                format!("need rings >= 2 and sectors >= 3, got {rings}x{sectors}"),
            ));
        }
        let mut vertices = Vec::with_capacity(rings * sectors);
        let dr = (r_outer - r_inner) / T::of((rings - 1) as f64);
        for a in 0..rings {
            let r = r_inner + dr * T::of(a as f64);
            for b in 0..sectors {
                let th = T::of(std::f64::consts::TAU * b as f64 / sectors as f64);
                vertices.push([r * th.cos(), r * th.sin()]);
            }
        }
        let id = |a: usize, b: usize| a * sectors + (b % sectors);
        let mut triangles = Vec::with_capacity(2 * (rings - 1) * sectors);
        for a in 0..rings - 1 {
            for b in 0..sectors {
                triangles.push([id(a, b), id(a + 1, b), id(a + 1, b + 1)]);
                triangles.push([id(a, b), id(a + 1, b + 1), id(a, b + 1)]);
            }
        }
        Self::new(vertices, triangles)
    }
}

fn bbox_diag_sq<T: Scalar>(vertices: &[[T; 2]]) -> T {
    let mut lo = [T::infinity(); 2];
    let mut hi = [T::neg_infinity(); 2];
    for v in vertices {
        for k in 0..2 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let dx = hi[0] - lo[0];
    let dy = hi[1] - lo[1];
    dx * dx + dy * dy
}

fn edge_use_counts(tris: &[[usize; 3]]) -> HashMap<(usize, usize), usize> {
    let mut counts = HashMap::new();
    for t in tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    counts
}

fn boundary_flags(nv: usize, tris: &[[usize; 3]]) -> Vec<bool> {
    let mut flags = vec![false; nv];
    for ((a, b), n) in edge_use_counts(tris) {
        if n == 1 {
            flags[a] = true;
            flags[b] = true;
        }
    }
    flags
}

fn count_components(nv: usize, tris: &[[usize; 3]]) -> usize {
    let mut parent: Vec<usize> = (0..nv).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for t in tris {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
            if a != b {
                parent[a] = b;
            }
        }
    }
    // isolated vertices count as their own components
    (0..nv).filter(|&v| find(&mut parent, v) == v).count()
}
