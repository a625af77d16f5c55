//! ASCII OFF reader/writer for planar triangle meshes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::meshfem::TriMesh;
use crate::scalar::Scalar;

/// Parse OFF text: `OFF`, a counts line `V F [E]`, `V` vertex lines
/// `x y [z]` (z ignored), then `F` face lines `3 i j k`.
pub fn parse_off<T: Scalar>(text: &str) -> Result<TriMesh<T>> {
    // (line number, tokens) with comments and blank lines dropped
    let mut lines = text.lines().enumerate().filter_map(|(n, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (n + 1, l))
    });

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::OffHeader("empty file".into()))?;
    // counts may share the header line ("OFF 3 1 0")
    let mut header_tokens = header.split_whitespace();
    if header_tokens.next() != Some("OFF") {
        return Err(Error::OffHeader(format!("expected 'OFF', found '{header}'")));
    }
    let rest: Vec<&str> = header_tokens.collect();
    let (counts_line, counts): (usize, Vec<&str>) = if rest.is_empty() {
        let (n, l) = lines
            .next()
            .ok_or_else(|| Error::OffHeader("missing counts line".into()))?;
        (n, l.split_whitespace().collect())
    } else {
        (1, rest)
    };
    if counts.len() < 2 {
        return Err(Error::OffHeader(format!(
            "counts line {counts_line} needs vertex and face counts"
        )));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::OffHeader(format!("bad count '{s}' on line {counts_line}")))
    };
    let nv = parse_count(counts[0])?;
    let nf = parse_count(counts[1])?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = lines.next().ok_or(Error::OffParse {
            line: 0,
            reason: format!("expected {nv} vertices, file ended early"),
        })?;
        let coords: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::OffParse {
                line: n,
                reason: format!("bad coordinate: {e}"),
            })?;
        if coords.len() < 2 {
            return Err(Error::OffParse {
                line: n,
                reason: "vertex needs at least x and y".into(),
            });
        }
        vertices.push([T::of(coords[0]), T::of(coords[1])]);
    }

    let mut triangles = Vec::with_capacity(nf);
    for face in 0..nf {
        let (n, l) = lines.next().ok_or(Error::OffParse {
            line: 0,
            reason: format!("expected {nf} faces, file ended early"),
        })?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::OffParse {
                line: n,
                reason: format!("bad index: {e}"),
            })?;
        let arity = *idx.first().ok_or(Error::OffParse {
            line: n,
            reason: "empty face".into(),
        })?;
        if arity != 3 {
            return Err(Error::NonTriangleFace { face, arity });
        }
        if idx.len() < 4 {
            return Err(Error::OffParse {
                line: n,
                reason: "triangle needs three indices".into(),
            });
        }
        triangles.push([idx[1], idx[2], idx[3]]);
    }
    TriMesh::new(vertices, triangles)
}

pub fn load_off<T: Scalar>(path: impl AsRef<Path>) -> Result<TriMesh<T>> {
    parse_off(&fs::read_to_string(path)?)
}

pub fn to_off<T: Scalar>(mesh: &TriMesh<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF");
    let _ = writeln!(s, "{} {} 0", mesh.num_vertices(), mesh.num_triangles());
    for v in mesh.vertices() {
        // shortest round-trip representation of the f64 value
        let _ = writeln!(s, "{:?} {:?} 0", v[0].as_f64(), v[1].as_f64());
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub fn save_off<T: Scalar>(mesh: &TriMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_off(mesh))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_right_triangle() {
        let m: TriMesh<f64> = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (3, 1));
    }

    #[test]
    fn split_square_is_all_boundary() {
        let text = "OFF\n# square\n4 2 0\n0 0\n1 0\n1 1\n0 1\n3 0 1 2\n3 0 2 3\n";
        let m: TriMesh<f64> = parse_off(text).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (4, 2));
        assert!(m.boundary_flags().iter().all(|&b| b));
    }

    #[test]
    fn distinct_errors() {
        let quad = "OFF\n4 1 0\n0 0\n1 0\n1 1\n0 1\n4 0 1 2 3\n";
        assert!(matches!(
            parse_off::<f64>(quad),
            Err(Error::NonTriangleFace { face: 0, arity: 4 })
        ));
        assert!(matches!(
            parse_off::<f64>("PLY\n3 1 0\n"),
            Err(Error::OffHeader(_))
        ));
        let oob = "OFF\n3 1 0\n0 0\n1 0\n0 1\n3 0 1 7\n";
        assert!(matches!(
            parse_off::<f64>(oob),
            Err(Error::IndexOutOfRange { index: 7, .. })
        ));
        let flat = "OFF\n3 1 0\n0 0\n1 0\n2 0\n3 0 1 2\n";
        assert!(matches!(
            parse_off::<f64>(flat),
            Err(Error::DegenerateTriangle { .. })
        ));
    }

    #[test]
    fn write_read_round_trip() {
        let m = TriMesh::<f64>::annulus(0.3, 1.0, 4, 12).unwrap();
        let back: TriMesh<f64> = parse_off(&to_off(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.content_hash(), m.content_hash());
    }
}
