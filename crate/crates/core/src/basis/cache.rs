use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisKind, Geometry};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pdedata::ndbin;
use crate::scalar::Scalar;

pub const CACHE_VERSION: u32 = 1;

/// `basis.json` sidecar written next to `phi.ndbin` and `weights.ndbin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheMeta {
    pub version: u32,
    pub kind: BasisKind,
    pub geometry: Geometry,
    pub geometry_hash: String,
    pub points: usize,
    pub functions: usize,
    pub gram_deviation: f64,
    pub has_eigenvalues: bool,
}

pub fn save_cache<T: Scalar>(basis: &Basis<T>, dir: impl AsRef<Path>) -> Result<CacheMeta> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    ndbin::write(dir.join("phi.ndbin"), &basis.phi().cast())?;
    ndbin::write(dir.join("weights.ndbin"), &basis.weights().cast())?;
    if let Some(ev) = basis.eigenvalues() {
        let t = Tensor::new(vec![ev.len()], ev.iter().map(|x| x.as_f64()).collect())?;
        ndbin::write(dir.join("eigenvalues.ndbin"), &t)?;
    }
    let meta = CacheMeta {
        version: CACHE_VERSION,
        kind: basis.kind(),
        geometry: basis.geometry().clone(),
        geometry_hash: basis.geometry().hash(),
        points: basis.num_points(),
        functions: basis.dim(),
        gram_deviation: basis.gram_deviation().as_f64(),
        has_eigenvalues: basis.eigenvalues().is_some(),
    };
    fs::write(dir.join("basis.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta)
}

pub fn load_cache<T: Scalar>(dir: impl AsRef<Path>) -> Result<Basis<T>> {
    let dir = dir.as_ref();
    let meta: CacheMeta = serde_json::from_str(&fs::read_to_string(dir.join("basis.json"))?)?;
    if meta.version != CACHE_VERSION {
        return Err(Error::Format(format!(
            "basis cache version {} (expected {CACHE_VERSION})",
            meta.version
        )));
    }
    if meta.geometry.hash() != meta.geometry_hash {
        return Err(Error::GeometryMismatch {
            expected: meta.geometry_hash,
            found: meta.geometry.hash(),
        });
    }
    let phi = ndbin::read(dir.join("phi.ndbin"))?;
    if phi.shape() != [meta.points, meta.functions] {
        return Err(Error::Format(format!(
            "phi.ndbin has shape {:?}, sidecar says [{}, {}]",
            phi.shape(),
            meta.points,
            meta.functions
        )));
    }
    let weights = ndbin::read(dir.join("weights.ndbin"))?;
    let eigenvalues = if meta.has_eigenvalues {
        let t = ndbin::read(dir.join("eigenvalues.ndbin"))?;
        Some(t.data().iter().map(|&x| T::of(x)).collect())
    } else {
        None
    };
    Basis::from_parts(meta.kind, meta.geometry, phi.cast(), weights.cast(), eigenvalues)
}
