//! Model archive: a directory holding `config.json` and one ndbin file per
//! parameter under `params/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SupraOperator};
use crate::numcore::Tensor;
use crate::pdedata::ndbin;
use crate::scalar::Scalar;

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveHeader {
    version: u32,
    config: ModelConfig,
    geometry_hash: String,
    parameters: Vec<ArchiveEntry>,
}

pub fn save_model<T: Scalar>(model: &SupraOperator<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir)?;
    let named = model.params().named();
    for (name, t) in &named {
        ndbin::write(pdir.join(format!("{name}.ndbin")), &t.cast())?;
    }
    let header = ArchiveHeader {
        version: ARCHIVE_VERSION,
        config: model.config().clone(),
        geometry_hash: model.geometry_hash().to_string(),
        parameters: named
            .iter()
            .map(|(name, t)| ArchiveEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&header)? + "\n")?;
    Ok(())
}

pub fn load_model<T: Scalar>(dir: impl AsRef<Path>) -> Result<SupraOperator<T>> {
    let dir = dir.as_ref();
    let header: ArchiveHeader = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    if header.version != ARCHIVE_VERSION {
        return Err(Error::Format(format!(
            "model archive version {} (expected {ARCHIVE_VERSION})",
            header.version
        )));
    }
    header.config.validate()?;
    let expected = header.config.param_shapes();
    let mut entries = header.parameters.iter();
    let params = expected.try_map(|name, shape| -> Result<Tensor<T>> {
        let entry = entries
            .next()
            .ok_or_else(|| Error::Format(format!("archive is missing parameter {name}")))?;
        if entry.name != name || entry.shape != *shape {
            return Err(Error::Format(format!(
                "archive lists {} {:?}, config needs {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let t = ndbin::read(dir.join("params").join(format!("{name}.ndbin")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "load parameter",
                left: shape.clone(),
                right: t.shape().to_vec(),
            });
        }
        Ok(t.cast())
    })?;
    if entries.next().is_some() {
        return Err(Error::Format("archive lists extra parameters".into()));
    }
    SupraOperator::from_parts(header.config, header.geometry_hash, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::fourier_basis_2d;
    use crate::model::NormKind;

    fn setup() -> (SupraOperator<f64>, crate::basis::Basis<f64>) {
        let b = fourier_basis_2d(2, 2, 8, 8).unwrap();
        let cfg = ModelConfig {
            in_channels: 1,
            out_channels: 1,
            hidden: 4,
            layers: 2,
            basis_dim: 16,
            heads: 2,
            norm: NormKind::Instance,
            mlp_ratio: 2,
            use_coords: true,
            seed: 1,
        };
        (SupraOperator::init(&cfg, &b).unwrap(), b)
    }

    #[test]
    fn round_trip_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (m, b) = setup();
        save_model(&m, dir.path()).unwrap();
        let back: SupraOperator<f64> = load_model(dir.path()).unwrap();
        assert_eq!(back, m);
        let xy = b.geometry().coordinates::<f64>(None).unwrap();
        let x = Tensor::from_fn2(1, 64, |_, i| (i as f64 * 0.3).sin());
        assert_eq!(back.forward(&x, &xy, &b).unwrap(), m.forward(&x, &xy, &b).unwrap());
    }

    #[test]
    fn tampered_shape_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = setup();
        save_model(&m, dir.path()).unwrap();
        let p = dir.path().join("params/layers.0.mlp.w1.ndbin");
        ndbin::write(&p, &Tensor::zeros(&[3, 4])).unwrap();
        assert!(load_model::<f64>(dir.path()).is_err());
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = setup();
        save_model(&m, dir.path()).unwrap();
        let cfg = dir.path().join("config.json");
        let text = fs::read_to_string(&cfg).unwrap().replace("\"version\": 1", "\"version\": 9");
        fs::write(&cfg, text).unwrap();
        assert!(load_model::<f64>(dir.path()).is_err());
    }

    #[test]
    fn loaded_model_rejects_other_basis() {
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = setup();
        save_model(&m, dir.path()).unwrap();
        let back: SupraOperator<f64> = load_model(dir.path()).unwrap();
        let other = fourier_basis_2d(2, 2, 10, 10).unwrap();
        assert!(matches!(back.check_basis(&other), Err(Error::GeometryMismatch { .. })));
    }
}
