//! Dataset generation and loading. A dataset directory holds `manifest.json`,
//! one ndbin file per sample under `train/` and `test/` (each a
//! `(in + out) x M` tensor) and, for mesh tasks, `mesh.off`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Geometry;
use crate::error::{invalid, Error, Result};
use crate::meshfem::{load_off, save_off, TriMesh};
use crate::numcore::Tensor;
use crate::pdedata::augment::Sample;
use crate::pdedata::darcy::{darcy_coefficient, darcy_solve_fd, DarcyParams};
use crate::pdedata::grf::{grf_sample, GrfParams};
use crate::pdedata::ndbin;
use crate::pdedata::poisson::{interpolate_periodic, poisson_fem_solve};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MESH_FILE: &str = "mesh.off";

/// Which synthetic problem to generate and its generator constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Two-valued coefficient `a` to the solution of `-div(a grad u) = f`
    /// on an `resolution x resolution` node grid.
    Darcy {
        resolution: usize,
        #[serde(default)]
        grf: GrfParams,
        #[serde(default)]
        darcy: DarcyParams,
    },
    /// Forcing `f` to the Dirichlet Poisson solution on an annulus mesh;
    /// `f` is a periodic field on `[-1, 1]^2` sampled at the vertices.
    AnnulusPoisson {
        r_inner: f64,
        r_outer: f64,
        rings: usize,
        sectors: usize,
        grf_resolution: usize,
        #[serde(default)]
        grf: GrfParams,
    },
}

impl TaskSpec {
    pub fn darcy(resolution: usize) -> Self {
        TaskSpec::Darcy {
            resolution,
            grf: GrfParams::default(),
            darcy: DarcyParams::default(),
        }
    }

    pub fn annulus_poisson(rings: usize, sectors: usize) -> Self {
        TaskSpec::AnnulusPoisson {
            r_inner: 0.5,
            r_outer: 1.0,
            rings,
            sectors,
            grf_resolution: 64,
            grf: GrfParams::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Darcy { .. } => "darcy",
            TaskSpec::AnnulusPoisson { .. } => "annulus_poisson",
        }
    }

    pub fn mesh(&self) -> Result<Option<TriMesh<f64>>> {
        match self {
            TaskSpec::Darcy { .. } => Ok(None),
            TaskSpec::AnnulusPoisson {
                r_inner,
                r_outer,
                rings,
                sectors,
                ..
            } => Ok(Some(TriMesh::annulus(*r_inner, *r_outer, *rings, *sectors)?)),
        }
    }

    /// Grid flips map one sample of the task onto another.
    pub fn flip_equivariant(&self) -> bool {
        matches!(self, TaskSpec::Darcy { .. })
    }

    /// Generate one `(inputs, target)` pair, each `1 x M`.
    pub fn generate(&self, mesh: Option<&TriMesh<f64>>, seed: u64) -> Result<(Tensor<f64>, Tensor<f64>)> {
        match self {
            TaskSpec::Darcy {
                resolution,
                grf,
                darcy,
            } => {
                let n = *resolution;
                let a = darcy_coefficient(&grf_sample(n, n, grf, seed)?, darcy.a_hi, darcy.a_lo)?;
                let u = darcy_solve_fd(&a, &Tensor::full(&[n, n], darcy.forcing), darcy.face_mean)?;
                Ok((a.reshape(vec![1, n * n])?, u.reshape(vec![1, n * n])?))
            }
            TaskSpec::AnnulusPoisson {
                grf_resolution, grf, ..
            } => {
                let mesh = mesh.ok_or_else(|| invalid("mesh", "annulus task needs its mesh"))?;
                let field = grf_sample(*grf_resolution, *grf_resolution, grf, seed)?;
                let f: Vec<f64> = mesh
                    .vertices()
                    .iter()
                    .map(|v| interpolate_periodic(&field, -1.0, 2.0, v[0], v[1]))
                    .collect();
                let u = poisson_fem_solve(mesh, &f)?;
                let m = f.len();
                Ok((Tensor::new(vec![1, m], f)?, Tensor::new(vec![1, m], u)?))
            }
        }
    }
}

/// Everything needed to generate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: TaskSpec,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

/// Per-channel mean and standard deviation over the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Statistics of each row pooled over all given `channels x M` tensors.
    pub fn of<'a>(tensors: impl IntoIterator<Item = &'a Tensor<f64>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for t in tensors {
            let (c, m) = t.dims2()?;
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            } else if sum.len() != c {
                return Err(invalid("channels", "tensors disagree on channel count"));
            }
            for k in 0..c {
                for &v in t.row(k) {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += m;
        }
        if count == 0 {
            return Err(invalid("stats", "no samples"));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, mu)| (s / n - mu * mu).max(0.0).sqrt())
            .collect();
        Ok(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub inputs: ChannelStats,
    pub targets: ChannelStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub task: TaskSpec,
    pub geometry: Geometry,
    pub in_channels: usize,
    pub out_channels: usize,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator seed of sample `index`. The base is hashed before the index is
/// mixed in, so neighbouring base seeds give unrelated streams.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

fn is_nonempty_dir(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(e.into()),
    }
}

/// Generate every sample, write the files and the manifest. Refuses a
/// non-empty `out` unless `force`, in which case earlier dataset files are
/// replaced.
pub fn gen_dataset(spec: &DatasetSpec, out: impl AsRef<Path>, force: bool) -> Result<DatasetManifest> {
    let out = out.as_ref();
    if spec.train == 0 || spec.test == 0 {
        return Err(invalid("counts", "train and test counts must be positive"));
    }
    if is_nonempty_dir(out)? {
        if !force {
            return Err(invalid(
                "out",
                format!("{} is not empty (pass --force to overwrite)", out.display()),
            ));
        }
        for sub in ["train", "test"] {
            if out.join(sub).is_dir() {
                fs::remove_dir_all(out.join(sub))?;
            }
        }
    }
    let mesh = spec.task.mesh()?;
    let geometry = match (&spec.task, &mesh) {
        (TaskSpec::Darcy { resolution, .. }, _) => Geometry::grid(*resolution, *resolution),
        (_, Some(m)) => Geometry::of_mesh(m),
        (_, None) => unreachable!("mesh tasks build their mesh"),
    };
    let total = spec.train + spec.test;
    let samples: Vec<Tensor<f64>> = (0..total)
        .into_par_iter()
        .map(|k| {
            let (x, y) = spec.task.generate(mesh.as_ref(), sample_seed(spec.seed, k as u64))?;
            stack_rows(&x, &y)
        })
        .collect::<Result<_>>()?;
    let in_channels = 1;
    let out_channels = 1;
    let train_inputs: Vec<Tensor<f64>> = samples[..spec.train]
        .iter()
        .map(|s| rows(s, 0, in_channels))
        .collect::<Result<_>>()?;
    let train_targets: Vec<Tensor<f64>> = samples[..spec.train]
        .iter()
        .map(|s| rows(s, in_channels, out_channels))
        .collect::<Result<_>>()?;
    let normalization = Normalization {
        inputs: ChannelStats::of(&train_inputs)?,
        targets: ChannelStats::of(&train_targets)?,
    };

    fs::create_dir_all(out.join("train"))?;
    fs::create_dir_all(out.join("test"))?;
    let mut train = Vec::with_capacity(spec.train);
    let mut test = Vec::with_capacity(spec.test);
    for (k, s) in samples.iter().enumerate() {
        let name = if k < spec.train {
            format!("train/{k:06}.ndbin")
        } else {
            format!("test/{:06}.ndbin", k - spec.train)
        };
        ndbin::write(out.join(&name), s)?;
        if k < spec.train {
            train.push(name);
        } else {
            test.push(name);
        }
    }
    let mesh_file = match &mesh {
        Some(m) => {
            save_off(m, out.join(MESH_FILE))?;
            Some(MESH_FILE.to_string())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        task: spec.task.clone(),
        geometry,
        in_channels,
        out_channels,
        seed: spec.seed,
        train,
        test,
        normalization,
        mesh: mesh_file,
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn stack_rows(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (cx, m) = x.dims2()?;
    let (cy, my) = y.dims2()?;
    if m != my {
        return Err(Error::ShapeMismatch {
            op: "stack_rows",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    let mut data = x.data().to_vec();
    data.extend_from_slice(y.data());
    Tensor::new(vec![cx + cy, m], data)
}

fn rows(t: &Tensor<f64>, start: usize, count: usize) -> Result<Tensor<f64>> {
    let m = t.cols();
    Tensor::new(vec![count, m], t.data()[start * m..(start + count) * m].to_vec())
}

/// A loaded dataset with every sample validated against the manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub mesh: Option<TriMesh<f64>>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// `2 x M` point coordinates of the dataset geometry.
    pub fn coordinates(&self) -> Result<Tensor<f64>> {
        self.manifest.geometry.coordinates(self.mesh.as_ref())
    }
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest version {} (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Read the manifest and every sample it references, checking shapes,
/// finiteness and the mesh hash.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let mesh = match &manifest.mesh {
        Some(name) => {
            let mesh: TriMesh<f64> = load_off(dir.join(name))?;
            if Geometry::of_mesh(&mesh) != manifest.geometry {
                return Err(Error::GeometryMismatch {
                    expected: manifest.geometry.hash(),
                    found: mesh.content_hash(),
                });
            }
            Some(mesh)
        }
        None => {
            if matches!(manifest.geometry, Geometry::Mesh { .. }) {
                return Err(Error::Format("mesh geometry without a mesh file".into()));
            }
            None
        }
    };
    let (ci, co) = (manifest.in_channels, manifest.out_channels);
    let m = manifest.geometry.num_points();
    let read = |names: &[String]| -> Result<Vec<Sample>> {
        names
            .iter()
            .map(|name| {
                let t = ndbin::read(dir.join(name))?;
                if t.shape() != [ci + co, m] {
                    return Err(Error::Format(format!(
                        "{name} has shape {:?}, manifest needs [{}, {m}]",
                        t.shape(),
                        ci + co
                    )));
                }
                Sample::new(rows(&t, 0, ci)?, rows(&t, ci, co)?, manifest.geometry.clone())
            })
            .collect()
    };
    let train = read(&manifest.train)?;
    let test = read(&manifest.test)?;
    Ok(Dataset {
        dir: dir.to_path_buf(),
        manifest,
        mesh,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            task: TaskSpec::darcy(12),
            train: 6,
            test: 3,
            seed: 11,
        }
    }

    #[test]
    fn writes_counts_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_dataset(&spec(), dir.path(), false).unwrap();
        assert_eq!((m.train.len(), m.test.len()), (6, 3));
        assert_eq!(fs::read_dir(dir.path().join("train")).unwrap().count(), 6);
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.manifest, m);
        assert_eq!(d.test.len(), 3);
        assert!(d.train.iter().all(|s| s.target.data().iter().all(|&v| v >= 0.0)));
        let stats = ChannelStats::of(d.train.iter().map(|s| &s.inputs)).unwrap();
        assert_eq!(stats, m.normalization.inputs);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = gen_dataset(&spec(), a.path(), false).unwrap();
        gen_dataset(&spec(), b.path(), false).unwrap();
        for name in m.train.iter().chain(&m.test).map(String::as_str).chain([MANIFEST_FILE]) {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn splits_are_disjoint() {
        let seeds: Vec<u64> = (0..9).map(|k| sample_seed(11, k)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
    }

    #[test]
    fn adjacent_base_seeds_do_not_share_samples() {
        let a: Vec<u64> = (0..64).map(|k| sample_seed(5, k)).collect();
        assert!((0..64).all(|k| !a.contains(&sample_seed(6, k))));
    }

    #[test]
    fn nonempty_dir_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("other.txt"), "x").unwrap();
        assert!(matches!(
            gen_dataset(&spec(), dir.path(), false),
            Err(Error::InvalidArgument { name: "out", .. })
        ));
        gen_dataset(&spec(), dir.path(), true).unwrap();
        gen_dataset(&spec(), dir.path(), true).unwrap();
    }

    #[test]
    fn corrupted_sample_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_dataset(&spec(), dir.path(), false).unwrap();
        ndbin::write(dir.path().join(&m.test[0]), &Tensor::zeros(&[2, 10])).unwrap();
        assert!(load_dataset(dir.path()).is_err());
        fs::remove_file(dir.path().join(&m.test[0])).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn annulus_task_round_trips_mesh() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            task: TaskSpec::annulus_poisson(5, 16),
            train: 3,
            test: 2,
            seed: 2,
        };
        let m = gen_dataset(&spec, dir.path(), false).unwrap();
        assert_eq!(m.mesh.as_deref(), Some(MESH_FILE));
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.coordinates().unwrap().shape(), &[2, 80]);
    }
}
