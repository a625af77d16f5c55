use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use supra_core::basis::BasisSpec;
use supra_core::bench::BenchConfig;
use supra_core::model::ModelConfig;
use supra_core::pdedata::{DatasetSpec, Split};
use supra_core::trainer::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "supra", version, about = "Subspace-parameterized attention neural operator toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written outside it.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override every seed in the configuration.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(Common),
    /// Build a basis, cache it and report its Gram deviation.
    BuildBasis(Common),
    /// Train a model on a generated dataset.
    Train(Common),
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Finite-difference check of every model parameter gradient.
    Gradcheck(Common),
    /// Time SUPRA attention against dense point-token attention.
    Bench(Common),
}

/// Geometry to build a basis on when no dataset is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum GeometrySource {
    Grid { height: usize, width: usize },
    /// OFF mesh file.
    Mesh { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory produced by gen-data.
    pub data: Option<PathBuf>,
    /// Basis cache produced by build-basis (or train).
    pub basis: Option<PathBuf>,
    /// Model archive produced by train.
    pub checkpoint: Option<PathBuf>,
}

/// Whole-run configuration; each subcommand reads the sections it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetSpec>,
    pub basis: Option<BasisSpec>,
    pub geometry: Option<GeometrySource>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub bench: Option<BenchConfig>,
    #[serde(default)]
    pub paths: Paths,
    /// Finite-difference step of gradcheck.
    pub gradcheck_step: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Apply a `--seed` override to every seeded section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            if let Some(d) = &mut self.dataset {
                d.seed = s;
            }
            if let Some(m) = &mut self.model {
                m.seed = s;
            }
            if let Some(t) = &mut self.train {
                t.seed = s;
            }
            if let Some(b) = &mut self.bench {
                b.seed = s;
            }
        }
        self
    }

    /// Resolve a relative path against the config file's directory.
    pub fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
        match base.and_then(Path::parent) {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    match section {
        Some(v) => Ok(v),
        None => bail!("config is missing the `{name}` section"),
    }
}
