use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;
use supra_core::basis::{load_cache, save_cache, Basis, Geometry};
use supra_core::bench::{growth_ratios, run_bench, to_csv, SUPRA_IMPL, TOKEN_IMPL};
use supra_core::meshfem::load_off;
use supra_core::model::{load_model, model_grad_check, small_config, NormKind, SupraOperator, SUITE_STEP};
use supra_core::pdedata::{gen_dataset, load_dataset, load_manifest, Dataset};
use supra_core::trainer::{evaluate, fit};
use supra_core::{configure_threads, Error};

use crate::config::{require, Cli, Command, Common, GeometrySource, RunConfig};

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument { .. }
            | Error::ShapeMismatch { .. }
            | Error::GeometryMismatch { .. }
            | Error::AboveNyquist { .. }
            | Error::RankDeficient { .. }
            | Error::TooManyEigenpairs { .. }
            | Error::Json(_) => Failure::Validation(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn invalid(e: anyhow::Error) -> Failure {
    Failure::Validation(e)
}

/// Largest acceptable relative gradient error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Side of the square grid gradcheck runs on.
const GRADCHECK_SIDE: usize = 8;
const EVAL_FILE: &str = "eval.json";
const BENCH_FILE: &str = "bench.csv";
const GRADCHECK_FILE: &str = "gradcheck.json";
const BASIS_DIR: &str = "basis";

struct Ctx {
    cfg: RunConfig,
    config_path: Option<PathBuf>,
    out: Option<PathBuf>,
    force: bool,
}

impl Ctx {
    fn new(c: Common) -> Outcome<Self> {
        let cfg = RunConfig::load(c.config.as_deref()).map_err(invalid)?.with_seed(c.seed);
        Ok(Self {
            cfg,
            config_path: c.config,
            out: c.out,
            force: c.force,
        })
    }

    fn path(&self, p: &Path) -> PathBuf {
        RunConfig::resolve(self.config_path.as_deref(), p)
    }

    fn out(&self) -> Outcome<&Path> {
        self.out.as_deref().ok_or_else(|| invalid(anyhow!("--out is required")))
    }

    /// Output directory, created; a non-empty one needs `--force`.
    fn fresh_out(&self) -> Outcome<&Path> {
        let out = self.out()?;
        let nonempty = fs::read_dir(out).map(|mut d| d.next().is_some()).unwrap_or(false);
        if nonempty && !self.force {
            return Err(invalid(anyhow!(
                "out: {} is not empty (pass --force to overwrite)",
                out.display()
            )));
        }
        fs::create_dir_all(out).map_err(|e| Failure::Runtime(e.into()))?;
        Ok(out)
    }

    fn data_dir(&self) -> Outcome<PathBuf> {
        let p = require(&self.cfg.paths.data, "paths.data").map_err(invalid)?;
        Ok(self.path(p))
    }

    fn dataset(&self) -> Outcome<Dataset> {
        let dir = self.data_dir()?;
        load_dataset(&dir)
            .with_context(|| format!("loading dataset {}", dir.display()))
            .map_err(Failure::Runtime)
    }

    /// Basis from `paths.basis`, else built from the `basis` section on the
    /// dataset geometry.
    fn basis_for(&self, data: &Dataset) -> Outcome<Basis<f64>> {
        if let Some(p) = &self.cfg.paths.basis {
            return Ok(load_cache(self.path(p))?);
        }
        let spec = require(&self.cfg.basis, "basis").map_err(invalid)?;
        Ok(match (&data.manifest.geometry, &data.mesh) {
            (Geometry::Grid { height, width }, _) => spec.build_on_grid(*height, *width)?,
            (Geometry::Mesh { .. }, Some(mesh)) => spec.build_on_mesh(mesh)?,
            (Geometry::Mesh { .. }, None) => return Err(Failure::Runtime(anyhow!("dataset has no mesh file"))),
        })
    }
}

fn print_json(value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    println!("{text}");
    Ok(())
}

fn write(path: PathBuf, contents: String) -> Outcome {
    fs::write(&path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

pub fn execute(cli: Cli) -> Outcome {
    configure_threads()?;
    match cli.command {
        Command::GenData(c) => gen_data(Ctx::new(c)?),
        Command::BuildBasis(c) => build_basis(Ctx::new(c)?),
        Command::Train(c) => train(Ctx::new(c)?),
        Command::Eval { common, split } => eval(Ctx::new(common)?, split.into()),
        Command::Gradcheck(c) => gradcheck(Ctx::new(c)?),
        Command::Bench(c) => bench(Ctx::new(c)?),
    }
}

fn gen_data(ctx: Ctx) -> Outcome {
    let spec = require(&ctx.cfg.dataset, "dataset").map_err(invalid)?;
    let out = ctx.out()?;
    let manifest = gen_dataset(spec, out, ctx.force)?;
    print_json(&json!({
        "task": manifest.task.name(),
        "geometry": manifest.geometry,
        "train": manifest.train.len(),
        "test": manifest.test.len(),
        "seed": manifest.seed,
    }))
}

fn build_basis(ctx: Ctx) -> Outcome {
    let spec = require(&ctx.cfg.basis, "basis").map_err(invalid)?;
    let basis: Basis<f64> = if ctx.cfg.paths.data.is_some() {
        let dir = ctx.data_dir()?;
        let manifest = load_manifest(&dir)?;
        match (&manifest.geometry, &manifest.mesh) {
            (Geometry::Grid { height, width }, _) => spec.build_on_grid(*height, *width)?,
            (_, Some(name)) => spec.build_on_mesh(&load_off::<f64>(dir.join(name))?)?,
            (_, None) => return Err(Failure::Runtime(anyhow!("dataset has no mesh file"))),
        }
    } else {
        match require(&ctx.cfg.geometry, "geometry").map_err(invalid)? {
            GeometrySource::Grid { height, width } => spec.build_on_grid(*height, *width)?,
            GeometrySource::Mesh { path } => spec.build_on_mesh(&load_off::<f64>(ctx.path(path))?)?,
        }
    };
    let out = ctx.fresh_out()?;
    let meta = save_cache(&basis, out)?;
    print_json(&meta)
}

fn train(ctx: Ctx) -> Outcome {
    let model_cfg = require(&ctx.cfg.model, "model").map_err(invalid)?.clone();
    model_cfg.validate()?;
    let train_cfg = ctx.cfg.train.clone().unwrap_or_default();
    train_cfg.validate()?;
    let data = ctx.dataset()?;
    let basis = ctx.basis_for(&data)?;
    let out = ctx.fresh_out()?;
    save_cache(&basis, out.join(BASIS_DIR))?;
    let mut model = SupraOperator::init(&model_cfg, &basis)?;
    let report = fit(&mut model, &basis, &data, &train_cfg, Some(out))?;
    print_json(&json!({
        "epochs": report.epochs.len(),
        "steps": report.steps,
        "best_epoch": report.best_epoch,
        "best_test_rel_l2": report.best_test_rel_l2,
        "diverged": report.diverged,
    }))?;
    if let Some(d) = report.diverged {
        return Err(Failure::Runtime(anyhow!("training diverged at step {}: {}", d.step, d.reason)));
    }
    Ok(())
}

fn eval(ctx: Ctx, split: supra_core::pdedata::Split) -> Outcome {
    let ckpt = require(&ctx.cfg.paths.checkpoint, "paths.checkpoint").map_err(invalid)?;
    let ckpt = ctx.path(ckpt);
    let data = ctx.dataset()?;
    let model: SupraOperator<f64> = load_model(&ckpt)
        .with_context(|| format!("loading model {}", ckpt.display()))
        .map_err(Failure::Runtime)?;
    let basis = if ctx.cfg.paths.basis.is_none() && ctx.cfg.basis.is_none() {
        let sibling = ckpt.parent().map(|p| p.join(BASIS_DIR));
        match sibling.filter(|p| p.is_dir()) {
            Some(p) => load_cache(p)?,
            None => return Err(invalid(anyhow!("config needs `basis` or `paths.basis`"))),
        }
    } else {
        ctx.basis_for(&data)?
    };
    let report = evaluate(&model, &basis, &data, split)?;
    let out = ctx.fresh_out()?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?;
    write(out.join(EVAL_FILE), text + "\n")?;
    print_json(&json!({
        "split": report.split,
        "mean_rel_l2": report.mean_rel_l2,
        "baseline_rel_l2": report.baseline_rel_l2,
        "samples": report.per_sample.len(),
    }))
}

fn gradcheck(ctx: Ctx) -> Outcome {
    let cfg = ctx.cfg.model.clone().unwrap_or_else(|| small_config(NormKind::Layer));
    cfg.validate()?;
    let h = ctx.cfg.gradcheck_step.unwrap_or(SUITE_STEP);
    let rep = model_grad_check(&cfg, GRADCHECK_SIDE, h)?;
    if ctx.out.is_some() {
        let out = ctx.fresh_out()?;
        let text = serde_json::to_string_pretty(&rep).map_err(|e| Failure::Runtime(e.into()))?;
        write(out.join(GRADCHECK_FILE), text + "\n")?;
    }
    println!("max_rel_err {:.3e} ({})", rep.max_rel_err, rep.worst_param);
    if !rep.vanishing.is_empty() {
        println!("vanishing gradients: {}", rep.vanishing.join(", "));
    }
    if !rep.passed(GRADCHECK_TOLERANCE) {
        return Err(Failure::Runtime(anyhow!(
            "gradient check failed: {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
            rep.max_rel_err
        )));
    }
    Ok(())
}

fn bench(ctx: Ctx) -> Outcome {
    let cfg = ctx.cfg.bench.clone().unwrap_or_default();
    let out = ctx.fresh_out()?;
    let rows = run_bench(&cfg)?;
    write(out.join(BENCH_FILE), to_csv(&rows))?;
    let mut growth = Vec::new();
    for &c in &cfg.channels {
        for &n in &cfg.basis_dims {
            for (m0, m1, r) in growth_ratios(&rows, SUPRA_IMPL, c, n) {
                growth.push(json!({"impl": SUPRA_IMPL, "C": c, "N": n, "from_M": m0, "to_M": m1, "ratio": r}));
            }
        }
        for (m0, m1, r) in growth_ratios(&rows, TOKEN_IMPL, c, 0) {
            growth.push(json!({"impl": TOKEN_IMPL, "C": c, "from_M": m0, "to_M": m1, "ratio": r}));
        }
    }
    print_json(&growth)
}
