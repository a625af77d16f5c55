//! Losses, normalizers, AdamW with a one-cycle schedule, the training loop
//! and evaluation reports.

mod loss;
mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loss::{
    grid_gradient, h1_loss, h1_seminorm, loss_on_tape, mean_rel_l2, rel_l2, GridSpacing, LossKind,
};
pub use optim::{AdamW, OneCycle, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::basis::{Basis, Geometry};
use crate::error::{invalid, Error, Result};
use crate::model::{forward_on_tape, lift_input, save_model, SupraOperator};
use crate::numcore::{Tape, Tensor};
use crate::pdedata::{augment_flip, ChannelStats, Dataset, Sample, Split, TaskSpec};

pub const NORMALIZER_EPS: f64 = 1e-8;
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Per-channel affine normalization fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    mean: Tensor<f64>,
    std: Tensor<f64>,
}

impl Normalizer {
    pub fn from_stats(stats: &ChannelStats) -> Result<Self> {
        if stats.mean.len() != stats.std.len() || stats.mean.is_empty() {
            return Err(invalid("normalization", "mean and std must be non-empty and equally long"));
        }
        let c = stats.mean.len();
        Ok(Self {
            mean: Tensor::new(vec![c], stats.mean.clone())?,
            std: Tensor::new(vec![c], stats.std.iter().map(|s| s.max(NORMALIZER_EPS)).collect())?,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Tensor<f64> {
        &self.mean
    }

    pub fn std(&self) -> &Tensor<f64> {
        &self.std
    }

    fn affine(&self, t: &Tensor<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<f64>> {
        let (c, m) = t.dims2()?;
        if c != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "normalizer",
                left: vec![self.channels()],
                right: t.shape().to_vec(),
            });
        }
        let (mu, sd) = (self.mean.data(), self.std.data());
        Ok(Tensor::from_fn2(c, m, |k, i| f(t.at(k, i), mu[k], sd[k])))
    }

    pub fn encode(&self, t: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.affine(t, |x, mu, sd| (x - mu) / sd)
    }

    pub fn decode(&self, t: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.affine(t, |x, mu, sd| x * sd + mu)
    }
}

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    4
}
fn default_lr() -> f64 {
    1e-3
}
fn default_wd() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Peak learning rate of the one-cycle schedule.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// Seeds batch order and augmentation.
    #[serde(default)]
    pub seed: u64,
    /// Objective; by default L2 + 0.1 H1 on Darcy and L2 elsewhere.
    #[serde(default)]
    pub loss: Option<LossKind>,
    /// Random flips on flip-equivariant grid tasks.
    #[serde(default = "default_true")]
    pub augment: bool,
    /// Evaluate on the training split instead of the test split and
    /// disable augmentation.
    #[serde(default)]
    pub overfit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            weight_decay: default_wd(),
            seed: 0,
            loss: None,
            augment: true,
            overfit: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn loss_for(&self, task: &TaskSpec) -> LossKind {
        self.loss.unwrap_or(match task {
            TaskSpec::Darcy { .. } => LossKind::L2H1 { weight: 0.1 },
            _ => LossKind::L2,
        })
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_rel_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

/// Outcome of [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_test_rel_l2: Option<f64>,
    pub steps: usize,
    pub diverged: Option<Divergence>,
}

impl FitReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,lr,train_loss,test_rel_l2\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.step, e.lr, e.train_loss, e.test_rel_l2);
        }
        s
    }
}

/// Grid layout for the H1 term: the data nodes span the closed unit square.
pub fn grid_spacing(geometry: &Geometry) -> Option<GridSpacing> {
    match *geometry {
        Geometry::Grid { height, width } if height >= 2 && width >= 2 => Some(GridSpacing {
            h: height,
            w: width,
            dx: 1.0 / (height - 1) as f64,
            dy: 1.0 / (width - 1) as f64,
        }),
        _ => None,
    }
}

/// Everything a forward pass needs beyond the parameters.
struct Context<'a> {
    basis: &'a Basis<f64>,
    coords: Tensor<f64>,
    input_norm: Normalizer,
    output_norm: Normalizer,
}

impl<'a> Context<'a> {
    fn new(model: &SupraOperator<f64>, basis: &'a Basis<f64>, data: &Dataset) -> Result<Self> {
        model.check_basis(basis)?;
        if *basis.geometry() != data.manifest.geometry {
            return Err(Error::GeometryMismatch {
                expected: basis.geometry().hash(),
                found: data.manifest.geometry.hash(),
            });
        }
        let cfg = model.config();
        if cfg.in_channels != data.manifest.in_channels || cfg.out_channels != data.manifest.out_channels {
            return Err(invalid(
                "channels",
                format!(
                    "model maps {} -> {} channels, dataset has {} -> {}",
                    cfg.in_channels, cfg.out_channels, data.manifest.in_channels, data.manifest.out_channels
                ),
            ));
        }
        Ok(Self {
            basis,
            coords: data.coordinates()?,
            input_norm: Normalizer::from_stats(&data.manifest.normalization.inputs)?,
            output_norm: Normalizer::from_stats(&data.manifest.normalization.targets)?,
        })
    }

    fn predict(&self, model: &SupraOperator<f64>, inputs: &Tensor<f64>) -> Result<Tensor<f64>> {
        let y = model.forward(&self.input_norm.encode(inputs)?, &self.coords, self.basis)?;
        self.output_norm.decode(&y)
    }

    /// Loss of one sample in physical units and its parameter gradients in
    /// visiting order.
    fn loss_and_grad(
        &self,
        model: &SupraOperator<f64>,
        sample: &Sample,
        loss: LossKind,
        grid: Option<GridSpacing>,
    ) -> Result<(f64, Vec<Tensor<f64>>)> {
        let cfg = model.config();
        let x = lift_input(cfg, &self.input_norm.encode(&sample.inputs)?, &self.coords)?;
        let mut tape = Tape::new();
        let p = model.params().map(|t| tape.param(t.clone()));
        let xn = tape.constant(x);
        let y = forward_on_tape(cfg, &mut tape, &p, xn, self.basis)?;
        let sd = tape.constant(self.output_norm.std.clone());
        let mu = tape.constant(self.output_norm.mean.clone());
        let scaled = tape.mul_rows(y, sd)?;
        let u = tape.add_row_bias(scaled, mu)?;
        let l = loss_on_tape(&mut tape, loss, u, &sample.target, grid)?;
        let value = tape.value(l).data()[0];
        let grads = tape.backward(l)?;
        let g = p
            .values()
            .iter()
            .map(|&&id| grads.get_or_zeros(id, tape.shape(id)))
            .collect();
        Ok((value, g))
    }
}

fn write_log(out: Option<&Path>, report: &FitReport) -> Result<()> {
    if let Some(dir) = out {
        fs::write(dir.join(METRICS_CSV), report.to_csv())?;
        fs::write(dir.join(METRICS_JSON), serde_json::to_string_pretty(report)? + "\n")?;
    }
    Ok(())
}

/// Train with AdamW and a one-cycle schedule. Batches come from a seeded
/// shuffle; per-sample gradients are computed in parallel and summed in a
/// fixed order. After every epoch the evaluation split is scored; the best
/// parameters are kept in `model` (and written under `out/checkpoint`).
/// A non-finite loss or gradient stops training with the last finite
/// parameters and is reported in [`FitReport::diverged`].
pub fn fit(
    model: &mut SupraOperator<f64>,
    basis: &Basis<f64>,
    data: &Dataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<FitReport> {
    cfg.validate()?;
    let ctx = Context::new(model, basis, data)?;
    let loss = cfg.loss_for(&data.manifest.task);
    let grid = grid_spacing(&data.manifest.geometry);
    if matches!(loss, LossKind::L2H1 { .. }) && grid.is_none() {
        return Err(invalid("loss", "the H1 term needs grid geometry"));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let train = &data.train;
    let eval_split = if cfg.overfit { Split::Train } else { Split::Test };
    let augment = cfg.augment && !cfg.overfit && data.manifest.task.flip_equivariant();
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = OneCycle::new(cfg.lr, steps_per_epoch * cfg.epochs);
    let mut opt = AdamW::new(model.params().values(), cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FitReport {
        epochs: Vec::new(),
        best_epoch: None,
        best_test_rel_l2: None,
        steps: 0,
        diverged: None,
    };
    let mut best_params = model.params().clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = schedule.lr(report.steps);
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<Sample> = batch
                .iter()
                .map(|&k| {
                    if augment {
                        augment_flip(&train[k], &mut rng)
                    } else {
                        Ok(train[k].clone())
                    }
                })
                .collect::<Result<_>>()?;
            let results: Vec<(f64, Vec<Tensor<f64>>)> = samples
                .par_iter()
                .map(|s| ctx.loss_and_grad(model, s, loss, grid))
                .collect::<Result<_>>()?;
            let inv = 1.0 / results.len() as f64;
            let mut batch_loss = 0.0;
            let mut grads: Vec<Tensor<f64>> = results[0].1.iter().map(|g| Tensor::zeros(g.shape())).collect();
            for (l, g) in &results {
                batch_loss += l * inv;
                for (acc, gk) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.data_mut().iter_mut().zip(gk.data()) {
                        *a += b * inv;
                    }
                }
            }
            if !batch_loss.is_finite() {
                report.diverged = Some(Divergence {
                    step: report.steps,
                    reason: format!("loss is {batch_loss}"),
                });
                break 'epochs;
            }
            lr = schedule.lr(report.steps);
            let mut values: Vec<Tensor<f64>> = model.params().values().into_iter().cloned().collect();
            match opt.step(&mut values, &grads, lr) {
                Ok(()) => {}
                Err(Error::Diverged { reason, .. }) => {
                    report.diverged = Some(Divergence {
                        step: report.steps,
                        reason,
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            if values.iter().any(|v| !v.all_finite()) {
                report.diverged = Some(Divergence {
                    step: report.steps,
                    reason: "non-finite parameters after update".into(),
                });
                break 'epochs;
            }
            model.set_params(model.params().with_values(values))?;
            report.steps += 1;
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let eval = ctx.evaluate(model, data, eval_split)?;
        let score = eval.mean_rel_l2;
        if !score.is_finite() {
            report.diverged = Some(Divergence {
                step: report.steps,
                reason: format!("evaluation rel_l2 is {score}"),
            });
            break;
        }
        report.epochs.push(EpochLog {
            epoch,
            step: report.steps,
            lr,
            train_loss,
            test_rel_l2: score,
        });
        if report.best_test_rel_l2.is_none_or(|b| score < b) {
            report.best_test_rel_l2 = Some(score);
            report.best_epoch = Some(epoch);
            best_params = model.params().clone();
            if let Some(dir) = out {
                save_model(model, dir.join(CHECKPOINT_DIR))?;
            }
        }
        write_log(out, &report)?;
    }
    if report.diverged.is_none() {
        model.set_params(best_params)?;
    }
    write_log(out, &report)?;
    Ok(report)
}

/// Scores of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub mean_rel_l2: f64,
    pub per_sample: Vec<f64>,
    /// Mean rel_l2 of predicting the pointwise mean of the training targets.
    pub baseline_rel_l2: f64,
}

impl Context<'_> {
    fn evaluate(&self, model: &SupraOperator<f64>, data: &Dataset, split: Split) -> Result<EvalReport> {
        evaluate_with(data, split, |s| self.predict(model, &s.inputs))
    }
}

/// Pointwise mean of the training targets.
pub fn train_mean_field(data: &Dataset) -> Result<Tensor<f64>> {
    let first = &data
        .train
        .first()
        .ok_or_else(|| invalid("dataset", "empty training split"))?
        .target;
    let mut acc = Tensor::zeros(first.shape());
    for s in &data.train {
        acc = acc.zip_map(&s.target, |a, b| a + b)?;
    }
    Ok(acc.scale(1.0 / data.train.len() as f64))
}

/// Score an arbitrary predictor of physical targets on one split.
pub fn evaluate_with(
    data: &Dataset,
    split: Split,
    predict: impl Fn(&Sample) -> Result<Tensor<f64>> + Sync,
) -> Result<EvalReport> {
    let samples = data.split(split);
    if samples.is_empty() {
        return Err(invalid("split", "no samples to evaluate"));
    }
    let per_sample: Vec<f64> = samples
        .par_iter()
        .map(|s| rel_l2(&predict(s)?, &s.target))
        .collect::<Result<_>>()?;
    let mean = train_mean_field(data)?;
    let baseline = mean_rel_l2(samples.iter().map(|s| (&mean, &s.target)))?;
    Ok(EvalReport {
        split,
        mean_rel_l2: per_sample.iter().sum::<f64>() / per_sample.len() as f64,
        per_sample,
        baseline_rel_l2: baseline,
    })
}

/// Score `model` on one split in physical units.
pub fn evaluate(model: &SupraOperator<f64>, basis: &Basis<f64>, data: &Dataset, split: Split) -> Result<EvalReport> {
    Context::new(model, basis, data)?.evaluate(model, data, split)
}
