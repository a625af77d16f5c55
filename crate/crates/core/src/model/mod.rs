//! The SUPRA neural operator: a pointwise lifting, `L` residual blocks that
//! attend between channel functions in a fixed subspace, and a pointwise
//! output head.
//!
//! Each block computes
//!
//! ```text
//! u1  = h + reconstruct(attention(project(norm(h))))
//! out = u1 + W2 gelu(W1 norm'(u1) + b1) + b2
//! ```
//!
//! Instance norm standardizes each channel over its samples before
//! projection. Layer norm standardizes each channel's coordinate vector after
//! projection, and in the MLP branch standardizes the channel vector at each
//! sample.

mod archive;
mod gradcheck;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use archive::{load_model, save_model, ARCHIVE_VERSION};
pub use gradcheck::{model_grad_check, small_config, ModelGradCheck, ParamCheck, SUITE_STEP};
pub use params::{Affine, LayerParams, Params};

use crate::basis::Basis;
use crate::error::{invalid, Error, Result};
use crate::numcore::{NodeId, Tape, Tensor, NORM_EPS};
use crate::scalar::Scalar;
use crate::supra::{supra_attention_node, SupraHeadParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Layer,
    Instance,
    None,
}

fn default_mlp_ratio() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel count `C`.
    pub hidden: usize,
    /// Number of residual blocks `L`.
    pub layers: usize,
    /// Number of basis functions `N`.
    pub basis_dim: usize,
    pub heads: usize,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    /// Append the two sample coordinates to the lifting input.
    #[serde(default = "default_true")]
    pub use_coords: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("basis_dim", self.basis_dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(name, "must be at least 1"));
            }
        }
        if self.heads > self.hidden {
            return Err(invalid(
                "heads",
                format!("{} heads exceed hidden = {}", self.heads, self.hidden),
            ));
        }
        if self.basis_dim % self.heads != 0 {
            return Err(invalid(
                "heads",
                format!("{} heads do not divide basis_dim = {}", self.heads, self.basis_dim),
            ));
        }
        if self.norm == NormKind::Layer && (self.basis_dim < 2 || self.hidden < 2) {
            return Err(invalid("norm", "layer norm needs basis_dim >= 2 and hidden >= 2"));
        }
        Ok(())
    }

    pub fn lift_inputs(&self) -> usize {
        self.in_channels + if self.use_coords { 2 } else { 0 }
    }

    pub fn head_dim(&self) -> usize {
        self.basis_dim / self.heads
    }

    /// Shapes of every parameter in visiting order.
    pub fn param_shapes(&self) -> Params<Vec<usize>> {
        let c = self.hidden;
        let n = self.basis_dim;
        let rc = self.mlp_ratio * c;
        let d = self.head_dim();
        let affine = |len: usize| Affine {
            gain: vec![len],
            bias: vec![len],
        };
        let (attn_len, mlp_len) = match self.norm {
            NormKind::Layer => (Some(n), Some(c)),
            NormKind::Instance => (Some(c), Some(c)),
            NormKind::None => (None, None),
        };
        Params {
            lift_w: vec![c, self.lift_inputs()],
            lift_b: vec![c],
            layers: (0..self.layers)
                .map(|_| LayerParams {
                    attn_norm: attn_len.map(affine),
                    heads: (0..self.heads)
                        .map(|_| SupraHeadParams {
                            w_q: vec![d, d],
                            w_k: vec![d, d],
                            w_v: vec![d, d],
                        })
                        .collect(),
                    mlp_norm: mlp_len.map(affine),
                    mlp_w1: vec![rc, c],
                    mlp_b1: vec![rc],
                    mlp_w2: vec![c, rc],
                    mlp_b2: vec![c],
                })
                .collect(),
            head_w: vec![self.out_channels, c],
            head_b: vec![self.out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .values()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Trained or freshly initialized model bound to one sample geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SupraOperator<T> {
    config: ModelConfig,
    geometry_hash: String,
    params: Params<Tensor<T>>,
}

impl<T: Scalar> SupraOperator<T> {
    /// Weights uniform in `+-1/sqrt(fan_in)`, biases 0, norm gains 1, all
    /// drawn from `config.seed`.
    pub fn init(config: &ModelConfig, basis: &Basis<T>) -> Result<Self> {
        config.validate()?;
        if basis.dim() != config.basis_dim {
            return Err(invalid(
                "basis_dim",
                format!("config says {}, basis has {}", config.basis_dim, basis.dim()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let shapes = config.param_shapes();
        let params = shapes.try_map(|name, shape| -> Result<Tensor<T>> {
            let t = if name.ends_with(".gain") {
                Tensor::full(shape, T::one())
            } else if shape.len() == 1 {
                Tensor::zeros(shape)
            } else {
                let bound = 1.0 / (shape[1] as f64).sqrt();
                Tensor::from_fn2(shape[0], shape[1], |_, _| T::of(rng.random_range(-bound..bound)))
            };
            Ok(t)
        })?;
        Ok(Self {
            config: config.clone(),
            geometry_hash: basis.geometry().hash(),
            params,
        })
    }

    /// Assemble from parts, checking every shape against the config.
    pub fn from_parts(
        config: ModelConfig,
        geometry_hash: String,
        params: Params<Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        let want = expected.named();
        let got = params.named();
        if want.len() != got.len() {
            return Err(invalid(
                "params",
                format!("expected {} tensors, got {}", want.len(), got.len()),
            ));
        }
        for ((name, shape), (gname, t)) in want.iter().zip(&got) {
            if name != gname || t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "model parameter",
                    left: (*shape).clone(),
                    right: t.shape().to_vec(),
                });
            }
            if !t.all_finite() {
                return Err(Error::NonFinite { what: name.clone() });
            }
        }
        Ok(Self {
            config,
            geometry_hash,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn geometry_hash(&self) -> &str {
        &self.geometry_hash
    }

    pub fn params(&self) -> &Params<Tensor<T>> {
        &self.params
    }

    /// Replace all parameters; shapes must be unchanged.
    pub fn set_params(&mut self, params: Params<Tensor<T>>) -> Result<()> {
        *self = Self::from_parts(self.config.clone(), self.geometry_hash.clone(), params)?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().iter().map(|t| t.len()).sum()
    }

    /// Fail unless `basis` was built on the geometry this model belongs to.
    pub fn check_basis(&self, basis: &Basis<T>) -> Result<()> {
        let found = basis.geometry().hash();
        if found != self.geometry_hash {
            return Err(Error::GeometryMismatch {
                expected: self.geometry_hash.clone(),
                found,
            });
        }
        if basis.dim() != self.config.basis_dim {
            return Err(invalid(
                "basis",
                format!("model expects N = {}, basis has {}", self.config.basis_dim, basis.dim()),
            ));
        }
        Ok(())
    }

    /// Predict `out_channels x M` from `inputs` (`in_channels x M`) and the
    /// sample coordinates (`2 x M`).
    pub fn forward(&self, inputs: &Tensor<T>, coords: &Tensor<T>, basis: &Basis<T>) -> Result<Tensor<T>> {
        self.check_basis(basis)?;
        let x = lift_input(&self.config, inputs, coords)?;
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let p = self.params.map(|t| tape.constant(t.clone()));
        let y = forward_on_tape(&self.config, &mut tape, &p, xn, basis)?;
        Ok(tape.value(y).clone())
    }

    pub fn cast<U: Scalar>(&self) -> SupraOperator<U> {
        SupraOperator {
            config: self.config.clone(),
            geometry_hash: self.geometry_hash.clone(),
            params: self.params.map(|t| t.cast()),
        }
    }
}

/// Stack `inputs` and, when configured, `coords` into the lifting input.
pub fn lift_input<T: Scalar>(
    config: &ModelConfig,
    inputs: &Tensor<T>,
    coords: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (ci, m) = inputs.dims2()?;
    if ci != config.in_channels {
        return Err(invalid(
            "inputs",
            format!("expected {} channels, got {ci}", config.in_channels),
        ));
    }
    if !config.use_coords {
        return Ok(inputs.clone());
    }
    if coords.shape() != [2, m] {
        return Err(Error::ShapeMismatch {
            op: "lift coordinates",
            left: vec![2, m],
            right: coords.shape().to_vec(),
        });
    }
    let mut data = inputs.data().to_vec();
    data.extend_from_slice(coords.data());
    Tensor::new(vec![ci + 2, m], data)
}

/// Pointwise affine map `W x + b` applied at every sample.
fn pointwise<T: Scalar>(tape: &mut Tape<T>, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
    let y = tape.matmul(w, x)?;
    tape.add_row_bias(y, b)
}

/// Lifting: `C x M` hidden state from the stacked lifting input.
pub fn lift_on_tape<T: Scalar>(tape: &mut Tape<T>, p: &Params<NodeId>, x: NodeId) -> Result<NodeId> {
    pointwise(tape, p.lift_w, p.lift_b, x)
}

/// One residual block.
pub fn block_on_tape<T: Scalar>(
    config: &ModelConfig,
    tape: &mut Tape<T>,
    layer: &LayerParams<NodeId>,
    h: NodeId,
    basis: &Basis<T>,
) -> Result<NodeId> {
    let eps = T::of(NORM_EPS);
    let u_hat = match (config.norm, &layer.attn_norm) {
        (NormKind::Instance, Some(a)) => {
            let hn = tape.instance_norm(h, a.gain, a.bias, eps)?;
            basis.project_node(tape, hn)?
        }
        (NormKind::Layer, Some(a)) => {
            let c = basis.project_node(tape, h)?;
            tape.layer_norm(c, a.gain, a.bias, eps)?
        }
        (NormKind::None, None) => basis.project_node(tape, h)?,
        _ => return Err(invalid("params", "normalization parameters do not match config")),
    };
    let z_hat = supra_attention_node(tape, u_hat, &layer.heads)?;
    let z = basis.reconstruct_node(tape, z_hat)?;
    let u1 = tape.add(h, z)?;

    let normed = match (config.norm, &layer.mlp_norm) {
        (NormKind::Instance, Some(a)) => tape.instance_norm(u1, a.gain, a.bias, eps)?,
        (NormKind::Layer, Some(a)) => {
            let t = tape.transpose(u1)?;
            let t = tape.layer_norm(t, a.gain, a.bias, eps)?;
            tape.transpose(t)?
        }
        (NormKind::None, None) => u1,
        _ => return Err(invalid("params", "normalization parameters do not match config")),
    };
    let a = pointwise(tape, layer.mlp_w1, layer.mlp_b1, normed)?;
    let a = tape.gelu(a);
    let m = pointwise(tape, layer.mlp_w2, layer.mlp_b2, a)?;
    tape.add(u1, m)
}

/// Full forward pass from the stacked lifting input `x` to the prediction.
pub fn forward_on_tape<T: Scalar>(
    config: &ModelConfig,
    tape: &mut Tape<T>,
    p: &Params<NodeId>,
    x: NodeId,
    basis: &Basis<T>,
) -> Result<NodeId> {
    let mut h = lift_on_tape(tape, p, x)?;
    for layer in &p.layers {
        h = block_on_tape(config, tape, layer, h, basis)?;
    }
    pointwise(tape, p.head_w, p.head_b, h)
}
