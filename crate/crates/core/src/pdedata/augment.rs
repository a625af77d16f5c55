use rand::Rng;

use crate::basis::Geometry;
use crate::error::{invalid, Result};
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    /// Reverse the second grid axis.
    Horizontal,
    /// Reverse the first grid axis.
    Vertical,
}

/// Flip an `H x W` field.
pub fn flip_grid(field: &Tensor<f64>, flip: Flip) -> Result<Tensor<f64>> {
    let (h, w) = field.dims2()?;
    Ok(flip_rows(field, 1, h, w, flip))
}

/// Flip every row of a `channels x HW` tensor viewed as an `h x w` grid.
fn flip_rows(t: &Tensor<f64>, channels: usize, h: usize, w: usize, flip: Flip) -> Tensor<f64> {
    let d = t.data();
    let mut out = Vec::with_capacity(d.len());
    for c in 0..channels {
        let base = c * h * w;
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = match flip {
                    Flip::Horizontal => (i, w - 1 - j),
                    Flip::Vertical => (h - 1 - i, j),
                };
                out.push(d[base + si * w + sj]);
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape preserved")
}

/// Input and target channels of one sample, each `channels x M`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub inputs: Tensor<f64>,
    pub target: Tensor<f64>,
    pub geometry: Geometry,
}

impl Sample {
    pub fn new(inputs: Tensor<f64>, target: Tensor<f64>, geometry: Geometry) -> Result<Self> {
        let m = geometry.num_points();
        let (_, mi) = inputs.dims2()?;
        let (_, mt) = target.dims2()?;
        if mi != m || mt != m {
            return Err(invalid(
                "sample",
                format!("geometry has {m} points, inputs {mi}, target {mt}"),
            ));
        }
        if !inputs.all_finite() || !target.all_finite() {
            return Err(crate::Error::NonFinite {
                what: "sample".into(),
            });
        }
        Ok(Self {
            inputs,
            target,
            geometry,
        })
    }

    /// Apply one flip to every input and target channel.
    pub fn flipped(&self, flip: Flip) -> Result<Self> {
        let Geometry::Grid { height, width } = self.geometry else {
            return Err(invalid("augment", "flips are only defined on grid geometry"));
        };
        Ok(Self {
            inputs: flip_rows(&self.inputs, self.inputs.rows(), height, width, flip),
            target: flip_rows(&self.target, self.target.rows(), height, width, flip),
            geometry: self.geometry.clone(),
        })
    }
}

/// Independently flip horizontally and vertically, each with probability 1/2.
pub fn augment_flip(sample: &Sample, rng: &mut impl Rng) -> Result<Sample> {
    if !matches!(sample.geometry, Geometry::Grid { .. }) {
        return Err(invalid("augment", "flips are only defined on grid geometry"));
    }
    let mut out = sample.clone();
    if rng.random_bool(0.5) {
        out = out.flipped(Flip::Horizontal)?;
    }
    if rng.random_bool(0.5) {
        out = out.flipped(Flip::Vertical)?;
    }
    Ok(out)
}
