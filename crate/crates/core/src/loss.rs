//! Reconstruction losses: plain MSE and depth-weighted MSE.
//!
//! The depth-weighted loss over a window of `N_e` pixels is
//! `(1/N_e) Σ w·(I − O)²` with `w = ẑ^p`, where `ẑ` is the (optionally
//! max-normalized) pixel depth and `p` the configured exponent. A single
//! `S×S` depth grid is broadcast to every frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthNormalization {
    None,
    #[default]
    MaxToOne,
}

/// Per-pixel depth weights, either one `S×S` grid or a `W×S×S` stack.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthWeights {
    size: usize,
    frames: Option<usize>,
    exponent: f64,
    normalization: DepthNormalization,
    /// `ẑ^p`, laid out like the depth input.
    effective: Vec<f64>,
}

impl DepthWeights {
    pub fn new(z: &Tensor<f64>, exponent: f64, normalization: DepthNormalization) -> Result<Self> {
        let (frames, size) = match *z.shape() {
            [h, w] if h == w => (None, h),
            [f, h, w] if h == w => (Some(f), h),
            [_, h, w] | [h, w] => return Err(Error::shape("DepthWeights", "width", h, w)),
            _ => return Err(Error::shape("DepthWeights", "rank", "2 or 3", z.rank())),
        };
        if size == 0 || z.is_empty() {
            return Err(Error::InvalidArgument("empty depth map".into()));
        }
        if !exponent.is_finite() || exponent <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "depth exponent must be positive, got {exponent}"
            )));
        }
        z.ensure_finite("depth map")?;
        if let Some((i, v)) = z.data().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative depth {v} at index {i}"
            )));
        }
        let max = z.data().iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(Error::InvalidArgument("all depth weights are zero".into()));
        }
        let scale = match normalization {
            DepthNormalization::None => 1.0,
            DepthNormalization::MaxToOne => 1.0 / max,
        };
        let effective = z
            .data()
            .iter()
            .map(|&v| (v * scale).powf(exponent))
            .collect();
        Ok(DepthWeights {
            size,
            frames,
            exponent,
            normalization,
            effective,
        })
    }

    /// All-ones weights, under which the weighted loss is plain MSE.
    pub fn unit(size: usize) -> Self {
        DepthWeights {
            size,
            frames: None,
            exponent: 1.0,
            normalization: DepthNormalization::None,
            effective: vec![1.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn frames(&self) -> Option<usize> {
        self.frames
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn normalization(&self) -> DepthNormalization {
        self.normalization
    }

    pub fn effective(&self) -> &[f64] {
        &self.effective
    }

    /// Weight slice for frame `f` of a tensor with `total_frames` frames.
    fn frame_weights(&self, f: usize) -> &[f64] {
        let plane = self.size * self.size;
        match self.frames {
            None => &self.effective,
            Some(_) => &self.effective[f * plane..(f + 1) * plane],
        }
    }

    fn check<T: Real>(&self, t: &Tensor<T>) -> Result<usize> {
        let plane = self.size * self.size;
        let shape = t.shape();
        if shape.len() < 2 {
            return Err(Error::shape("depth weighting", "rank", ">= 2", shape.len()));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h != self.size {
            return Err(Error::shape("depth weighting", "height", self.size, h));
        }
        if w != self.size {
            return Err(Error::shape("depth weighting", "width", self.size, w));
        }
        let frames = t.len() / plane;
        if let Some(f) = self.frames {
            if f != frames {
                return Err(Error::shape("depth weighting", "frames", f, frames));
            }
        }
        Ok(frames)
    }
}

/// Input pixels `I` and reconstruction `O` of identical shape.
#[derive(Clone, Copy, Debug)]
pub struct ReconstructionPair<'a, T> {
    pub input: &'a Tensor<T>,
    pub output: &'a Tensor<T>,
}

impl<'a, T: Real> ReconstructionPair<'a, T> {
    pub fn new(input: &'a Tensor<T>, output: &'a Tensor<T>) -> Result<Self> {
        if input.shape() != output.shape() {
            return Err(Error::shape(
                "reconstruction pair",
                "shape",
                format!("{:?}", input.shape()),
                format!("{:?}", output.shape()),
            ));
        }
        if input.is_empty() {
            return Err(Error::InvalidArgument("empty reconstruction pair".into()));
        }
        input.ensure_finite("reconstruction input")?;
        output.ensure_finite("reconstruction output")?;
        Ok(ReconstructionPair { input, output })
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

pub fn mse_loss<T: Real>(pair: &ReconstructionPair<'_, T>) -> f64 {
    let sum: f64 = pair
        .input
        .data()
        .iter()
        .zip(pair.output.data())
        .map(|(&i, &o)| {
            let d = i.as_f64() - o.as_f64();
            d * d
        })
        .sum();
    sum / pair.len() as f64
}

pub fn mse_backward<T: Real>(pair: &ReconstructionPair<'_, T>) -> Tensor<T> {
    let scale = T::lit(2.0 / pair.len() as f64);
    let data = pair
        .input
        .data()
        .iter()
        .zip(pair.output.data())
        .map(|(&i, &o)| -scale * (i - o))
        .collect();
    Tensor::from_vec(pair.input.shape(), data).expect("pair shape")
}

pub fn depth_weighted_mse<T: Real>(
    pair: &ReconstructionPair<'_, T>,
    weights: &DepthWeights,
) -> Result<f64> {
    let frames = weights.check(pair.input)?;
    let plane = weights.size * weights.size;
    let mut sum = 0.0;
    for f in 0..frames {
        let w = weights.frame_weights(f);
        let range = f * plane..(f + 1) * plane;
        for ((&i, &o), &wz) in pair.input.data()[range.clone()]
            .iter()
            .zip(&pair.output.data()[range])
            .zip(w)
        {
            let d = i.as_f64() - o.as_f64();
            sum += wz * d * d;
        }
    }
    Ok(sum / pair.len() as f64)
}

/// `∂L/∂O = −2·w·(I − O)/N_e`.
pub fn depth_weighted_mse_backward<T: Real>(
    pair: &ReconstructionPair<'_, T>,
    weights: &DepthWeights,
) -> Result<Tensor<T>> {
    let frames = weights.check(pair.input)?;
    let plane = weights.size * weights.size;
    let n = pair.len() as f64;
    let mut grad = Tensor::zeros(pair.input.shape());
    for f in 0..frames {
        let w = weights.frame_weights(f);
        let range = f * plane..(f + 1) * plane;
        for (((g, &i), &o), &wz) in grad.data_mut()[range.clone()]
            .iter_mut()
            .zip(&pair.input.data()[range.clone()])
            .zip(&pair.output.data()[range])
            .zip(w)
        {
            *g = T::lit(-2.0 * wz / n) * (i - o);
        }
    }
    Ok(grad)
}
