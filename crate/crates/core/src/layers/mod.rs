//! The fixed layer set of the autoencoder. Activations are laid out as
//! `[frames, channels, height, width]`: the temporal kernel is always 1, so
//! every frame of a window (and of a batch of windows) is an independent
//! 2-D image and the frame axis doubles as the batch axis.

mod activation;
mod conv;
mod norm;
mod pool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use activation::{relu_backward, relu_forward, sigmoid, sigmoid_backward, sigmoid_forward};
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_param_grads, conv_output_size, deconv2d_backward,
    deconv2d_forward, deconv_output_size, ConvGrads,
};
pub use norm::{BatchNorm, BatchNormCache, BatchNormGrads};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, PoolIndices};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Deconv,
    MaxPool,
    BatchNorm,
    Relu,
    Sigmoid,
}

/// Geometry of one layer. Triples are `(t, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// Extra rows/columns appended by a transposed convolution.
    pub output_padding: [usize; 3],
    pub channels_in: usize,
    pub channels_out: usize,
}

impl LayerSpec {
    /// `(1×3×3)` convolution, stride `(1×1×1)`, padding `(0×1×1)`.
    pub fn conv(channels_in: usize, channels_out: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel: [1, 3, 3],
            stride: [1, 1, 1],
            padding: [0, 1, 1],
            output_padding: [0, 0, 0],
            channels_in,
            channels_out,
        }
    }

    /// `(1×3×3)` transposed convolution with padding `(0×1×1)`. A spatial
    /// stride of 2 gets an output padding of 1 so the layer exactly doubles
    /// its input size.
    pub fn deconv(channels_in: usize, channels_out: usize, stride: usize) -> Self {
        let op = stride.saturating_sub(1);
        LayerSpec {
            kind: LayerKind::Deconv,
            kernel: [1, 3, 3],
            stride: [1, stride, stride],
            padding: [0, 1, 1],
            output_padding: [0, op, op],
            channels_in,
            channels_out,
        }
    }

    pub fn maxpool(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            kernel: [1, 2, 2],
            stride: [1, 2, 2],
            padding: [0, 0, 0],
            output_padding: [0, 0, 0],
            channels_in: channels,
            channels_out: channels,
        }
    }

    fn pointwise(kind: LayerKind, channels: usize) -> Self {
        LayerSpec {
            kind,
            kernel: [1, 1, 1],
            stride: [1, 1, 1],
            padding: [0, 0, 0],
            output_padding: [0, 0, 0],
            channels_in: channels,
            channels_out: channels,
        }
    }

    pub fn batchnorm(channels: usize) -> Self {
        Self::pointwise(LayerKind::BatchNorm, channels)
    }

    pub fn relu(channels: usize) -> Self {
        Self::pointwise(LayerKind::Relu, channels)
    }

    pub fn sigmoid(channels: usize) -> Self {
        Self::pointwise(LayerKind::Sigmoid, channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::InvalidArgument(format!(
                "{:?} layer: {msg}",
                self.kind
            )))
        };
        if self.channels_in == 0 || self.channels_out == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.kernel[0] != 1 || self.stride[0] != 1 || self.padding[0] != 0 {
            return bad("temporal kernel/stride must be 1 with no temporal padding".into());
        }
        for axis in 0..3 {
            if self.kernel[axis] == 0 || self.stride[axis] == 0 {
                return bad(format!("kernel and stride must be positive (axis {axis})"));
            }
            if self.padding[axis] > 0 && self.padding[axis] >= self.kernel[axis] {
                return bad(format!("padding must be smaller than kernel (axis {axis})"));
            }
            if self.output_padding[axis] > 0 && self.output_padding[axis] >= self.stride[axis] {
                return bad(format!(
                    "output padding must be smaller than stride (axis {axis})"
                ));
            }
        }
        if self.kernel[1] != self.kernel[2]
            || self.stride[1] != self.stride[2]
            || self.padding[1] != self.padding[2]
            || self.output_padding[1] != self.output_padding[2]
        {
            return bad("only square spatial geometry is supported".into());
        }
        match self.kind {
            LayerKind::Conv | LayerKind::Deconv => Ok(()),
            LayerKind::MaxPool if self.kernel == [1, 2, 2] && self.stride == [1, 2, 2] => Ok(()),
            LayerKind::MaxPool => bad("max-pooling is fixed at kernel/stride (1×2×2)".into()),
            _ if self.channels_in != self.channels_out => {
                bad("pointwise layers preserve channel count".into())
            }
            _ => Ok(()),
        }
    }

    /// Output spatial size for an input of `size`.
    pub fn output_size(&self, size: usize) -> Result<usize> {
        match self.kind {
            LayerKind::Conv => conv_output_size(size, self),
            LayerKind::Deconv => deconv_output_size(size, self),
            LayerKind::MaxPool => {
                if size % 2 != 0 {
                    Err(Error::shape("maxpool", "spatial", "even size", size))
                } else {
                    Ok(size / 2)
                }
            }
            _ => Ok(size),
        }
    }
}

/// Returns `(frames, channels, height, width)` of a rank-4 activation.
pub(crate) fn dims4(shape: &[usize], context: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(
            context,
            "rank",
            "4 ([frames, channels, height, width])",
            shape.len(),
        )),
    }
}
