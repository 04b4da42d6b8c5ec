use rayon::prelude::*;

use super::dims4;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Position (0..4, row-major within the 2×2 cell) of each pooled maximum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<u8>,
}

/// 2×2 max-pooling with stride 2. Ties resolve to the first position.
pub fn maxpool2x2_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (n, c, h, w) = dims4(input.shape(), "maxpool2x2_forward")?;
    if h % 2 != 0 {
        return Err(Error::shape("maxpool2x2_forward", "height", "even size", h));
    }
    if w % 2 != 0 {
        return Err(Error::shape("maxpool2x2_forward", "width", "even size", w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u8; n * c * oh * ow];
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .zip(input.data().par_chunks(h * w))
        .for_each(|((dst, idx), src)| {
            for y in 0..oh {
                for x in 0..ow {
                    let base = 2 * y * w + 2 * x;
                    let cands = [src[base], src[base + 1], src[base + w], src[base + w + 1]];
                    let mut best = 0;
                    for (i, &v) in cands.iter().enumerate().skip(1) {
                        if v > cands[best] {
                            best = i;
                        }
                    }
                    dst[y * ow + x] = cands[best];
                    idx[y * ow + x] = best as u8;
                }
            }
        });
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward<T: Real>(
    grad_out: &Tensor<T>,
    indices: &PoolIndices,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(&indices.input_shape, "maxpool2x2_backward")?;
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::shape(
            "maxpool2x2_backward",
            "grad_out",
            format!("{:?}", [n, c, oh, ow]),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_in = Tensor::zeros(&indices.input_shape);
    grad_in
        .data_mut()
        .par_chunks_mut(h * w)
        .zip(grad_out.data().par_chunks(oh * ow))
        .zip(indices.argmax.par_chunks(oh * ow))
        .for_each(|((dst, g), idx)| {
            for y in 0..oh {
                for x in 0..ow {
                    let i = idx[y * ow + x] as usize;
                    dst[(2 * y + i / 2) * w + 2 * x + i % 2] = g[y * ow + x];
                }
            }
        });
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_the_maximum() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
        let g = maxpool2x2_backward(&Tensor::from_vec(&[1, 1, 1, 1], vec![2.5]).unwrap(), &idx)
            .unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn halves_spatial_dims_and_rejects_odd() {
        let x = Tensor::<f32>::zeros(&[3, 2, 8, 8]);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2, 4, 4]);
        let odd = Tensor::<f32>::zeros(&[1, 1, 5, 4]);
        assert!(matches!(
            maxpool2x2_forward(&odd),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
