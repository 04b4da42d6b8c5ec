use rayon::prelude::*;

use super::dims4;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-channel batch normalization over the frame and spatial axes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Saved activations of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Unbiased batch variance, used for the running estimate.
    pub batch_var_unbiased: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, input: &Tensor<T>, context: &str) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = dims4(input.shape(), context)?;
        if c != self.channels() {
            return Err(Error::shape(context, "channels", self.channels(), c));
        }
        Ok((n, c, h * w))
    }

    /// Normalizes with the statistics of this batch.
    pub fn forward_train(&self, input: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (n, c, plane) = self.check(input, "batchnorm_forward")?;
        let count = n * plane;
        if count < 2 {
            return Err(Error::InvalidArgument(
                "batchnorm needs at least two values per channel".into(),
            ));
        }
        let x = input.data();
        let stats: Vec<(f64, f64)> = (0..c)
            .into_par_iter()
            .map(|ch| {
                let mut sum = 0.0;
                for ni in 0..n {
                    sum += x[(ni * c + ch) * plane..(ni * c + ch + 1) * plane]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut ss = 0.0;
                for ni in 0..n {
                    ss += x[(ni * c + ch) * plane..(ni * c + ch + 1) * plane]
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                (mean, ss / count as f64)
            })
            .collect();
        let mean: Vec<T> = stats.iter().map(|s| T::lit(s.0)).collect();
        let inv_std: Vec<T> = stats
            .iter()
            .map(|s| T::lit(1.0 / (s.1 + self.eps).sqrt()))
            .collect();
        let unbiased: Vec<T> = stats
            .iter()
            .map(|s| T::lit(s.1 * count as f64 / (count - 1) as f64))
            .collect();

        let mut normalized = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        normalized
            .data_mut()
            .par_chunks_mut(plane)
            .zip(out.data_mut().par_chunks_mut(plane))
            .zip(x.par_chunks(plane))
            .enumerate()
            .for_each(|(i, ((xh, y), src))| {
                let ch = i % c;
                let (m, s) = (mean[ch], inv_std[ch]);
                let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                for ((xh, y), &v) in xh.iter_mut().zip(y.iter_mut()).zip(src) {
                    *xh = (v - m) * s;
                    *y = g * *xh + b;
                }
            });
        Ok((
            out,
            BatchNormCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var_unbiased: unbiased,
            },
        ))
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, plane) = self.check(input, "batchnorm_forward")?;
        let eps = T::lit(self.eps);
        let scale: Vec<T> = (0..c)
            .map(|ch| self.gamma.data()[ch] / (self.running_var.data()[ch] + eps).sqrt())
            .collect();
        let shift: Vec<T> = (0..c)
            .map(|ch| self.beta.data()[ch] - self.running_mean.data()[ch] * scale[ch])
            .collect();
        let mut out = input.clone();
        out.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(i, y)| {
                let ch = i % c;
                y.iter_mut().for_each(|v| *v = *v * scale[ch] + shift[ch]);
            });
        Ok(out)
    }

    pub fn backward(
        &self,
        grad_out: &Tensor<T>,
        cache: &BatchNormCache<T>,
    ) -> Result<BatchNormGrads<T>> {
        if grad_out.shape() != cache.normalized.shape() {
            return Err(Error::shape(
                "batchnorm_backward",
                "grad_out",
                format!("{:?}", cache.normalized.shape()),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let (n, c, plane) = self.check(grad_out, "batchnorm_backward")?;
        let count = (n * plane) as f64;
        let g = grad_out.data();
        let xh = cache.normalized.data();
        // Σ dy and Σ dy·x̂ per channel
        let sums: Vec<(f64, f64)> = (0..c)
            .into_par_iter()
            .map(|ch| {
                let (mut sg, mut sgx) = (0.0, 0.0);
                for ni in 0..n {
                    let r = (ni * c + ch) * plane..(ni * c + ch + 1) * plane;
                    for (&gv, &xv) in g[r.clone()].iter().zip(&xh[r]) {
                        sg += gv.as_f64();
                        sgx += gv.as_f64() * xv.as_f64();
                    }
                }
                (sg, sgx)
            })
            .collect();
        let mut grad_input = Tensor::zeros(grad_out.shape());
        grad_input
            .data_mut()
            .par_chunks_mut(plane)
            .zip(g.par_chunks(plane))
            .zip(xh.par_chunks(plane))
            .enumerate()
            .for_each(|(i, ((dx, gv), xv))| {
                let ch = i % c;
                let k = self.gamma.data()[ch] * cache.inv_std[ch];
                let mg = T::lit(sums[ch].0 / count);
                let mgx = T::lit(sums[ch].1 / count);
                for ((d, &gg), &xx) in dx.iter_mut().zip(gv).zip(xv) {
                    *d = k * (gg - mg - xx * mgx);
                }
            });
        Ok(BatchNormGrads {
            grad_input,
            grad_gamma: Tensor::from_vec(&[c], sums.iter().map(|s| T::lit(s.1)).collect())?,
            grad_beta: Tensor::from_vec(&[c], sums.iter().map(|s| T::lit(s.0)).collect())?,
        })
    }

    /// Folds a training batch's statistics into the running estimates.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = keep * *rm + m * cache.batch_mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = keep * *rv + m * cache.batch_var_unbiased[ch];
        }
    }
}
