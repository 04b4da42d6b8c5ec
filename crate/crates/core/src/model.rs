//! The depth-weighted convolutional autoencoder.
//!
//! Encoder: three `conv(1×3×3) → batchnorm → relu` blocks with a `(1×2×2)`
//! max-pool after the first two. Decoder: three `(1×3×3)` transposed
//! convolutions with strides 1, 2, 2 (batchnorm + relu between them) and a
//! final sigmoid, so a `W×S×S` window is reconstructed at its own shape.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, conv2d_param_grads, deconv2d_backward, deconv2d_forward,
    maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, BatchNorm, BatchNormCache, LayerKind, LayerSpec, PoolIndices,
};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_CHANNEL_PLAN: [usize; 3] = [16, 32, 64];
pub const DEFAULT_WINDOW_FRAMES: usize = 75;
pub const DEFAULT_IMAGE_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv {
        spec: LayerSpec,
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    Deconv {
        spec: LayerSpec,
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    MaxPool(LayerSpec),
    BatchNorm(LayerSpec, BatchNorm<T>),
    Relu(LayerSpec),
    Sigmoid(LayerSpec),
}

impl<T: Real> Layer<T> {
    pub fn spec(&self) -> &LayerSpec {
        match self {
            Layer::Conv { spec, .. } | Layer::Deconv { spec, .. } => spec,
            Layer::MaxPool(s) | Layer::BatchNorm(s, _) | Layer::Relu(s) | Layer::Sigmoid(s) => s,
        }
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Deconv { weight, bias, .. } => {
                vec![("weight", weight), ("bias", bias)]
            }
            Layer::BatchNorm(_, bn) => vec![("gamma", &bn.gamma), ("beta", &bn.beta)],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Deconv { weight, bias, .. } => {
                vec![("weight", weight), ("bias", bias)]
            }
            Layer::BatchNorm(_, bn) => vec![("gamma", &mut bn.gamma), ("beta", &mut bn.beta)],
            _ => Vec::new(),
        }
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm(_, bn) => vec![
                ("running_mean", &bn.running_mean),
                ("running_var", &bn.running_var),
            ],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedLayer<T> {
    pub name: String,
    pub layer: Layer<T>,
}

enum LayerCache<T> {
    Input(Tensor<T>),
    Pool(PoolIndices),
    Norm(BatchNormCache<T>),
    Output(Tensor<T>),
}

/// Activations saved by [`DepCae::forward_train`] for the backward pass.
pub struct ForwardTrace<T> {
    caches: Vec<LayerCache<T>>,
}

impl<T: Real> ForwardTrace<T> {
    /// Hash of every ReLU on/off state and max-pool selection. Two inputs with
    /// equal patterns lie in the same piecewise-smooth region of the network.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for cache in &self.caches {
            match cache {
                LayerCache::Pool(idx) => idx.argmax.hash(&mut h),
                LayerCache::Output(out) => {
                    for v in out.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepCae<T> {
    channel_plan: Vec<usize>,
    window_frames: usize,
    image_size: usize,
    layers: Vec<NamedLayer<T>>,
}

/// Builds the default-shaped model (75 frames of 64×64).
pub fn build_model(channel_plan: &[usize], seed: u64) -> Result<DepCae<f32>> {
    DepCae::new(
        channel_plan,
        DEFAULT_WINDOW_FRAMES,
        DEFAULT_IMAGE_SIZE,
        seed,
    )
}

impl<T: Real> DepCae<T> {
    pub fn new(
        channel_plan: &[usize],
        window_frames: usize,
        image_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let [c1, c2, c3] = match *channel_plan {
            [a, b, c] if a > 0 && b > 0 && c > 0 => [a, b, c],
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "channel plan must be three positive counts, got {channel_plan:?}"
                )))
            }
        };
        if window_frames == 0 {
            return Err(Error::InvalidArgument(
                "window must have at least one frame".into(),
            ));
        }
        if image_size < 4 || image_size % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "image size must be a positive multiple of 4, got {image_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut push = |name: &str, layer: Layer<T>| {
            layers.push(NamedLayer {
                name: name.to_string(),
                layer,
            })
        };
        let enc = [(1, c1), (c1, c2), (c2, c3)];
        for (i, &(cin, cout)) in enc.iter().enumerate() {
            let spec = LayerSpec::conv(cin, cout);
            push(
                &format!("enc{}.conv", i + 1),
                Layer::Conv {
                    spec,
                    weight: kaiming(&[cout, cin, 3, 3], cin * 9, &mut rng),
                    bias: Tensor::zeros(&[cout]),
                },
            );
            push(
                &format!("enc{}.bn", i + 1),
                Layer::BatchNorm(LayerSpec::batchnorm(cout), BatchNorm::new(cout)),
            );
            push(
                &format!("enc{}.relu", i + 1),
                Layer::Relu(LayerSpec::relu(cout)),
            );
            if i < 2 {
                push(
                    &format!("pool{}", i + 1),
                    Layer::MaxPool(LayerSpec::maxpool(cout)),
                );
            }
        }
        let dec = [(c3, c2, 1), (c2, c1, 2), (c1, 1, 2)];
        for (i, &(cin, cout, stride)) in dec.iter().enumerate() {
            let spec = LayerSpec::deconv(cin, cout, stride);
            push(
                &format!("dec{}.deconv", i + 1),
                Layer::Deconv {
                    spec,
                    weight: kaiming(&[cin, cout, 3, 3], cin * 9, &mut rng),
                    bias: Tensor::zeros(&[cout]),
                },
            );
            if i < 2 {
                push(
                    &format!("dec{}.bn", i + 1),
                    Layer::BatchNorm(LayerSpec::batchnorm(cout), BatchNorm::new(cout)),
                );
                push(
                    &format!("dec{}.relu", i + 1),
                    Layer::Relu(LayerSpec::relu(cout)),
                );
            }
        }
        push("out.sigmoid", Layer::Sigmoid(LayerSpec::sigmoid(1)));
        for l in &layers {
            l.layer.spec().validate()?;
        }
        Ok(DepCae {
            channel_plan: channel_plan.to_vec(),
            window_frames,
            image_size,
            layers,
        })
    }

    pub fn channel_plan(&self) -> &[usize] {
        &self.channel_plan
    }

    pub fn window_frames(&self) -> usize {
        self.window_frames
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn layers(&self) -> &[NamedLayer<T>] {
        &self.layers
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        self.specs_until(|n| n.starts_with("enc") || n.starts_with("pool"))
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        self.specs_until(|n| n.starts_with("dec") || n.starts_with("out"))
    }

    fn specs_until(&self, keep: impl Fn(&str) -> bool) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .filter(|l| keep(&l.name))
            .map(|l| *l.layer.spec())
            .collect()
    }

    /// `[channels, frames, height, width]` at the encoder output.
    pub fn bottleneck_shape(&self) -> Result<[usize; 4]> {
        let mut size = self.image_size;
        let mut channels = 1;
        for spec in self.encoder_specs() {
            size = spec.output_size(size)?;
            channels = spec.channels_out;
        }
        Ok([channels, self.window_frames, size, size])
    }

    /// Learnable tensors in a fixed order, with dotted names.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.layer
                    .params()
                    .into_iter()
                    .map(move |(p, t)| (format!("{}.{p}", l.name), t))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let name = l.name.clone();
                l.layer
                    .params_mut()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    /// Parameters followed by batchnorm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.params();
        for l in &self.layers {
            for (b, t) in l.layer.buffers() {
                out.push((format!("{}.{b}", l.name), t));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            let name = l.name.clone();
            let layer = &mut l.layer;
            // params and buffers borrow disjoint fields
            let (ps, bs): (Vec<_>, Vec<_>) = match layer {
                Layer::BatchNorm(_, bn) => (
                    vec![("gamma", &mut bn.gamma), ("beta", &mut bn.beta)],
                    vec![
                        ("running_mean", &mut bn.running_mean),
                        ("running_var", &mut bn.running_var),
                    ],
                ),
                other => (other.params_mut(), Vec::new()),
            };
            out.extend(ps.into_iter().map(|(p, t)| (format!("{name}.{p}"), t)));
            out.extend(bs.into_iter().map(|(p, t)| (format!("{name}.{p}"), t)));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Sets every learnable parameter to zero.
    pub fn zero_parameters(&mut self) {
        for (_, t) in self.params_mut() {
            t.fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> DepCae<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| NamedLayer {
                name: l.name.clone(),
                layer: match &l.layer {
                    Layer::Conv { spec, weight, bias } => Layer::Conv {
                        spec: *spec,
                        weight: weight.cast(),
                        bias: bias.cast(),
                    },
                    Layer::Deconv { spec, weight, bias } => Layer::Deconv {
                        spec: *spec,
                        weight: weight.cast(),
                        bias: bias.cast(),
                    },
                    Layer::MaxPool(s) => Layer::MaxPool(*s),
                    Layer::BatchNorm(s, bn) => Layer::BatchNorm(
                        *s,
                        BatchNorm {
                            gamma: bn.gamma.cast(),
                            beta: bn.beta.cast(),
                            running_mean: bn.running_mean.cast(),
                            running_var: bn.running_var.cast(),
                            eps: bn.eps,
                            momentum: bn.momentum,
                        },
                    ),
                    Layer::Relu(s) => Layer::Relu(*s),
                    Layer::Sigmoid(s) => Layer::Sigmoid(*s),
                },
            })
            .collect();
        DepCae {
            channel_plan: self.channel_plan.clone(),
            window_frames: self.window_frames,
            image_size: self.image_size,
            layers,
        }
    }

    fn check_batch(&self, x: &Tensor<T>) -> Result<()> {
        const CTX: &str = "autoencoder input";
        match *x.shape() {
            [_, 1, h, w] if h == self.image_size && w == self.image_size => {}
            [_, c, _, _] if c != 1 => return Err(Error::shape(CTX, "channels", 1, c)),
            [_, _, h, _] if h != self.image_size => {
                return Err(Error::shape(CTX, "height", self.image_size, h))
            }
            [_, _, _, w] => return Err(Error::shape(CTX, "width", self.image_size, w)),
            _ => return Err(Error::shape(CTX, "rank", 4, x.rank())),
        }
        x.ensure_finite(CTX)
    }

    /// Inference pass over `[frames, 1, S, S]` using running batchnorm statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = match &l.layer {
                Layer::Conv { spec, weight, bias } => conv2d_forward(&h, weight, bias, spec)?,
                Layer::Deconv { spec, weight, bias } => deconv2d_forward(&h, weight, bias, spec)?,
                Layer::MaxPool(_) => maxpool2x2_forward(&h)?.0,
                Layer::BatchNorm(_, bn) => bn.forward_eval(&h)?,
                Layer::Relu(_) => relu_forward(&h),
                Layer::Sigmoid(_) => sigmoid_forward(&h),
            };
        }
        Ok(h)
    }

    /// Training pass: batchnorm uses batch statistics and every layer keeps
    /// what its backward pass needs. Running statistics are not touched; see
    /// [`DepCae::update_running_stats`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        self.check_batch(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            h = match &l.layer {
                Layer::Conv { spec, weight, bias } => {
                    let y = conv2d_forward(&h, weight, bias, spec)?;
                    caches.push(LayerCache::Input(h));
                    y
                }
                Layer::Deconv { spec, weight, bias } => {
                    let y = deconv2d_forward(&h, weight, bias, spec)?;
                    caches.push(LayerCache::Input(h));
                    y
                }
                Layer::MaxPool(_) => {
                    let (y, idx) = maxpool2x2_forward(&h)?;
                    caches.push(LayerCache::Pool(idx));
                    y
                }
                Layer::BatchNorm(_, bn) => {
                    let (y, cache) = bn.forward_train(&h)?;
                    caches.push(LayerCache::Norm(cache));
                    y
                }
                Layer::Relu(_) => {
                    let y = relu_forward(&h);
                    caches.push(LayerCache::Output(y.clone()));
                    y
                }
                Layer::Sigmoid(_) => {
                    let y = sigmoid_forward(&h);
                    caches.push(LayerCache::Output(y.clone()));
                    y
                }
            };
        }
        Ok((h, ForwardTrace { caches }))
    }

    /// Gradients of every parameter, in [`DepCae::params`] order.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "trace does not belong to this model".into(),
            ));
        }
        let mut grads: Vec<Vec<Tensor<T>>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, (l, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            match (&l.layer, cache) {
                // nothing upstream of the first layer needs a gradient
                (Layer::Conv { spec, weight, .. }, LayerCache::Input(x)) if i == 0 => {
                    let (gw, gb) = conv2d_param_grads(&g, x, weight, spec)?;
                    grads.push(vec![gw, gb]);
                }
                (Layer::Conv { spec, weight, .. }, LayerCache::Input(x)) => {
                    let cg = conv2d_backward(&g, x, weight, spec)?;
                    g = cg.grad_input;
                    grads.push(vec![cg.grad_weight, cg.grad_bias]);
                }
                (Layer::Deconv { spec, weight, .. }, LayerCache::Input(x)) => {
                    let cg = deconv2d_backward(&g, x, weight, spec)?;
                    g = cg.grad_input;
                    grads.push(vec![cg.grad_weight, cg.grad_bias]);
                }
                (Layer::MaxPool(_), LayerCache::Pool(idx)) => {
                    g = maxpool2x2_backward(&g, idx)?;
                    grads.push(Vec::new());
                }
                (Layer::BatchNorm(_, bn), LayerCache::Norm(c)) => {
                    let bg = bn.backward(&g, c)?;
                    g = bg.grad_input;
                    grads.push(vec![bg.grad_gamma, bg.grad_beta]);
                }
                (Layer::Relu(_), LayerCache::Output(y)) => {
                    g = relu_backward(&g, y)?;
                    grads.push(Vec::new());
                }
                (Layer::Sigmoid(_), LayerCache::Output(y)) => {
                    g = sigmoid_backward(&g, y)?;
                    grads.push(Vec::new());
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "trace entry does not match layer {}",
                        l.name
                    )))
                }
            }
        }
        grads.reverse();
        Ok(grads.into_iter().flatten().collect())
    }

    pub fn update_running_stats(&mut self, trace: &ForwardTrace<T>) {
        for (l, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (Layer::BatchNorm(_, bn), LayerCache::Norm(c)) = (&mut l.layer, cache) {
                bn.update_running(c);
            }
        }
    }

    /// Reconstructs one `W×S×S` window.
    pub fn reconstruct(&self, window: &Tensor<T>) -> Result<Tensor<T>> {
        const CTX: &str = "reconstruct";
        match *window.shape() {
            [w, h, s] => {
                if w != self.window_frames {
                    return Err(Error::shape(CTX, "frames", self.window_frames, w));
                }
                if h != self.image_size {
                    return Err(Error::shape(CTX, "height", self.image_size, h));
                }
                if s != self.image_size {
                    return Err(Error::shape(CTX, "width", self.image_size, s));
                }
            }
            _ => return Err(Error::shape(CTX, "rank", 3, window.rank())),
        }
        let (w, s) = (self.window_frames, self.image_size);
        let x = window.clone().reshape(&[w, 1, s, s])?;
        self.forward_eval(&x)?.reshape(&[w, s, s])
    }

    /// Replaces one named tensor (parameter or running statistic).
    pub fn set_tensor(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        for (n, t) in self.named_tensors_mut() {
            if n == name {
                if t.shape() != value.shape() {
                    return Err(Error::shape(
                        format!("set_tensor({name})"),
                        "shape",
                        format!("{:?}", t.shape()),
                        format!("{:?}", value.shape()),
                    ));
                }
                *t = value;
                return Ok(());
            }
        }
        Err(Error::InvalidArgument(format!("unknown tensor `{name}`")))
    }

    /// True when every layer kind and geometry matches the architecture invariants.
    pub fn check_architecture(&self) -> Result<()> {
        let enc: Vec<LayerKind> = self.encoder_specs().iter().map(|s| s.kind).collect();
        use LayerKind::*;
        let expected_enc = [
            Conv, BatchNorm, Relu, MaxPool, Conv, BatchNorm, Relu, MaxPool, Conv, BatchNorm, Relu,
        ];
        if enc != expected_enc {
            return Err(Error::InvalidArgument(format!(
                "unexpected encoder {enc:?}"
            )));
        }
        let dec = self.decoder_specs();
        let deconvs: Vec<&LayerSpec> = dec.iter().filter(|s| s.kind == Deconv).collect();
        let strides: Vec<[usize; 3]> = deconvs.iter().map(|s| s.stride).collect();
        if strides != [[1, 1, 1], [1, 2, 2], [1, 2, 2]]
            || deconvs
                .iter()
                .any(|s| s.padding != [0, 1, 1] || s.kernel != [1, 3, 3])
            || dec.last().map(|s| s.kind) != Some(Sigmoid)
        {
            return Err(Error::InvalidArgument("unexpected decoder geometry".into()));
        }
        Ok(())
    }
}

fn kaiming<T: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}
