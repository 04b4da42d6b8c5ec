//! Finite-difference checks of every layer's backward pass and of the full
//! tiny model under the depth-weighted loss.

mod common;

use common::rel_err;
use depcae::layers::*;
use depcae::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &Tensor<f64>, h: f64, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

struct ConvCase {
    spec: LayerSpec,
    x: Tensor<f64>,
    w: Tensor<f64>,
    b: Tensor<f64>,
    r: Tensor<f64>,
}

fn conv_case(deconv: bool, stride: usize) -> ConvCase {
    let (cin, cout, s) = (2, 3, 6);
    let spec = if deconv {
        LayerSpec::deconv(cin, cout, stride)
    } else {
        LayerSpec::conv(cin, cout)
    };
    let x = random(&[2, cin, s, s], -1.0, 1.0, 1);
    let w = if deconv {
        random(&[cin, cout, 3, 3], -0.5, 0.5, 2)
    } else {
        random(&[cout, cin, 3, 3], -0.5, 0.5, 2)
    };
    let b = random(&[cout], -0.2, 0.2, 3);
    let y = if deconv {
        deconv2d_forward(&x, &w, &b, &spec).unwrap()
    } else {
        conv2d_forward(&x, &w, &b, &spec).unwrap()
    };
    let r = random(y.shape(), -1.0, 1.0, 4);
    ConvCase { spec, x, w, b, r }
}

fn check_conv_like(deconv: bool, stride: usize) {
    let c = conv_case(deconv, stride);
    let fwd = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        let y = if deconv {
            deconv2d_forward(x, w, b, &c.spec).unwrap()
        } else {
            conv2d_forward(x, w, b, &c.spec).unwrap()
        };
        dot(&y, &c.r)
    };
    let g = if deconv {
        deconv2d_backward(&c.r, &c.x, &c.w, &c.spec).unwrap()
    } else {
        conv2d_backward(&c.r, &c.x, &c.w, &c.spec).unwrap()
    };
    let h = 1e-5;
    let gx = numeric_grad(&c.x, h, |x| fwd(x, &c.w, &c.b));
    let gw = numeric_grad(&c.w, h, |w| fwd(&c.x, w, &c.b));
    let gb = numeric_grad(&c.b, h, |b| fwd(&c.x, &c.w, b));
    assert!(max_rel(&to_f64(&g.grad_input), &gx) <= 1e-6);
    assert!(max_rel(&to_f64(&g.grad_weight), &gw) <= 1e-6);
    assert!(max_rel(&to_f64(&g.grad_bias), &gb) <= 1e-6);

    // single precision against the double-precision reference
    let r32 = c.r.cast::<f32>();
    let g32 = if deconv {
        deconv2d_backward(&r32, &c.x.cast(), &c.w.cast(), &c.spec).unwrap()
    } else {
        conv2d_backward(&r32, &c.x.cast(), &c.w.cast(), &c.spec).unwrap()
    };
    assert!(max_rel(&to_f64(&g32.grad_input), &gx) <= 1e-3);
    assert!(max_rel(&to_f64(&g32.grad_weight), &gw) <= 1e-3);
    assert!(max_rel(&to_f64(&g32.grad_bias), &gb) <= 1e-3);
}

#[test]
fn conv_gradients_match_finite_differences() {
    check_conv_like(false, 1);
}

#[test]
fn conv_param_grads_match_full_backward() {
    let c = conv_case(false, 1);
    let full = conv2d_backward(&c.r, &c.x, &c.w, &c.spec).unwrap();
    let (gw, gb) = conv2d_param_grads(&c.r, &c.x, &c.w, &c.spec).unwrap();
    assert_eq!(gw, full.grad_weight);
    assert_eq!(gb, full.grad_bias);
}

#[test]
fn deconv_gradients_match_finite_differences() {
    check_conv_like(true, 1);
    check_conv_like(true, 2);
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let x = random(&[3, 2, 4, 4], -2.0, 2.0, 5);
    let mut bn = BatchNorm::<f64>::new(2);
    bn.gamma = random(&[2], 0.5, 1.5, 6);
    bn.beta = random(&[2], -0.5, 0.5, 7);
    let r = random(x.shape(), -1.0, 1.0, 8);
    let (_, cache) = bn.forward_train(&x).unwrap();
    let g = bn.backward(&r, &cache).unwrap();
    let h = 1e-5;
    let gx = numeric_grad(&x, h, |x| dot(&bn.forward_train(x).unwrap().0, &r));
    let gg = numeric_grad(&bn.gamma, h, |gm| {
        let mut b = bn.clone();
        b.gamma = gm.clone();
        dot(&b.forward_train(&x).unwrap().0, &r)
    });
    let gb = numeric_grad(&bn.beta, h, |bt| {
        let mut b = bn.clone();
        b.beta = bt.clone();
        dot(&b.forward_train(&x).unwrap().0, &r)
    });
    assert!(max_rel(&to_f64(&g.grad_input), &gx) <= 1e-6);
    assert!(max_rel(&to_f64(&g.grad_gamma), &gg) <= 1e-6);
    assert!(max_rel(&to_f64(&g.grad_beta), &gb) <= 1e-6);

    let bn32 = BatchNorm::<f32> {
        gamma: bn.gamma.cast(),
        beta: bn.beta.cast(),
        ..BatchNorm::new(2)
    };
    let (_, c32) = bn32.forward_train(&x.cast()).unwrap();
    let g32 = bn32.backward(&r.cast(), &c32).unwrap();
    assert!(max_rel(&to_f64(&g32.grad_input), &gx) <= 1e-3);
    assert!(max_rel(&to_f64(&g32.grad_gamma), &gg) <= 1e-3);
    assert!(max_rel(&to_f64(&g32.grad_beta), &gb) <= 1e-3);
}

#[test]
fn pointwise_and_pool_gradients_match_finite_differences() {
    // keep inputs away from relu's kink and from pooling ties
    let mut x = random(&[2, 2, 4, 4], 0.05, 1.0, 9);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        if i % 3 == 0 {
            *v = -*v;
        }
    }
    let r = random(x.shape(), -1.0, 1.0, 10);
    let h = 1e-6;

    let y = relu_forward(&x);
    let g = relu_backward(&r, &y).unwrap();
    let n = numeric_grad(&x, h, |x| dot(&relu_forward(x), &r));
    assert!(max_rel(&to_f64(&g), &n) <= 1e-6);

    let y = sigmoid_forward(&x);
    let g = sigmoid_backward(&r, &y).unwrap();
    let n = numeric_grad(&x, h, |x| dot(&sigmoid_forward(x), &r));
    assert!(max_rel(&to_f64(&g), &n) <= 1e-6);
    let y32 = sigmoid_forward(&x.cast::<f32>());
    let g32 = sigmoid_backward(&r.cast(), &y32).unwrap();
    assert!(max_rel(&to_f64(&g32), &n) <= 1e-3);

    let (y, idx) = maxpool2x2_forward(&x).unwrap();
    let rp = random(y.shape(), -1.0, 1.0, 11);
    let g = maxpool2x2_backward(&rp, &idx).unwrap();
    let n = numeric_grad(&x, h, |x| dot(&maxpool2x2_forward(x).unwrap().0, &rp));
    assert!(max_rel(&to_f64(&g), &n) <= 1e-6);
}

#[test]
fn full_tiny_model_gradient_matches_finite_differences() {
    let worst = common::tiny_model_gradient_error();
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
}
