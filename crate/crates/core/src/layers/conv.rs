//! 2-D convolution and transposed convolution via im2col + GEMM.

use rayon::prelude::*;

use super::{dims4, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

/// Images per gradient partial sum. Fixed so that the reduction order, and
/// therefore every bit of the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

pub fn conv_output_size(size: usize, spec: &LayerSpec) -> Result<usize> {
    let (k, s, p) = (spec.kernel[1], spec.stride[1], spec.padding[1]);
    if size + 2 * p < k {
        return Err(Error::shape(
            "conv2d",
            "spatial",
            format!(">= {}", k.saturating_sub(2 * p)),
            size,
        ));
    }
    Ok((size + 2 * p - k) / s + 1)
}

pub fn deconv_output_size(size: usize, spec: &LayerSpec) -> Result<usize> {
    let (k, s, p, op) = (
        spec.kernel[1],
        spec.stride[1],
        spec.padding[1],
        spec.output_padding[1],
    );
    let out = (size as isize - 1) * s as isize - 2 * p as isize + k as isize + op as isize;
    if size == 0 || out <= 0 {
        return Err(Error::shape("deconv2d", "spatial", "positive output", out));
    }
    Ok(out as usize)
}

/// Gathers `src` (`c × h × w`) into `col` (`c·k·k × oh·ow`): row
/// `(ci, ky, kx)`, column `(oy, ox)` holds `src[ci, oy·s+ky−p, ox·s+kx−p]`
/// or zero outside the image.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let plane = oh * ow;
    for ci in 0..c {
        let src_c = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * plane;
                let (lo, hi) = valid_range(w, ow, kx, s, p);
                for oy in 0..oh {
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &src_c[iy as usize * w..(iy as usize + 1) * w];
                    dst[..lo].fill(T::zero());
                    dst[hi.max(lo)..].fill(T::zero());
                    if s == 1 {
                        let ix0 = lo + kx - p;
                        if hi > lo {
                            dst[lo..hi].copy_from_slice(&src_row[ix0..ix0 + (hi - lo)]);
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox] = src_row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `col` back into `dst` (`c × h × w`).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
    dst: &mut [T],
) {
    let plane = oh * ow;
    for ci in 0..c {
        let dst_c = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * plane;
                let (lo, hi) = valid_range(w, ow, kx, s, p);
                if hi <= lo {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[row + oy * ow..row + (oy + 1) * ow];
                    let dst_row = &mut dst_c[iy as usize * w..(iy as usize + 1) * w];
                    if s == 1 {
                        let ix0 = lo + kx - p;
                        for (d, &v) in dst_row[ix0..ix0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d = *d + v;
                        }
                    } else {
                        for ox in lo..hi {
                            let ix = ox * s + kx - p;
                            dst_row[ix] = dst_row[ix] + src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Range of output columns `ox` whose source column `ox·s + kx − p` lies in `[0, w)`.
fn valid_range(w: usize, ow: usize, kx: usize, s: usize, p: usize) -> (usize, usize) {
    // ox·s + kx >= p  and  ox·s + kx - p <= w - 1
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    let hi = if w + p > kx {
        ((w + p - kx - 1) / s + 1).min(ow)
    } else {
        0
    };
    (lo.min(ow), hi)
}

fn check_params<T: Real>(
    context: &str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &LayerSpec,
    weight_shape: [usize; 4],
) -> Result<(usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, w) = dims4(input.shape(), context)?;
    if c != spec.channels_in {
        return Err(Error::shape(context, "channels", spec.channels_in, c));
    }
    if h != w {
        return Err(Error::shape(context, "width", h, w));
    }
    if weight.shape() != weight_shape {
        return Err(Error::shape(
            context,
            "weight",
            format!("{weight_shape:?}"),
            format!("{:?}", weight.shape()),
        ));
    }
    if bias.shape() != [spec.channels_out] {
        return Err(Error::shape(
            context,
            "bias",
            format!("[{}]", spec.channels_out),
            format!("{:?}", bias.shape()),
        ));
    }
    Ok((n, c, h, w))
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (o, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[o];
        chunk.iter_mut().for_each(|x| *x = *x + b);
    }
}

fn sum_rows<T: Real>(g: &[T], plane: usize, acc: &mut [T]) {
    for (o, chunk) in g.chunks(plane).enumerate() {
        acc[o] = acc[o] + chunk.iter().copied().sum::<T>();
    }
}

fn reduce_partials<T: Real>(
    partials: Vec<(Vec<T>, Vec<T>)>,
    wlen: usize,
    blen: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); wlen];
    let mut gb = vec![T::zero(); blen];
    for (pw, pb) in partials {
        gw.iter_mut().zip(&pw).for_each(|(a, &b)| *a = *a + b);
        gb.iter_mut().zip(&pb).for_each(|(a, &b)| *a = *a + b);
    }
    (gw, gb)
}

/// Convolution of `[N, C_in, S, S]` with weights `[C_out, C_in, k, k]`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &LayerSpec,
) -> Result<Tensor<T>> {
    const CTX: &str = "conv2d_forward";
    if spec.kind != LayerKind::Conv {
        return Err(Error::InvalidArgument(format!(
            "{CTX}: spec kind {:?}",
            spec.kind
        )));
    }
    let k = spec.kernel[1];
    let (n, cin, h, w) = check_params(
        CTX,
        input,
        weight,
        bias,
        spec,
        [spec.channels_out, spec.channels_in, k, k],
    )?;
    input.ensure_finite(CTX)?;
    let (s, p, cout) = (spec.stride[1], spec.padding[1], spec.channels_out);
    let oh = conv_output_size(h, spec)?;
    let ow = conv_output_size(w, spec)?;
    let kk = cin * k * k;
    let (in_sz, out_sz) = (cin * h * w, cout * oh * ow);
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    out.data_mut()
        .par_chunks_mut(out_sz)
        .zip(input.data().par_chunks(in_sz))
        .for_each_init(
            || vec![T::zero(); kk * oh * ow],
            |col, (dst, src)| {
                im2col(src, cin, h, w, k, s, p, oh, ow, col);
                matmul(
                    weight.data(),
                    false,
                    col,
                    false,
                    dst,
                    cout,
                    kk,
                    oh * ow,
                    T::zero(),
                );
                add_bias(dst, bias.data(), oh * ow);
            },
        );
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &LayerSpec,
) -> Result<ConvGrads<T>> {
    let (gi, grad_weight, grad_bias) = conv2d_backward_impl(grad_out, input, weight, spec, true)?;
    Ok(ConvGrads {
        grad_input: gi.expect("requested"),
        grad_weight,
        grad_bias,
    })
}

/// Weight and bias gradients only, for a layer whose input needs no gradient.
pub fn conv2d_param_grads<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &LayerSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, gw, gb) = conv2d_backward_impl(grad_out, input, weight, spec, false)?;
    Ok((gw, gb))
}

#[allow(clippy::type_complexity)]
fn conv2d_backward_impl<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &LayerSpec,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    const CTX: &str = "conv2d_backward";
    let k = spec.kernel[1];
    let bias_shape = Tensor::zeros(&[spec.channels_out]);
    let (n, cin, h, w) = check_params(
        CTX,
        input,
        weight,
        &bias_shape,
        spec,
        [spec.channels_out, spec.channels_in, k, k],
    )?;
    let (s, p, cout) = (spec.stride[1], spec.padding[1], spec.channels_out);
    let oh = conv_output_size(h, spec)?;
    let ow = conv_output_size(w, spec)?;
    let expected = [n, cout, oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            CTX,
            "grad_out",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let kk = cin * k * k;
    let plane = oh * ow;
    let (in_sz, out_sz) = (cin * h * w, cout * plane);
    let mut grad_input = need_input.then(|| Tensor::zeros(input.shape()));
    let gin_chunks: Vec<Option<&mut [T]>> = match grad_input.as_mut() {
        Some(t) => t
            .data_mut()
            .chunks_mut(GRAD_CHUNK * in_sz)
            .map(Some)
            .collect(),
        None => (0..n.div_ceil(GRAD_CHUNK)).map(|_| None).collect(),
    };
    let partials: Vec<(Vec<T>, Vec<T>)> = gin_chunks
        .into_par_iter()
        .zip(input.data().par_chunks(GRAD_CHUNK * in_sz))
        .zip(grad_out.data().par_chunks(GRAD_CHUNK * out_sz))
        .map(|((mut gin, src), g)| {
            let mut gw = vec![T::zero(); cout * kk];
            let mut gb = vec![T::zero(); cout];
            let mut col = vec![T::zero(); kk * plane];
            let mut gcol = if need_input {
                vec![T::zero(); kk * plane]
            } else {
                Vec::new()
            };
            for (i, (src_i, g_i)) in src.chunks(in_sz).zip(g.chunks(out_sz)).enumerate() {
                im2col(src_i, cin, h, w, k, s, p, oh, ow, &mut col);
                matmul(g_i, false, &col, true, &mut gw, cout, plane, kk, T::one());
                if let Some(gin) = gin.as_deref_mut() {
                    matmul(
                        weight.data(),
                        true,
                        g_i,
                        false,
                        &mut gcol,
                        kk,
                        cout,
                        plane,
                        T::zero(),
                    );
                    col2im(
                        &gcol,
                        cin,
                        h,
                        w,
                        k,
                        s,
                        p,
                        oh,
                        ow,
                        &mut gin[i * in_sz..(i + 1) * in_sz],
                    );
                }
                sum_rows(g_i, plane, &mut gb);
            }
            (gw, gb)
        })
        .collect();
    let (gw, gb) = reduce_partials(partials, cout * kk, cout);
    Ok((
        grad_input,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[cout], gb)?,
    ))
}

/// Transposed convolution of `[N, C_in, S, S]` with weights `[C_in, C_out, k, k]`.
pub fn deconv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &LayerSpec,
) -> Result<Tensor<T>> {
    const CTX: &str = "deconv2d_forward";
    if spec.kind != LayerKind::Deconv {
        return Err(Error::InvalidArgument(format!(
            "{CTX}: spec kind {:?}",
            spec.kind
        )));
    }
    let k = spec.kernel[1];
    let (n, cin, h, w) = check_params(
        CTX,
        input,
        weight,
        bias,
        spec,
        [spec.channels_in, spec.channels_out, k, k],
    )?;
    input.ensure_finite(CTX)?;
    let (s, p, cout) = (spec.stride[1], spec.padding[1], spec.channels_out);
    let oh = deconv_output_size(h, spec)?;
    let ow = deconv_output_size(w, spec)?;
    let kk = cout * k * k;
    let (in_sz, out_sz) = (cin * h * w, cout * oh * ow);
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    out.data_mut()
        .par_chunks_mut(out_sz)
        .zip(input.data().par_chunks(in_sz))
        .for_each_init(
            || vec![T::zero(); kk * h * w],
            |col, (dst, src)| {
                matmul(
                    weight.data(),
                    true,
                    src,
                    false,
                    col,
                    kk,
                    cin,
                    h * w,
                    T::zero(),
                );
                col2im(col, cout, oh, ow, k, s, p, h, w, dst);
                add_bias(dst, bias.data(), oh * ow);
            },
        );
    Ok(out)
}

pub fn deconv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &LayerSpec,
) -> Result<ConvGrads<T>> {
    const CTX: &str = "deconv2d_backward";
    let k = spec.kernel[1];
    let bias_shape = Tensor::zeros(&[spec.channels_out]);
    let (n, cin, h, w) = check_params(
        CTX,
        input,
        weight,
        &bias_shape,
        spec,
        [spec.channels_in, spec.channels_out, k, k],
    )?;
    let (s, p, cout) = (spec.stride[1], spec.padding[1], spec.channels_out);
    let oh = deconv_output_size(h, spec)?;
    let ow = deconv_output_size(w, spec)?;
    let expected = [n, cout, oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            CTX,
            "grad_out",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let kk = cout * k * k;
    let plane = h * w;
    let (in_sz, out_sz) = (cin * plane, cout * oh * ow);
    let mut grad_input = Tensor::zeros(input.shape());
    let partials: Vec<(Vec<T>, Vec<T>)> = grad_input
        .data_mut()
        .par_chunks_mut(GRAD_CHUNK * in_sz)
        .zip(input.data().par_chunks(GRAD_CHUNK * in_sz))
        .zip(grad_out.data().par_chunks(GRAD_CHUNK * out_sz))
        .map(|((gin, src), g)| {
            let mut gw = vec![T::zero(); cin * kk];
            let mut gb = vec![T::zero(); cout];
            let mut gcol = vec![T::zero(); kk * plane];
            for ((gin_i, src_i), g_i) in gin
                .chunks_mut(in_sz)
                .zip(src.chunks(in_sz))
                .zip(g.chunks(out_sz))
            {
                im2col(g_i, cout, oh, ow, k, s, p, h, w, &mut gcol);
                matmul(
                    weight.data(),
                    false,
                    &gcol,
                    false,
                    gin_i,
                    cin,
                    kk,
                    plane,
                    T::zero(),
                );
                matmul(src_i, false, &gcol, true, &mut gw, cin, plane, kk, T::one());
                sum_rows(g_i, oh * ow, &mut gb);
            }
            (gw, gb)
        })
        .collect();
    let (gw, gb) = reduce_partials(partials, cin * kk, cout);
    Ok(ConvGrads {
        grad_input,
        grad_weight: Tensor::from_vec(weight.shape(), gw)?,
        grad_bias: Tensor::from_vec(&[cout], gb)?,
    })
}
