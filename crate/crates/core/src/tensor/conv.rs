//! Direct 2-D convolution (cross-correlation) with zero padding, plus the
//! adjoint passes needed for reverse-mode differentiation.
//!
//! The forward pass lowers each batch item to an im2col matrix and runs a
//! matmul; the backward passes reuse the same lowering. Gradients are
//! accumulated in a fixed order so repeated runs are bitwise identical.

use rayon::prelude::*;

use super::matmul::{matmul_nn, matmul_nt, matmul_tn};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Stride and zero-padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        Conv2dSpec { stride, pad }
    }

    /// The common `3x3, stride 1, zero padding 1` configuration.
    pub fn same3x3() -> Self {
        Conv2dSpec { stride: 1, pad: 1 }
    }
}

/// Output extent along one axis: `floor((n + 2*pad - k) / stride) + 1`.
pub fn conv2d_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub(crate) fn check_conv_shapes(
    input: Shape,
    weight: Shape,
    bias: Shape,
    spec: Conv2dSpec,
) -> Result<Shape> {
    if spec.stride == 0 {
        return Err(Error::Config("conv2d stride must be positive".into()));
    }
    if input.channels != weight.channels {
        return Err(Error::Shape(format!(
            "conv2d input channels {} do not match kernel in-channels {}",
            input.channels, weight.channels
        )));
    }
    let expect_bias = Shape::new(1, weight.batch, 1, 1);
    if bias != expect_bias {
        return Err(Error::Shape(format!(
            "conv2d bias shape {bias} does not match {expect_bias}"
        )));
    }
    let oh = conv2d_out_extent(input.height, weight.height, spec.stride, spec.pad);
    let ow = conv2d_out_extent(input.width, weight.width, spec.stride, spec.pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => {
            Ok(Shape::new(input.batch, weight.batch, oh, ow))
        }
        _ => Err(Error::Geometry(format!(
            "conv2d produces an empty output for input {input} with kernel {weight}, {spec:?}"
        ))),
    }
}

/// Gathers the (ic*kh*kw, oh*ow) im2col matrix of one batch item.
fn im2col(
    plane_base: &[f64],
    (ic, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (oh, ow): (usize, usize),
    spec: Conv2dSpec,
    cols: &mut [f64],
) {
    let p = oh * ow;
    debug_assert_eq!(cols.len(), ic * kh * kw * p);
    cols.par_chunks_mut(kh * kw * p)
        .enumerate()
        .for_each(|(c, chunk)| {
            let src = &plane_base[c * h * w..(c + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut chunk[(ky * kw + kx) * p..(ky * kw + kx + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        });
}

/// Scatters an im2col gradient back onto the input plane of one batch item.
fn col2im(
    dcols: &[f64],
    (ic, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (oh, ow): (usize, usize),
    spec: Conv2dSpec,
    dplane: &mut [f64],
) {
    let p = oh * ow;
    debug_assert_eq!(dplane.len(), ic * h * w);
    dplane
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(c, dst)| {
            let chunk = &dcols[c * kh * kw * p..(c + 1) * kh * kw * p];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &chunk[(ky * kw + kx) * p..(ky * kw + kx + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        });
}

pub(crate) fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: Conv2dSpec,
) -> Result<Tensor> {
    let out_shape = check_conv_shapes(input.shape(), weight.shape(), bias.shape(), spec)?;
    let (ish, wsh) = (input.shape(), weight.shape());
    let (ic, h, w) = (ish.channels, ish.height, ish.width);
    let (oc, kh, kw) = (wsh.batch, wsh.height, wsh.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let (kdim, p) = (ic * kh * kw, oh * ow);

    let mut out = vec![0.0; out_shape.numel()];
    let mut cols = vec![0.0; kdim * p];
    for b in 0..ish.batch {
        im2col(
            &input.data()[b * ic * h * w..(b + 1) * ic * h * w],
            (ic, h, w),
            (kh, kw),
            (oh, ow),
            spec,
            &mut cols,
        );
        let prod = matmul_nn(weight.data(), &cols, oc, kdim, p);
        let dst = &mut out[b * oc * p..(b + 1) * oc * p];
        for c in 0..oc {
            let bv = bias.data()[c];
            for (d, s) in dst[c * p..(c + 1) * p].iter_mut().zip(&prod[c * p..(c + 1) * p]) {
                *d = s + bv;
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Gradients of conv2d w.r.t. (input, weight, bias) given the upstream
/// gradient on the output.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: Conv2dSpec,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (ish, wsh, osh) = (input.shape(), weight.shape(), grad_out.shape());
    let (ic, h, w) = (ish.channels, ish.height, ish.width);
    let (oc, kh, kw) = (wsh.batch, wsh.height, wsh.width);
    let (oh, ow) = (osh.height, osh.width);
    let (kdim, p) = (ic * kh * kw, oh * ow);

    let mut dinput = vec![0.0; ish.numel()];
    let mut dweight = vec![0.0; wsh.numel()];
    let mut dbias = vec![0.0; oc];
    let mut cols = vec![0.0; kdim * p];

    for b in 0..ish.batch {
        let gmat = &grad_out.data()[b * oc * p..(b + 1) * oc * p];
        im2col(
            &input.data()[b * ic * h * w..(b + 1) * ic * h * w],
            (ic, h, w),
            (kh, kw),
            (oh, ow),
            spec,
            &mut cols,
        );
        // dW[oc, kdim] += G[oc, p] * cols[kdim, p]^T
        let dw = matmul_nt(gmat, &cols, oc, p, kdim);
        for (acc, v) in dweight.iter_mut().zip(&dw) {
            *acc += v;
        }
        // dcols[kdim, p] = W[oc, kdim]^T * G[oc, p]
        let dcols = matmul_tn(weight.data(), gmat, kdim, oc, p);
        col2im(
            &dcols,
            (ic, h, w),
            (kh, kw),
            (oh, ow),
            spec,
            &mut dinput[b * ic * h * w..(b + 1) * ic * h * w],
        );
        for c in 0..oc {
            let mut s = 0.0;
            for &g in &gmat[c * p..(c + 1) * p] {
                s += g;
            }
            dbias[c] += s;
        }
    }

    (
        Tensor::from_parts(ish, dinput),
        Tensor::from_parts(wsh, dweight),
        Tensor::from_parts(Shape::new(1, oc, 1, 1), dbias),
    )
}
