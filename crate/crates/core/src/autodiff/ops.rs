//! Forward and backward numeric kernels for the tape.
//!
//! Convolutions are direct cross-correlations over reflection-padded input.
//! Parallel loops split only over independent output slices (output channel
//! for forward/kernel-grad, input channel for input-grad), so every element
//! keeps a fixed reduction order and results are bit-identical regardless of
//! thread count.

use rayon::prelude::*;

use crate::array::NdArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Linear,
}

/// Folds an out-of-range coordinate back into [0, n) by mirror reflection
/// about the border samples. A single-sample extent maps everything to 0.
fn reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn out_extent(n: usize, pad: usize, k: usize, stride: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

// ---------------------------------------------------------------------------
// Reflection padding
// ---------------------------------------------------------------------------

/// Pads the two trailing (spatial) dims of a rank-3 [C,H,W] array.
pub fn reflect_pad2(x: &NdArray, ph: usize, pw: usize) -> NdArray {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let mut out = NdArray::zeros(&[c, hp, wp]);
    let xd = x.data();
    let od = out.data_mut();
    for ci in 0..c {
        for yp in 0..hp {
            let ys = reflect(yp as isize - ph as isize, h);
            let src = &xd[(ci * h + ys) * w..(ci * h + ys) * w + w];
            let dst = &mut od[(ci * hp + yp) * wp..(ci * hp + yp) * wp + wp];
            for (xp_i, d) in dst.iter_mut().enumerate() {
                *d = src[reflect(xp_i as isize - pw as isize, w)];
            }
        }
    }
    out
}

/// Adjoint of [`reflect_pad2`]: folds padded-gradient entries back onto
/// their source coordinates.
pub fn reflect_pad2_backward(gp: &NdArray, h: usize, w: usize, ph: usize, pw: usize) -> NdArray {
    let (c, hp, wp) = (gp.shape()[0], gp.shape()[1], gp.shape()[2]);
    let mut out = NdArray::zeros(&[c, h, w]);
    let gd = gp.data();
    let od = out.data_mut();
    for ci in 0..c {
        for yp in 0..hp {
            let ys = reflect(yp as isize - ph as isize, h);
            for xp_i in 0..wp {
                let xs = reflect(xp_i as isize - pw as isize, w);
                od[(ci * h + ys) * w + xs] += gd[(ci * hp + yp) * wp + xp_i];
            }
        }
    }
    out
}

/// Pads the three trailing dims of a rank-4 [M,D,H,W] array.
pub fn reflect_pad3(x: &NdArray, pd: usize, ph: usize, pw: usize) -> NdArray {
    let (m, d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (dp, hp, wp) = (d + 2 * pd, h + 2 * ph, w + 2 * pw);
    let mut out = NdArray::zeros(&[m, dp, hp, wp]);
    let xd = x.data();
    let od = out.data_mut();
    for mi in 0..m {
        for zp in 0..dp {
            let zs = reflect(zp as isize - pd as isize, d);
            for yp in 0..hp {
                let ys = reflect(yp as isize - ph as isize, h);
                let src = &xd[((mi * d + zs) * h + ys) * w..((mi * d + zs) * h + ys) * w + w];
                let base = ((mi * dp + zp) * hp + yp) * wp;
                for xp_i in 0..wp {
                    od[base + xp_i] = src[reflect(xp_i as isize - pw as isize, w)];
                }
            }
        }
    }
    out
}

pub fn reflect_pad3_backward(
    gp: &NdArray,
    d: usize,
    h: usize,
    w: usize,
    pd: usize,
    ph: usize,
    pw: usize,
) -> NdArray {
    let (m, dp, hp, wp) = (gp.shape()[0], gp.shape()[1], gp.shape()[2], gp.shape()[3]);
    let mut out = NdArray::zeros(&[m, d, h, w]);
    let gd = gp.data();
    let od = out.data_mut();
    for mi in 0..m {
        for zp in 0..dp {
            let zs = reflect(zp as isize - pd as isize, d);
            for yp in 0..hp {
                let ys = reflect(yp as isize - ph as isize, h);
                let base = ((mi * dp + zp) * hp + yp) * wp;
                for xp_i in 0..wp {
                    let xs = reflect(xp_i as isize - pw as isize, w);
                    od[((mi * d + zs) * h + ys) * w + xs] += gd[base + xp_i];
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// 2D convolution (rank-3 input [C,H,W], kernel [CO,CI,KH,KW])
// ---------------------------------------------------------------------------

fn check_conv2d(x: &NdArray, k: &NdArray, bias: &NdArray, pad: usize) -> Result<()> {
    if x.rank() != 3 {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "input rank",
            expected: 3,
            got: x.rank(),
        });
    }
    if k.rank() != 4 {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "kernel rank",
            expected: 4,
            got: k.rank(),
        });
    }
    if k.shape()[1] != x.shape()[0] {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: k.shape()[1],
            got: x.shape()[0],
        });
    }
    if k.shape()[2] > x.shape()[1] + 2 * pad {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "kernel height vs padded input",
            expected: x.shape()[1] + 2 * pad,
            got: k.shape()[2],
        });
    }
    if k.shape()[3] > x.shape()[2] + 2 * pad {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "kernel width vs padded input",
            expected: x.shape()[2] + 2 * pad,
            got: k.shape()[3],
        });
    }
    if bias.numel() != k.shape()[0] {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "bias length",
            expected: k.shape()[0],
            got: bias.numel(),
        });
    }
    Ok(())
}

/// Strided cross-correlation over reflection-padded input.
pub fn conv2d(
    x: &NdArray,
    k: &NdArray,
    bias: &NdArray,
    stride: usize,
    pad: usize,
) -> Result<NdArray> {
    check_conv2d(x, k, bias, pad)?;
    let xp = reflect_pad2(x, pad, pad);
    let (ci_n, hp, wp) = (xp.shape()[0], xp.shape()[1], xp.shape()[2]);
    let (co_n, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = out_extent(x.shape()[1], pad, kh, stride);
    let ow = out_extent(x.shape()[2], pad, kw, stride);

    let xd = xp.data();
    let kd = k.data();
    let bd = bias.data();
    let mut out = NdArray::zeros(&[co_n, oh, ow]);
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(co, oc)| {
            oc.fill(bd[co]);
            for ci in 0..ci_n {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let kv = kd[((co * ci_n + ci) * kh + ki) * kw + kj];
                        for oy in 0..oh {
                            let xrow = (ci * hp + oy * stride + ki) * wp + kj;
                            let orow = &mut oc[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let src = &xd[xrow..xrow + ow];
                                for (o, s) in orow.iter_mut().zip(src) {
                                    *o += kv * s;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += kv * xd[xrow + ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d`] w.r.t. input, kernel, and bias.
pub fn conv2d_backward(
    x: &NdArray,
    k: &NdArray,
    stride: usize,
    pad: usize,
    g: &NdArray,
) -> (NdArray, NdArray, NdArray) {
    let xp = reflect_pad2(x, pad, pad);
    let (ci_n, hp, wp) = (xp.shape()[0], xp.shape()[1], xp.shape()[2]);
    let (co_n, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let xd = xp.data();
    let kd = k.data();
    let gd = g.data();

    let mut dbias = NdArray::zeros(&[co_n]);
    for co in 0..co_n {
        dbias.data_mut()[co] = gd[co * oh * ow..(co + 1) * oh * ow].iter().sum();
    }

    let mut dk = NdArray::zeros(k.shape());
    dk.data_mut()
        .par_chunks_mut(ci_n * kh * kw)
        .enumerate()
        .for_each(|(co, dkc)| {
            for ci in 0..ci_n {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let grow = &gd[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                            let xrow = (ci * hp + oy * stride + ki) * wp + kj;
                            if stride == 1 {
                                let src = &xd[xrow..xrow + ow];
                                for (gv, s) in grow.iter().zip(src) {
                                    acc += gv * s;
                                }
                            } else {
                                for (ox, gv) in grow.iter().enumerate() {
                                    acc += gv * xd[xrow + ox * stride];
                                }
                            }
                        }
                        dkc[(ci * kh + ki) * kw + kj] = acc;
                    }
                }
            }
        });

    let mut dxp = NdArray::zeros(xp.shape());
    dxp.data_mut()
        .par_chunks_mut(hp * wp)
        .enumerate()
        .for_each(|(ci, dc)| {
            for co in 0..co_n {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let kv = kd[((co * ci_n + ci) * kh + ki) * kw + kj];
                        for oy in 0..oh {
                            let grow = &gd[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                            let drow = (oy * stride + ki) * wp + kj;
                            if stride == 1 {
                                let dst = &mut dc[drow..drow + ow];
                                for (d, gv) in dst.iter_mut().zip(grow) {
                                    *d += kv * gv;
                                }
                            } else {
                                for (ox, gv) in grow.iter().enumerate() {
                                    dc[drow + ox * stride] += kv * gv;
                                }
                            }
                        }
                    }
                }
            }
        });

    let dx = reflect_pad2_backward(&dxp, x.shape()[1], x.shape()[2], pad, pad);
    (dx, dk, dbias)
}

// ---------------------------------------------------------------------------
// 3D convolution (rank-4 input [M,D,H,W], kernel [MO,MI,KD,KH,KW])
// ---------------------------------------------------------------------------

fn check_conv3d(x: &NdArray, k: &NdArray, bias: &NdArray, pad: [usize; 3]) -> Result<()> {
    if x.rank() != 4 {
        return Err(Error::DimMismatch {
            op: "conv3d",
            dim: "input rank",
            expected: 4,
            got: x.rank(),
        });
    }
    if k.rank() != 5 {
        return Err(Error::DimMismatch {
            op: "conv3d",
            dim: "kernel rank",
            expected: 5,
            got: k.rank(),
        });
    }
    if k.shape()[1] != x.shape()[0] {
        return Err(Error::DimMismatch {
            op: "conv3d",
            dim: "input volumes",
            expected: k.shape()[1],
            got: x.shape()[0],
        });
    }
    let dims = ["kernel depth", "kernel height", "kernel width"];
    for a in 0..3 {
        if k.shape()[2 + a] > x.shape()[1 + a] + 2 * pad[a] {
            return Err(Error::DimMismatch {
                op: "conv3d",
                dim: dims[a],
                expected: x.shape()[1 + a] + 2 * pad[a],
                got: k.shape()[2 + a],
            });
        }
    }
    if bias.numel() != k.shape()[0] {
        return Err(Error::DimMismatch {
            op: "conv3d",
            dim: "bias length",
            expected: k.shape()[0],
            got: bias.numel(),
        });
    }
    Ok(())
}

/// Strided volumetric cross-correlation over reflection-padded input.
pub fn conv3d(
    x: &NdArray,
    k: &NdArray,
    bias: &NdArray,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<NdArray> {
    check_conv3d(x, k, bias, pad)?;
    let xp = reflect_pad3(x, pad[0], pad[1], pad[2]);
    let (mi_n, dp, hp, wp) = (xp.shape()[0], xp.shape()[1], xp.shape()[2], xp.shape()[3]);
    let (mo_n, kd_e, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3], k.shape()[4]);
    let od = out_extent(x.shape()[1], pad[0], kd_e, stride[0]);
    let oh = out_extent(x.shape()[2], pad[1], kh, stride[1]);
    let ow = out_extent(x.shape()[3], pad[2], kw, stride[2]);

    let xd = xp.data();
    let kd = k.data();
    let bd = bias.data();
    let mut out = NdArray::zeros(&[mo_n, od, oh, ow]);
    out.data_mut()
        .par_chunks_mut(od * oh * ow)
        .enumerate()
        .for_each(|(mo, oc)| {
            oc.fill(bd[mo]);
            for mi in 0..mi_n {
                for kz in 0..kd_e {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let kv =
                                kd[(((mo * mi_n + mi) * kd_e + kz) * kh + ki) * kw + kj];
                            for oz in 0..od {
                                for oy in 0..oh {
                                    let xrow = ((mi * dp + oz * stride[0] + kz) * hp
                                        + oy * stride[1]
                                        + ki)
                                        * wp
                                        + kj;
                                    let obase = (oz * oh + oy) * ow;
                                    let orow = &mut oc[obase..obase + ow];
                                    if stride[2] == 1 {
                                        let src = &xd[xrow..xrow + ow];
                                        for (o, s) in orow.iter_mut().zip(src) {
                                            *o += kv * s;
                                        }
                                    } else {
                                        for (ox, o) in orow.iter_mut().enumerate() {
                                            *o += kv * xd[xrow + ox * stride[2]];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv3d`] w.r.t. input, kernel, and bias.
pub fn conv3d_backward(
    x: &NdArray,
    k: &NdArray,
    stride: [usize; 3],
    pad: [usize; 3],
    g: &NdArray,
) -> (NdArray, NdArray, NdArray) {
    let xp = reflect_pad3(x, pad[0], pad[1], pad[2]);
    let (mi_n, dp, hp, wp) = (xp.shape()[0], xp.shape()[1], xp.shape()[2], xp.shape()[3]);
    let (mo_n, kd_e, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3], k.shape()[4]);
    let (od, oh, ow) = (g.shape()[1], g.shape()[2], g.shape()[3]);
    let xd = xp.data();
    let kd = k.data();
    let gd = g.data();

    let mut dbias = NdArray::zeros(&[mo_n]);
    for mo in 0..mo_n {
        dbias.data_mut()[mo] = gd[mo * od * oh * ow..(mo + 1) * od * oh * ow].iter().sum();
    }

    let mut dk = NdArray::zeros(k.shape());
    dk.data_mut()
        .par_chunks_mut(mi_n * kd_e * kh * kw)
        .enumerate()
        .for_each(|(mo, dkc)| {
            for mi in 0..mi_n {
                for kz in 0..kd_e {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let mut acc = 0.0;
                            for oz in 0..od {
                                for oy in 0..oh {
                                    let gbase = ((mo * od + oz) * oh + oy) * ow;
                                    let grow = &gd[gbase..gbase + ow];
                                    let xrow = ((mi * dp + oz * stride[0] + kz) * hp
                                        + oy * stride[1]
                                        + ki)
                                        * wp
                                        + kj;
                                    if stride[2] == 1 {
                                        let src = &xd[xrow..xrow + ow];
                                        for (gv, s) in grow.iter().zip(src) {
                                            acc += gv * s;
                                        }
                                    } else {
                                        for (ox, gv) in grow.iter().enumerate() {
                                            acc += gv * xd[xrow + ox * stride[2]];
                                        }
                                    }
                                }
                            }
                            dkc[((mi * kd_e + kz) * kh + ki) * kw + kj] = acc;
                        }
                    }
                }
            }
        });

    let mut dxp = NdArray::zeros(xp.shape());
    dxp.data_mut()
        .par_chunks_mut(dp * hp * wp)
        .enumerate()
        .for_each(|(mi, dc)| {
            for mo in 0..mo_n {
                for kz in 0..kd_e {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let kv =
                                kd[(((mo * mi_n + mi) * kd_e + kz) * kh + ki) * kw + kj];
                            for oz in 0..od {
                                for oy in 0..oh {
                                    let gbase = ((mo * od + oz) * oh + oy) * ow;
                                    let grow = &gd[gbase..gbase + ow];
                                    let drow = ((oz * stride[0] + kz) * hp
                                        + oy * stride[1]
                                        + ki)
                                        * wp
                                        + kj;
                                    if stride[2] == 1 {
                                        let dst = &mut dc[drow..drow + ow];
                                        for (d, gv) in dst.iter_mut().zip(grow) {
                                            *d += kv * gv;
                                        }
                                    } else {
                                        for (ox, gv) in grow.iter().enumerate() {
                                            dc[drow + ox * stride[2]] += kv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    let dx = reflect_pad3_backward(
        &dxp,
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
        pad[0],
        pad[1],
        pad[2],
    );
    (dx, dk, dbias)
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// Elementwise max(v, slope * v).
pub fn leaky_relu(x: &NdArray, slope: f64) -> NdArray {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &NdArray, slope: f64, g: &NdArray) -> NdArray {
    NdArray::from_fn(x.shape(), |i| {
        let d = if x.data()[i] >= 0.0 { 1.0 } else { slope };
        d * g.data()[i]
    })
}

pub fn sigmoid(x: &NdArray) -> NdArray {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Derivative uses the cached forward output y.
pub fn sigmoid_backward(y: &NdArray, g: &NdArray) -> NdArray {
    NdArray::from_fn(y.shape(), |i| {
        let yv = y.data()[i];
        yv * (1.0 - yv) * g.data()[i]
    })
}

// ---------------------------------------------------------------------------
// Upsampling
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

/// Per-output-sample source taps for linear interpolation with
/// half-pixel alignment and edge clamping.
fn linear_taps(n_in: usize, factor: usize) -> Vec<Tap> {
    let clamp = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
    (0..n_in * factor)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor();
            Tap {
                i0: clamp(base as isize),
                i1: clamp(base as isize + 1),
                w1: src - base,
            }
        })
        .collect()
}

/// Upsamples the two trailing dims of a rank-3 [C,H,W] array.
pub fn upsample2d(x: &NdArray, factors: [usize; 2], mode: UpsampleMode) -> NdArray {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h * factors[0], w * factors[1]);
    let xd = x.data();
    match mode {
        UpsampleMode::Nearest => NdArray::from_fn(&[c, oh, ow], |i| {
            let ci = i / (oh * ow);
            let r = i % (oh * ow);
            let (oy, ox) = (r / ow, r % ow);
            xd[(ci * h + oy / factors[0]) * w + ox / factors[1]]
        }),
        UpsampleMode::Linear => {
            let ty = linear_taps(h, factors[0]);
            let tx = linear_taps(w, factors[1]);
            NdArray::from_fn(&[c, oh, ow], |i| {
                let ci = i / (oh * ow);
                let r = i % (oh * ow);
                let (sy, sx) = (ty[r / ow], tx[r % ow]);
                let row0 = (ci * h + sy.i0) * w;
                let row1 = (ci * h + sy.i1) * w;
                let v0 = (1.0 - sx.w1) * xd[row0 + sx.i0] + sx.w1 * xd[row0 + sx.i1];
                let v1 = (1.0 - sx.w1) * xd[row1 + sx.i0] + sx.w1 * xd[row1 + sx.i1];
                (1.0 - sy.w1) * v0 + sy.w1 * v1
            })
        }
    }
}

pub fn upsample2d_backward(
    g: &NdArray,
    in_shape: &[usize],
    factors: [usize; 2],
    mode: UpsampleMode,
) -> NdArray {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let gd = g.data();
    let mut out = NdArray::zeros(in_shape);
    let od = out.data_mut();
    match mode {
        UpsampleMode::Nearest => {
            for ci in 0..c {
                for oy in 0..oh {
                    let irow = (ci * h + oy / factors[0]) * w;
                    let grow = (ci * oh + oy) * ow;
                    for ox in 0..ow {
                        od[irow + ox / factors[1]] += gd[grow + ox];
                    }
                }
            }
        }
        UpsampleMode::Linear => {
            let ty = linear_taps(h, factors[0]);
            let tx = linear_taps(w, factors[1]);
            for ci in 0..c {
                for oy in 0..oh {
                    let sy = ty[oy];
                    let grow = (ci * oh + oy) * ow;
                    for ox in 0..ow {
                        let sx = tx[ox];
                        let gv = gd[grow + ox];
                        let row0 = (ci * h + sy.i0) * w;
                        let row1 = (ci * h + sy.i1) * w;
                        od[row0 + sx.i0] += (1.0 - sy.w1) * (1.0 - sx.w1) * gv;
                        od[row0 + sx.i1] += (1.0 - sy.w1) * sx.w1 * gv;
                        od[row1 + sx.i0] += sy.w1 * (1.0 - sx.w1) * gv;
                        od[row1 + sx.i1] += sy.w1 * sx.w1 * gv;
                    }
                }
            }
        }
    }
    out
}

/// Upsamples the three trailing dims of a rank-4 [M,D,H,W] array
/// (nearest replication or trilinear interpolation).
pub fn upsample3d(x: &NdArray, factors: [usize; 3], mode: UpsampleMode) -> NdArray {
    let (m, d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (od_e, oh, ow) = (d * factors[0], h * factors[1], w * factors[2]);
    let xd = x.data();
    match mode {
        UpsampleMode::Nearest => NdArray::from_fn(&[m, od_e, oh, ow], |i| {
            let mi = i / (od_e * oh * ow);
            let r = i % (od_e * oh * ow);
            let (oz, r2) = (r / (oh * ow), r % (oh * ow));
            let (oy, ox) = (r2 / ow, r2 % ow);
            xd[((mi * d + oz / factors[0]) * h + oy / factors[1]) * w + ox / factors[2]]
        }),
        UpsampleMode::Linear => {
            let tz = linear_taps(d, factors[0]);
            let ty = linear_taps(h, factors[1]);
            let tx = linear_taps(w, factors[2]);
            NdArray::from_fn(&[m, od_e, oh, ow], |i| {
                let mi = i / (od_e * oh * ow);
                let r = i % (od_e * oh * ow);
                let (oz, r2) = (r / (oh * ow), r % (oh * ow));
                let (sy, sx) = (ty[r2 / ow], tx[r2 % ow]);
                let sz = tz[oz];
                let mut acc = 0.0;
                for (zi, wz) in [(sz.i0, 1.0 - sz.w1), (sz.i1, sz.w1)] {
                    for (yi, wy) in [(sy.i0, 1.0 - sy.w1), (sy.i1, sy.w1)] {
                        let row = ((mi * d + zi) * h + yi) * w;
                        let v = (1.0 - sx.w1) * xd[row + sx.i0] + sx.w1 * xd[row + sx.i1];
                        acc += wz * wy * v;
                    }
                }
                acc
            })
        }
    }
}

pub fn upsample3d_backward(
    g: &NdArray,
    in_shape: &[usize],
    factors: [usize; 3],
    mode: UpsampleMode,
) -> NdArray {
    let (m, d, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (od_e, oh, ow) = (g.shape()[1], g.shape()[2], g.shape()[3]);
    let gd = g.data();
    let mut out = NdArray::zeros(in_shape);
    let od = out.data_mut();
    match mode {
        UpsampleMode::Nearest => {
            for mi in 0..m {
                for oz in 0..od_e {
                    for oy in 0..oh {
                        let irow = ((mi * d + oz / factors[0]) * h + oy / factors[1]) * w;
                        let grow = ((mi * od_e + oz) * oh + oy) * ow;
                        for ox in 0..ow {
                            od[irow + ox / factors[2]] += gd[grow + ox];
                        }
                    }
                }
            }
        }
        UpsampleMode::Linear => {
            let tz = linear_taps(d, factors[0]);
            let ty = linear_taps(h, factors[1]);
            let tx = linear_taps(w, factors[2]);
            for mi in 0..m {
                for oz in 0..od_e {
                    let sz = tz[oz];
                    for oy in 0..oh {
                        let sy = ty[oy];
                        let grow = ((mi * od_e + oz) * oh + oy) * ow;
                        for ox in 0..ow {
                            let sx = tx[ox];
                            let gv = gd[grow + ox];
                            for (zi, wz) in [(sz.i0, 1.0 - sz.w1), (sz.i1, sz.w1)] {
                                for (yi, wy) in [(sy.i0, 1.0 - sy.w1), (sy.i1, sy.w1)] {
                                    let row = ((mi * d + zi) * h + yi) * w;
                                    od[row + sx.i0] += wz * wy * (1.0 - sx.w1) * gv;
                                    od[row + sx.i1] += wz * wy * sx.w1 * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Per-channel normalization
// ---------------------------------------------------------------------------

/// Normalizes each leading-axis slice (channel or feature volume) to zero
/// mean and unit variance over all its trailing positions, then applies the
/// per-channel affine (gamma, beta). Keeps activation scales steady through
/// deep stacks regardless of weight drift.
pub fn chan_norm(x: &NdArray, gamma: &NdArray, beta: &NdArray, eps: f64) -> NdArray {
    let c = x.shape()[0];
    let n = x.numel() / c;
    let xd = x.data();
    let mut out = NdArray::zeros(x.shape());
    let od = out.data_mut();
    for ci in 0..c {
        let slice = &xd[ci * n..(ci + 1) * n];
        let mean = slice.iter().sum::<f64>() / n as f64;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let (g, b) = (gamma.data()[ci], beta.data()[ci]);
        for (o, &v) in od[ci * n..(ci + 1) * n].iter_mut().zip(slice) {
            *o = g * (v - mean) * inv + b;
        }
    }
    out
}

/// Gradients of [`chan_norm`] w.r.t. input, gamma, and beta.
pub fn chan_norm_backward(
    x: &NdArray,
    gamma: &NdArray,
    eps: f64,
    g: &NdArray,
) -> (NdArray, NdArray, NdArray) {
    let c = x.shape()[0];
    let n = x.numel() / c;
    let nf = n as f64;
    let xd = x.data();
    let gd = g.data();
    let mut dx = NdArray::zeros(x.shape());
    let mut dgamma = NdArray::zeros(gamma.shape());
    let mut dbeta = NdArray::zeros(gamma.shape());
    for ci in 0..c {
        let xs = &xd[ci * n..(ci + 1) * n];
        let gs = &gd[ci * n..(ci + 1) * n];
        let mean = xs.iter().sum::<f64>() / nf;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let inv = 1.0 / (var + eps).sqrt();

        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for (gv, &xv) in gs.iter().zip(xs) {
            sum_g += gv;
            sum_gx += gv * (xv - mean) * inv;
        }
        dbeta.data_mut()[ci] = sum_g;
        dgamma.data_mut()[ci] = sum_gx;

        let gamma_inv = gamma.data()[ci] * inv;
        let mean_g = sum_g / nf;
        let mean_gx = sum_gx / nf;
        for i in 0..n {
            let xhat = (xs[i] - mean) * inv;
            dx.data_mut()[ci * n + i] = gamma_inv * (gs[i] - mean_g - xhat * mean_gx);
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// Spatial block averaging (the downsampling operator d)
// ---------------------------------------------------------------------------

/// Per-band alpha x alpha block mean of a rank-3 [C,H,W] array.
pub fn block_avg2(x: &NdArray, alpha: usize) -> Result<NdArray> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    for (dim, n) in [("height", h), ("width", w)] {
        if n % alpha != 0 {
            return Err(Error::NotDivisible {
                op: "block_avg",
                dim,
                extent: n,
                divisor: alpha,
            });
        }
    }
    let (oh, ow) = (h / alpha, w / alpha);
    let inv = 1.0 / (alpha * alpha) as f64;
    let xd = x.data();
    Ok(NdArray::from_fn(&[c, oh, ow], |i| {
        let ci = i / (oh * ow);
        let r = i % (oh * ow);
        let (oy, ox) = (r / ow, r % ow);
        let mut acc = 0.0;
        for dy in 0..alpha {
            let row = (ci * h + oy * alpha + dy) * w + ox * alpha;
            for dx in 0..alpha {
                acc += xd[row + dx];
            }
        }
        acc * inv
    }))
}

pub fn block_avg2_backward(g: &NdArray, in_shape: &[usize], alpha: usize) -> NdArray {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let inv = 1.0 / (alpha * alpha) as f64;
    let gd = g.data();
    NdArray::from_fn(&[c, h, w], |i| {
        let ci = i / (h * w);
        let r = i % (h * w);
        let (y, x) = (r / w, r % w);
        gd[(ci * oh + y / alpha) * ow + x / alpha] * inv
    })
}

// ---------------------------------------------------------------------------
// Concatenation along the leading (channel/volume) axis
// ---------------------------------------------------------------------------

pub fn concat0(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    if a.rank() != b.rank() {
        return Err(Error::DimMismatch {
            op: "concat",
            dim: "rank",
            expected: a.rank(),
            got: b.rank(),
        });
    }
    for axis in 1..a.rank() {
        if a.shape()[axis] != b.shape()[axis] {
            return Err(Error::DimMismatch {
                op: "concat",
                dim: "trailing extent",
                expected: a.shape()[axis],
                got: b.shape()[axis],
            });
        }
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    NdArray::from_vec(&shape, data)
}
