//! Forward operations and the raw kernels shared with the backward pass.

use crate::error::{Error, Result};

use super::autodiff::Op;
use super::{el, to_f64, Element, Tensor};

/// Elementwise binary operation kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemKind {
    Add,
    Sub,
    Mul,
}

pub(crate) const BCE_CLAMP: f64 = 1e-12;

fn expect_rank<T: Element>(t: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::Dim(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

// inclusive output range for one kernel tap: {o : 0 <= o*stride + tap - pad < extent}
fn tap_range(
    extent: usize,
    out_extent: usize,
    stride: usize,
    tap: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    let s = stride as isize;
    let lo_num = pad as isize - tap as isize;
    let lo = if lo_num <= 0 { 0 } else { ((lo_num + s - 1) / s) as usize };
    let hi_num = extent as isize - 1 + pad as isize - tap as isize;
    if hi_num < 0 {
        return None;
    }
    let hi = ((hi_num / s) as usize).min(out_extent - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// 2D cross-correlation with per-channel bias.
///
/// `input` is N×Cin×H×W, `weight` is Cout×Cin×k×k with odd `k`, `bias` is
/// Cout. Output extent must come out exact: H' = (H + 2·pad − k)/stride + 1.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    expect_rank(input, 4, "conv2d input")?;
    expect_rank(weight, 4, "conv2d weight")?;
    expect_rank(bias, 1, "conv2d bias")?;
    let (n, cin, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (cout, wcin, k, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    if k != kw {
        return Err(Error::Dim(format!(
            "conv2d weight kernel must be square, got {k}x{kw}"
        )));
    }
    if k % 2 == 0 {
        return Err(Error::Config(format!("conv2d kernel size must be odd, got {k}")));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be >= 1".to_string()));
    }
    if wcin != cin {
        return Err(Error::Dim(format!(
            "conv2d channel axis mismatch: input C={cin}, weight Cin={wcin}"
        )));
    }
    if bias.shape()[0] != cout {
        return Err(Error::Dim(format!(
            "conv2d bias axis mismatch: weight Cout={cout}, bias len={}",
            bias.shape()[0]
        )));
    }
    let out_extent = |e: usize, name: &str| -> Result<usize> {
        let padded = e + 2 * pad;
        if padded < k || (padded - k) % stride != 0 {
            return Err(Error::Config(format!(
                "conv2d output extent for {name}={e} (k={k}, pad={pad}, stride={stride}) is not an integer"
            )));
        }
        Ok((padded - k) / stride + 1)
    };
    let oh = out_extent(h, "H")?;
    let ow = out_extent(w, "W")?;

    let mut out = vec![T::zero(); n * cout * oh * ow];
    let idata = input.data();
    let wdata = weight.data();
    let bdata = bias.data();
    for ni in 0..n {
        for co in 0..cout {
            let plane = &mut out[(ni * cout + co) * oh * ow..][..oh * ow];
            plane.fill(bdata[co]);
            for ci in 0..cin {
                let iplane = &idata[(ni * cin + ci) * h * w..][..h * w];
                let wbase = (co * cin + ci) * k * k;
                for ky in 0..k {
                    let Some((oy_lo, oy_hi)) = tap_range(h, oh, stride, ky, pad) else {
                        continue;
                    };
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * stride + ky - pad;
                        let irow = &iplane[iy * w..][..w];
                        let orow = &mut plane[oy * ow..][..ow];
                        for kx in 0..k {
                            let wv = wdata[wbase + ky * k + kx];
                            let Some((ox_lo, ox_hi)) = tap_range(w, ow, stride, kx, pad) else {
                                continue;
                            };
                            if stride == 1 {
                                let len = ox_hi - ox_lo + 1;
                                let iseg = &irow[ox_lo + kx - pad..][..len];
                                let oseg = &mut orow[ox_lo..][..len];
                                for (o, i) in oseg.iter_mut().zip(iseg) {
                                    *o += wv * *i;
                                }
                            } else {
                                for ox in ox_lo..=ox_hi {
                                    orow[ox] += wv * irow[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(Tensor::from_op(
        vec![n, cout, oh, ow],
        out,
        Op::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            pad,
        },
    ))
}

pub(crate) fn conv2d_bwd_input<T: Element>(
    gout: &[T],
    oshape: &[usize],
    wdata: &[T],
    wshape: &[usize],
    ishape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let (n, cout, oh, ow) = (oshape[0], oshape[1], oshape[2], oshape[3]);
    let (cin, h, w) = (ishape[1], ishape[2], ishape[3]);
    let k = wshape[2];
    let mut gi = vec![T::zero(); n * cin * h * w];
    for ni in 0..n {
        for ci in 0..cin {
            let giplane = &mut gi[(ni * cin + ci) * h * w..][..h * w];
            for co in 0..cout {
                let gplane = &gout[(ni * cout + co) * oh * ow..][..oh * ow];
                let wbase = (co * cin + ci) * k * k;
                for ky in 0..k {
                    let Some((oy_lo, oy_hi)) = tap_range(h, oh, stride, ky, pad) else {
                        continue;
                    };
                    for oy in oy_lo..=oy_hi {
                        let iy = oy * stride + ky - pad;
                        let girow = &mut giplane[iy * w..][..w];
                        let grow = &gplane[oy * ow..][..ow];
                        for kx in 0..k {
                            let wv = wdata[wbase + ky * k + kx];
                            let Some((ox_lo, ox_hi)) = tap_range(w, ow, stride, kx, pad) else {
                                continue;
                            };
                            if stride == 1 {
                                let len = ox_hi - ox_lo + 1;
                                let gseg = &grow[ox_lo..][..len];
                                let giseg = &mut girow[ox_lo + kx - pad..][..len];
                                for (o, g) in giseg.iter_mut().zip(gseg) {
                                    *o += wv * *g;
                                }
                            } else {
                                for ox in ox_lo..=ox_hi {
                                    girow[ox * stride + kx - pad] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gi
}

pub(crate) fn conv2d_bwd_weight<T: Element>(
    gout: &[T],
    oshape: &[usize],
    idata: &[T],
    ishape: &[usize],
    wshape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let (n, cout, oh, ow) = (oshape[0], oshape[1], oshape[2], oshape[3]);
    let (cin, h, w) = (ishape[1], ishape[2], ishape[3]);
    let k = wshape[2];
    let mut gw = vec![T::zero(); cout * cin * k * k];
    for co in 0..cout {
        for ci in 0..cin {
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let Some((oy_lo, oy_hi)) = tap_range(h, oh, stride, ky, pad) else {
                    continue;
                };
                for kx in 0..k {
                    let Some((ox_lo, ox_hi)) = tap_range(w, ow, stride, kx, pad) else {
                        continue;
                    };
                    let mut acc = T::zero();
                    for ni in 0..n {
                        let gplane = &gout[(ni * cout + co) * oh * ow..][..oh * ow];
                        let iplane = &idata[(ni * cin + ci) * h * w..][..h * w];
                        for oy in oy_lo..=oy_hi {
                            let iy = oy * stride + ky - pad;
                            let grow = &gplane[oy * ow..][..ow];
                            let irow = &iplane[iy * w..][..w];
                            if stride == 1 {
                                let len = ox_hi - ox_lo + 1;
                                let gseg = &grow[ox_lo..][..len];
                                let iseg = &irow[ox_lo + kx - pad..][..len];
                                for (g, i) in gseg.iter().zip(iseg) {
                                    acc += *g * *i;
                                }
                            } else {
                                for ox in ox_lo..=ox_hi {
                                    acc += grow[ox] * irow[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                    gw[wbase + ky * k + kx] = acc;
                }
            }
        }
    }
    gw
}

pub(crate) fn conv2d_bwd_bias<T: Element>(gout: &[T], oshape: &[usize]) -> Vec<T> {
    let (n, cout, oh, ow) = (oshape[0], oshape[1], oshape[2], oshape[3]);
    let mut gb = vec![T::zero(); cout];
    for ni in 0..n {
        for co in 0..cout {
            let plane = &gout[(ni * cout + co) * oh * ow..][..oh * ow];
            let mut acc = T::zero();
            for &g in plane {
                acc += g;
            }
            gb[co] += acc;
        }
    }
    gb
}

/// Elementwise max(x, 0).
pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::from_op(x.shape().to_vec(), data, Op::Relu { input: x.clone() })
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function 1/(1+exp(-x)), stable over the full range.
pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| el(sigmoid_scalar(to_f64(v))))
        .collect();
    Tensor::from_op(x.shape().to_vec(), data, Op::Sigmoid { input: x.clone() })
}

/// 2×2 max pooling with stride 2. Ties resolve to the first occurrence in
/// row-major window order, which keeps the backward routing deterministic.
pub fn maxpool2d<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(x, 4, "maxpool2d input")?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "maxpool2d requires even spatial extents, got {h}x{w}; pad the input first"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut argmax = vec![0usize; out.len()];
    let data = x.data();
    for p in 0..n * c {
        let ibase = p * h * w;
        let obase = p * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = ibase + (2 * oy) * w + 2 * ox;
                let mut best = data[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ibase + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
                out[obase + oy * ow + ox] = best;
                argmax[obase + oy * ow + ox] = best_idx;
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        Op::MaxPool2d {
            input: x.clone(),
            argmax,
        },
    ))
}

// (low index, high index, fractional weight toward the high index)
fn bilinear_axis_table(extent: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..extent * factor)
        .map(|o| {
            // half-pixel centers, no corner alignment
            let s = (o as f64 + 0.5) / factor as f64 - 0.5;
            let f = s.floor();
            let t = s - f;
            let lo = (f.max(0.0) as usize).min(extent - 1);
            let hi = ((f + 1.0).max(0.0) as usize).min(extent - 1);
            (lo, hi, t)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor using half-pixel centers.
pub fn upsample_bilinear<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    expect_rank(x, 4, "upsample_bilinear input")?;
    if factor < 1 {
        return Err(Error::Config("upsample factor must be >= 1".to_string()));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h * factor, w * factor);
    let ytab = bilinear_axis_table(h, factor);
    let xtab = bilinear_axis_table(w, factor);
    let mut out = vec![T::zero(); n * c * oh * ow];
    let data = x.data();
    for p in 0..n * c {
        let ibase = p * h * w;
        let obase = p * oh * ow;
        for (oy, &(yl, yh, ty)) in ytab.iter().enumerate() {
            let ty = el::<T>(ty);
            for (ox, &(xl, xh, tx)) in xtab.iter().enumerate() {
                let tx = el::<T>(tx);
                // lerp form: exact for constant maps at any factor
                let v00 = data[ibase + yl * w + xl];
                let v01 = data[ibase + yl * w + xh];
                let v10 = data[ibase + yh * w + xl];
                let v11 = data[ibase + yh * w + xh];
                let top = v00 + tx * (v01 - v00);
                let bot = v10 + tx * (v11 - v10);
                out[obase + oy * ow + ox] = top + ty * (bot - top);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        Op::UpsampleBilinear {
            input: x.clone(),
            factor,
        },
    ))
}

pub(crate) fn upsample_bilinear_bwd<T: Element>(
    gout: &[T],
    oshape: &[usize],
    ishape: &[usize],
    factor: usize,
) -> Vec<T> {
    let (n, c, oh, ow) = (oshape[0], oshape[1], oshape[2], oshape[3]);
    let (h, w) = (ishape[2], ishape[3]);
    let ytab = bilinear_axis_table(h, factor);
    let xtab = bilinear_axis_table(w, factor);
    let mut gi = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let ibase = p * h * w;
        let obase = p * oh * ow;
        for (oy, &(yl, yh, ty)) in ytab.iter().enumerate() {
            let ty = el::<T>(ty);
            let sy = T::one() - ty;
            for (ox, &(xl, xh, tx)) in xtab.iter().enumerate() {
                let tx = el::<T>(tx);
                let sx = T::one() - tx;
                let g = gout[obase + oy * ow + ox];
                gi[ibase + yl * w + xl] += g * sy * sx;
                gi[ibase + yl * w + xh] += g * sy * tx;
                gi[ibase + yh * w + xl] += g * ty * sx;
                gi[ibase + yh * w + xh] += g * ty * tx;
            }
        }
    }
    gi
}

// iterates matched flat indices when b is N×1×H×W broadcast over a's channels
pub(crate) fn for_each_broadcast(a_shape: &[usize], mut f: impl FnMut(usize, usize)) {
    let (n, c, hw) = (a_shape[0], a_shape[1], a_shape[2] * a_shape[3]);
    for ni in 0..n {
        for ci in 0..c {
            let a_base = (ni * c + ci) * hw;
            let b_base = ni * hw;
            for j in 0..hw {
                f(a_base + j, b_base + j);
            }
        }
    }
}

fn broadcast_compatible(a: &[usize], b: &[usize]) -> bool {
    a.len() == 4 && b.len() == 4 && b[0] == a[0] && b[1] == 1 && b[2] == a[2] && b[3] == a[3]
}

/// Elementwise add/sub/mul. Shapes must match, or `b` may be N×1×H×W
/// against a's N×C×H×W (single-channel broadcast across C).
pub fn elementwise<T: Element>(a: &Tensor<T>, b: &Tensor<T>, kind: ElemKind) -> Result<Tensor<T>> {
    let apply = |x: T, y: T| match kind {
        ElemKind::Add => x + y,
        ElemKind::Sub => x - y,
        ElemKind::Mul => x * y,
    };
    let data: Vec<T> = if a.shape() == b.shape() {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| apply(x, y))
            .collect()
    } else if broadcast_compatible(a.shape(), b.shape()) {
        let mut out = vec![T::zero(); a.numel()];
        for_each_broadcast(a.shape(), |a_idx, b_idx| {
            out[a_idx] = apply(a.data()[a_idx], b.data()[b_idx]);
        });
        out
    } else {
        let axis = a
            .shape()
            .iter()
            .zip(b.shape())
            .position(|(x, y)| x != y)
            .map(|i| format!("axis {i}"))
            .unwrap_or_else(|| "rank".to_string());
        return Err(Error::Dim(format!(
            "elementwise {kind:?} on incompatible shapes {:?} vs {:?} ({axis} differs)",
            a.shape(),
            b.shape()
        )));
    };
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        Op::Elementwise {
            a: a.clone(),
            b: b.clone(),
            kind,
        },
    ))
}

/// Sum of all elements, as a rank-0 tensor.
pub fn reduce_sum<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for &v in x.data() {
        acc += v;
    }
    Tensor::from_op(Vec::new(), vec![acc], Op::ReduceSum { input: x.clone() })
}

/// Mean of all elements, as a rank-0 tensor.
pub fn reduce_mean<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for &v in x.data() {
        acc += v;
    }
    let mean = acc / el(x.numel() as f64);
    Tensor::from_op(Vec::new(), vec![mean], Op::ReduceMean { input: x.clone() })
}

/// Batch-averaged per-sample Euclidean distance between `pred` and `gt`
/// (axis 0 is the batch). With `squared`, the per-sample term is the squared
/// distance instead; the non-squared gradient at pred == gt is defined as 0.
pub fn l2_loss<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, squared: bool) -> Result<Tensor<T>> {
    if pred.shape() != gt.shape() {
        return Err(Error::Dim(format!(
            "l2_loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.shape().is_empty() {
        return Err(Error::Dim(
            "l2_loss needs a batch axis; got a rank-0 tensor".to_string(),
        ));
    }
    let batch = pred.shape()[0];
    let per_sample = pred.numel() / batch;
    let mut total = 0.0f64;
    for i in 0..batch {
        let mut sq = 0.0f64;
        for j in i * per_sample..(i + 1) * per_sample {
            let d = to_f64(pred.data()[j]) - to_f64(gt.data()[j]);
            sq += d * d;
        }
        total += if squared { sq } else { sq.sqrt() };
    }
    let loss = el::<T>(total / batch as f64);
    Ok(Tensor::from_op(
        Vec::new(),
        vec![loss],
        Op::L2Loss {
            pred: pred.clone(),
            gt: gt.clone(),
            squared,
        },
    ))
}

/// Mean binary cross-entropy of `pred` (probabilities) against a binary
/// `target`, with log arguments clamped at 1e-12.
pub fn bce_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::Dim(format!(
            "bce_loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut total = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let p = to_f64(p);
        let t = to_f64(t);
        total -= t * p.max(BCE_CLAMP).ln() + (1.0 - t) * (1.0 - p).max(BCE_CLAMP).ln();
    }
    let loss = el::<T>(total / pred.numel() as f64);
    Ok(Tensor::from_op(
        Vec::new(),
        vec![loss],
        Op::BceLoss {
            pred: pred.clone(),
            target: target.clone(),
        },
    ))
}
