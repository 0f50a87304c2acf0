use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub out_channels: usize,
}

impl ConvConfig {
    pub fn new(kernel: usize, stride: usize, padding: Padding, out_channels: usize) -> Self {
        ConvConfig {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.out_channels == 0 {
            return Err(Error::param(format!(
                "kernel extents and out_channels must be positive: {:?}",
                self
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::param(format!(
                "stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        Ok(())
    }

    /// Output geometry for an `in_h x in_w` input.
    pub fn geometry(&self, in_h: usize, in_w: usize) -> Result<ConvGeometry> {
        self.validate()?;
        let s = self.stride;
        let (out_h, out_w, pad_top, pad_left) = match self.padding {
            Padding::Same => {
                let out_h = in_h.div_ceil(s);
                let out_w = in_w.div_ceil(s);
                let total_h = ((out_h - 1) * s + self.kernel_h).saturating_sub(in_h);
                let total_w = ((out_w - 1) * s + self.kernel_w).saturating_sub(in_w);
                (out_h, out_w, total_h / 2, total_w / 2)
            }
            Padding::Valid => {
                if in_h < self.kernel_h || in_w < self.kernel_w {
                    return Err(Error::shape(format!(
                        "valid convolution: input {}x{} smaller than kernel {}x{}",
                        in_h, in_w, self.kernel_h, self.kernel_w
                    )));
                }
                (
                    (in_h - self.kernel_h) / s + 1,
                    (in_w - self.kernel_w) / s + 1,
                    0,
                    0,
                )
            }
        };
        Ok(ConvGeometry {
            in_h,
            in_w,
            out_h,
            out_w,
            pad_top,
            pad_left,
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            stride: s,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
}

impl ConvGeometry {
    /// Input coordinate touched by output index `o` and kernel tap `k`, or
    /// `None` when it falls into the zero padding.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = o * stride + k;
        if p < pad || p - pad >= extent {
            None
        } else {
            Some(p - pad)
        }
    }

    #[inline]
    pub fn src_y(&self, oy: usize, ky: usize) -> Option<usize> {
        Self::src(oy, ky, self.stride, self.pad_top, self.in_h)
    }

    #[inline]
    pub fn src_x(&self, ox: usize, kx: usize) -> Option<usize> {
        Self::src(ox, kx, self.stride, self.pad_left, self.in_w)
    }
}

fn nhwc(t: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(Error::shape(format!(
            "{} expects an NHWC tensor, got {:?}",
            what,
            t.shape()
        ))),
    }
}

/// Direct cross-correlation, `[N,H,W,Cin] * [kh,kw,Cin,Cout] -> [N,H',W',Cout]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    cfg: &ConvConfig,
) -> Result<Tensor<T>> {
    let [n, h, w, cin] = nhwc(input, "conv2d")?;
    let expected = [cfg.kernel_h, cfg.kernel_w, cin, cfg.out_channels];
    if weights.shape() != expected {
        return Err(Error::shape(format!(
            "conv2d weights {:?} do not match expected {:?}",
            weights.shape(),
            expected
        )));
    }
    let geo = cfg.geometry(h, w)?;
    let mut out = vec![T::zero(); n * geo.out_h * geo.out_w * cfg.out_channels];
    conv2d_slices(
        input.data(),
        n,
        cin,
        weights.data(),
        cfg.out_channels,
        &geo,
        &mut out,
    );
    Tensor::from_vec(vec![n, geo.out_h, geo.out_w, cfg.out_channels], out)
}

/// Slice form of [`conv2d`]; `out` is fully overwritten. Samples run in
/// parallel; each output element accumulates taps in kh, kw, Cin order.
pub fn conv2d_slices<T: Scalar>(
    input: &[T],
    n: usize,
    cin: usize,
    weights: &[T],
    cout: usize,
    geo: &ConvGeometry,
    out: &mut [T],
) {
    let in_sample = geo.in_h * geo.in_w * cin;
    let out_sample = geo.out_h * geo.out_w * cout;
    debug_assert_eq!(input.len(), n * in_sample);
    debug_assert_eq!(out.len(), n * out_sample);
    out.par_chunks_mut(out_sample)
        .zip(input.par_chunks(in_sample))
        .for_each(|(o, x)| conv2d_sample(x, cin, weights, cout, geo, o));
}

fn conv2d_sample<T: Scalar>(
    x: &[T],
    cin: usize,
    weights: &[T],
    cout: usize,
    geo: &ConvGeometry,
    out: &mut [T],
) {
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let acc = &mut out[(oy * geo.out_w + ox) * cout..][..cout];
            acc.iter_mut().for_each(|v| *v = T::zero());
            for ky in 0..geo.kernel_h {
                let Some(iy) = geo.src_y(oy, ky) else { continue };
                for kx in 0..geo.kernel_w {
                    let Some(ix) = geo.src_x(ox, kx) else { continue };
                    let px = &x[(iy * geo.in_w + ix) * cin..][..cin];
                    let wbase = (ky * geo.kernel_w + kx) * cin * cout;
                    for (ci, &xv) in px.iter().enumerate() {
                        let wrow = &weights[wbase + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d`] with respect to its input and weights.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    cfg: &ConvConfig,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [_, h, w, cin] = nhwc(input, "conv2d backward")?;
    let geo = cfg.geometry(h, w)?;
    let cout = cfg.out_channels;
    let in_sample = h * w * cin;
    let out_sample = geo.out_h * geo.out_w * cout;
    let wdata = weights.data();
    let gdata = grad_out.data();

    let mut dx = vec![T::zero(); input.len()];
    let partials: Vec<Vec<T>> = dx
        .par_chunks_mut(in_sample)
        .zip(input.data().par_chunks(in_sample))
        .zip(gdata.par_chunks(out_sample))
        .map(|((dxs, xs), gs)| {
            let mut dw = vec![T::zero(); wdata.len()];
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    let g = &gs[(oy * geo.out_w + ox) * cout..][..cout];
                    for ky in 0..geo.kernel_h {
                        let Some(iy) = geo.src_y(oy, ky) else { continue };
                        for kx in 0..geo.kernel_w {
                            let Some(ix) = geo.src_x(ox, kx) else { continue };
                            let pix = (iy * w + ix) * cin;
                            let wbase = (ky * geo.kernel_w + kx) * cin * cout;
                            for ci in 0..cin {
                                let wrow = &wdata[wbase + ci * cout..][..cout];
                                let mut s = T::zero();
                                for (&wv, &gv) in wrow.iter().zip(g) {
                                    s += wv * gv;
                                }
                                dxs[pix + ci] += s;
                                let xv = xs[pix + ci];
                                let dwrow = &mut dw[wbase + ci * cout..][..cout];
                                for (d, &gv) in dwrow.iter_mut().zip(g) {
                                    *d += xv * gv;
                                }
                            }
                        }
                    }
                }
            }
            dw
        })
        .collect();
    let dw = sum_in_order(partials, wdata.len());
    Ok((
        Tensor::from_vec(input.shape().to_vec(), dx)?,
        Tensor::from_vec(weights.shape().to_vec(), dw)?,
    ))
}

/// Per-channel convolution, `[N,H,W,C] * [kh,kw,C] -> [N,H',W',C]`.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    cfg: &ConvConfig,
) -> Result<Tensor<T>> {
    let [n, h, w, c] = nhwc(input, "depthwise_conv2d")?;
    if cfg.out_channels != c {
        return Err(Error::shape(format!(
            "depthwise conv keeps channel count: input has {} but config says {}",
            c, cfg.out_channels
        )));
    }
    let expected = [cfg.kernel_h, cfg.kernel_w, c];
    if weights.shape() != expected {
        return Err(Error::shape(format!(
            "depthwise weights {:?} do not match expected {:?}",
            weights.shape(),
            expected
        )));
    }
    let geo = cfg.geometry(h, w)?;
    let mut out = vec![T::zero(); n * geo.out_h * geo.out_w * c];
    depthwise_conv2d_slices(input.data(), n, c, weights.data(), &geo, &mut out);
    Tensor::from_vec(vec![n, geo.out_h, geo.out_w, c], out)
}

pub fn depthwise_conv2d_slices<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    weights: &[T],
    geo: &ConvGeometry,
    out: &mut [T],
) {
    let in_sample = geo.in_h * geo.in_w * c;
    let out_sample = geo.out_h * geo.out_w * c;
    debug_assert_eq!(input.len(), n * in_sample);
    out.par_chunks_mut(out_sample)
        .zip(input.par_chunks(in_sample))
        .for_each(|(o, x)| {
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    let acc = &mut o[(oy * geo.out_w + ox) * c..][..c];
                    acc.iter_mut().for_each(|v| *v = T::zero());
                    for ky in 0..geo.kernel_h {
                        let Some(iy) = geo.src_y(oy, ky) else { continue };
                        for kx in 0..geo.kernel_w {
                            let Some(ix) = geo.src_x(ox, kx) else { continue };
                            let px = &x[(iy * geo.in_w + ix) * c..][..c];
                            let wk = &weights[(ky * geo.kernel_w + kx) * c..][..c];
                            for ((a, &xv), &wv) in acc.iter_mut().zip(px).zip(wk) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        });
}

pub(crate) fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    cfg: &ConvConfig,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [_, h, w, c] = nhwc(input, "depthwise backward")?;
    let geo = cfg.geometry(h, w)?;
    let in_sample = h * w * c;
    let out_sample = geo.out_h * geo.out_w * c;
    let wdata = weights.data();
    let mut dx = vec![T::zero(); input.len()];
    let partials: Vec<Vec<T>> = dx
        .par_chunks_mut(in_sample)
        .zip(input.data().par_chunks(in_sample))
        .zip(grad_out.data().par_chunks(out_sample))
        .map(|((dxs, xs), gs)| {
            let mut dw = vec![T::zero(); wdata.len()];
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    let g = &gs[(oy * geo.out_w + ox) * c..][..c];
                    for ky in 0..geo.kernel_h {
                        let Some(iy) = geo.src_y(oy, ky) else { continue };
                        for kx in 0..geo.kernel_w {
                            let Some(ix) = geo.src_x(ox, kx) else { continue };
                            let pix = (iy * w + ix) * c;
                            let wk = (ky * geo.kernel_w + kx) * c;
                            for ch in 0..c {
                                dxs[pix + ch] += wdata[wk + ch] * g[ch];
                                dw[wk + ch] += xs[pix + ch] * g[ch];
                            }
                        }
                    }
                }
            }
            dw
        })
        .collect();
    let dw = sum_in_order(partials, wdata.len());
    Ok((
        Tensor::from_vec(input.shape().to_vec(), dx)?,
        Tensor::from_vec(weights.shape().to_vec(), dw)?,
    ))
}

fn sum_in_order<T: Scalar>(partials: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut total = vec![T::zero(); len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
