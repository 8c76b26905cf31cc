//! Forward and backward kernels on raw tensors.
//!
//! These are the numeric cores behind the graph ops in [`super::graph`].
//! Each forward kernel is usable on its own for inference.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output is `ceil(in / stride)`; zero padding split with the extra row/column at the end.
    Same,
    /// No padding; output is `(in - k) / stride + 1`.
    Valid,
}

/// Resolved geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn resolve(input: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if input.len() != 3 {
            return Err(Error::shape("conv2d", "input H×W×Cin", format!("{input:?}")));
        }
        if kernel.len() != 4 || kernel[0] != kernel[1] {
            return Err(Error::shape("conv2d", "kernel k×k×Cin×Cout", format!("{kernel:?}")));
        }
        let (in_h, in_w, cin) = (input[0], input[1], input[2]);
        let (k, kcin, cout) = (kernel[0], kernel[2], kernel[3]);
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("kernel Cin = {cin}"),
                format!("kernel {kernel:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be at least 1".into()));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if k > in_h || k > in_w {
                    return Err(Error::shape(
                        "conv2d",
                        format!("kernel {k}×{k} within input"),
                        format!("input {in_h}×{in_w}"),
                    ));
                }
                ((in_h - k) / stride + 1, (in_w - k) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let out_h = in_h.div_ceil(stride);
                let out_w = in_w.div_ceil(stride);
                let pad_h = ((out_h - 1) * stride + k).saturating_sub(in_h);
                let pad_w = ((out_w - 1) * stride + k).saturating_sub(in_w);
                if k > in_h + pad_h || k > in_w + pad_w {
                    return Err(Error::shape(
                        "conv2d",
                        format!("kernel {k}×{k} within padded input"),
                        format!("input {in_h}×{in_w}"),
                    ));
                }
                (out_h, out_w, pad_h / 2, pad_w / 2)
            }
        };
        Ok(ConvGeometry {
            in_h,
            in_w,
            cin,
            k,
            cout,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.out_h, self.out_w, self.cout]
    }

    /// Input coordinate for output index `o` and kernel offset `kk`, if inside the image.
    #[inline]
    fn source(o: usize, kk: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + kk).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }

    /// Calls `f(out_pixel, in_pixel, kernel_tap)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oy in 0..self.out_h {
            for ky in 0..self.k {
                let Some(iy) = Self::source(oy, ky, self.stride, self.pad_top, self.in_h) else {
                    continue;
                };
                for ox in 0..self.out_w {
                    let out_px = oy * self.out_w + ox;
                    for kx in 0..self.k {
                        let Some(ix) = Self::source(ox, kx, self.stride, self.pad_left, self.in_w) else {
                            continue;
                        };
                        f(out_px, iy * self.in_w + ix, ky * self.k + kx);
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let geo = ConvGeometry::resolve(input.shape(), kernels.shape(), stride, padding)?;
    let mut out = vec![0.0; geo.out_h * geo.out_w * geo.cout];
    conv2d_forward(&geo, input.data(), kernels.data(), &mut out);
    Tensor::new(geo.output_shape(), out)
}

pub(crate) fn conv2d_forward(geo: &ConvGeometry, input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let (cin, cout) = (geo.cin, geo.cout);
    geo.for_each_tap(|out_px, in_px, tap| {
        let src = &input[in_px * cin..(in_px + 1) * cin];
        let dst = &mut out[out_px * cout..(out_px + 1) * cout];
        for (ci, &v) in src.iter().enumerate() {
            let row = &kernel[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
            for (o, &w) in dst.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    });
}

/// Accumulates dL/dinput into `grad_in`.
pub(crate) fn conv2d_grad_input(geo: &ConvGeometry, kernel: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let (cin, cout) = (geo.cin, geo.cout);
    geo.for_each_tap(|out_px, in_px, tap| {
        let g = &grad_out[out_px * cout..(out_px + 1) * cout];
        let dst = &mut grad_in[in_px * cin..(in_px + 1) * cin];
        for (ci, d) in dst.iter_mut().enumerate() {
            let row = &kernel[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
            *d += row.iter().zip(g).map(|(w, g)| w * g).sum::<f64>();
        }
    });
}

/// Accumulates dL/dkernel into `grad_k`.
pub(crate) fn conv2d_grad_kernel(geo: &ConvGeometry, input: &[f64], grad_out: &[f64], grad_k: &mut [f64]) {
    let (cin, cout) = (geo.cin, geo.cout);
    geo.for_each_tap(|out_px, in_px, tap| {
        let g = &grad_out[out_px * cout..(out_px + 1) * cout];
        let src = &input[in_px * cin..(in_px + 1) * cin];
        for (ci, &v) in src.iter().enumerate() {
            let row = &mut grad_k[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
            for (r, &g) in row.iter_mut().zip(g) {
                *r += v * g;
            }
        }
    });
}

/// Per-channel mean over the spatial dimensions of an `H×W×C` tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::shape("global_avg_pool", "H×W×C", format!("{shape:?}")));
    }
    let c = shape[2];
    let pixels = shape[0] * shape[1];
    let mut out = vec![0.0; c];
    for px in input.data().chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= pixels as f64;
    }
    Ok(Tensor::vector(out))
}

/// `xᵀW` for `x` of length n and `W` of shape n×m.
pub fn matvec(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, m) = matvec_dims(x.shape(), w.shape())?;
    let mut out = vec![0.0; m];
    for i in 0..n {
        let xi = x.data()[i];
        for (o, wij) in out.iter_mut().zip(&w.data()[i * m..(i + 1) * m]) {
            *o += xi * wij;
        }
    }
    Ok(Tensor::vector(out))
}

pub(crate) fn matvec_dims(x: &[usize], w: &[usize]) -> Result<(usize, usize)> {
    if x.len() != 1 || w.len() != 2 || w[0] != x[0] {
        return Err(Error::shape(
            "matvec",
            format!("vector n and n×m weights (n = {})", x.first().copied().unwrap_or(0)),
            format!("x {x:?}, W {w:?}"),
        ));
    }
    Ok((w[0], w[1]))
}

/// `xᵀW + b`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = matvec(x, w)?;
    if b.shape() != out.shape() {
        return Err(Error::shape(
            "dense",
            format!("bias {:?}", out.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    for (o, bi) in out.data_mut().iter_mut().zip(b.data()) {
        *o += bi;
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPSILON: f64 = 1e-7;

/// Binary cross-entropy of probability `p` against label `y ∈ {0, 1}`.
pub fn bce_loss(p: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// Mean binary cross-entropy over a batch.
pub fn bce_mean(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Input(format!(
            "bce over {} probabilities and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        total += bce_loss(p, y)?;
    }
    Ok(total / probs.len() as f64)
}

pub(crate) fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("binary label must be 0 or 1, got {y}")))
    }
}
