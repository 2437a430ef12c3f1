//! Forward and backward numeric kernels. These work on raw tensors and know
//! nothing about the tape.

use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input + 2 * pad {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Geometry of one conv2d call, validated once and shared by both passes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (in_channels, height, width) = input.dims3("conv2d")?;
        let [out_channels, k_in, kh, kw] = *kernel.shape() else {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: kernel.shape().to_vec(),
                reason: "kernel must be [Cout, Cin, kh, kw]".into(),
            });
        };
        if k_in != in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        if bias.shape() != [out_channels] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: kernel.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
        }
        let (Some(out_h), Some(out_w)) = (
            conv_output_size(height, kh, stride, pad),
            conv_output_size(width, kw, stride, pad),
        ) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                left: input.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        };
        Ok(Self {
            in_channels,
            height,
            width,
            out_channels,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits `(row of the column matrix, output position, input offset)` for
    /// every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let g = self;
        for c in 0..g.in_channels {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (c * g.kh + ki) * g.kw + kj;
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let in_row = (c * g.height + iy as usize) * g.width;
                        for ox in 0..g.out_w {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.width as isize {
                                continue;
                            }
                            f(row, oy * g.out_w + ox, in_row + ix as usize);
                        }
                    }
                }
            }
        }
    }
}

/// `c = a · b` for row-major `a: m×k`, `b: k×n` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every index sgemm touches in `a`, `b`
    // and the dense row-major `c`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn im2col(input: &Tensor, g: &ConvGeometry) -> Vec<f32> {
    let plane = g.out_plane();
    let mut cols = vec![0.0f32; g.patch_len() * plane];
    let src = input.data();
    g.for_each_tap(|row, pos, offset| cols[row * plane + pos] = src[offset]);
    cols
}

/// Returns the output and the column matrix the backward pass needs.
pub(crate) fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    g: &ConvGeometry,
) -> (Tensor, Vec<f32>) {
    let cols = im2col(input, g);
    let plane = g.out_plane();
    let patch = g.patch_len();
    let mut out = vec![0.0f32; g.out_channels * plane];
    gemm(
        g.out_channels,
        patch,
        plane,
        kernel.data(),
        (patch, 1),
        &cols,
        (plane, 1),
        &mut out,
    );
    for (row, &b) in out.chunks_mut(plane).zip(bias.data()) {
        row.iter_mut().for_each(|v| *v += b);
    }
    (
        Tensor::from_parts(vec![g.out_channels, g.out_h, g.out_w], out),
        cols,
    )
}

pub(crate) struct ConvGrads {
    pub input: Vec<f32>,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

pub(crate) fn conv2d_backward(grad_out: &[f32], kernel: &Tensor, cols: &[f32], g: &ConvGeometry) -> ConvGrads {
    let plane = g.out_plane();
    let patch = g.patch_len();

    let mut d_kernel = vec![0.0f32; g.out_channels * patch];
    gemm(
        g.out_channels,
        plane,
        patch,
        grad_out,
        (plane, 1),
        cols,
        (1, plane),
        &mut d_kernel,
    );

    let d_bias = grad_out
        .chunks(plane)
        .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() as f32)
        .collect();

    let mut d_cols = vec![0.0f32; patch * plane];
    gemm(
        patch,
        g.out_channels,
        plane,
        kernel.data(),
        (1, patch),
        grad_out,
        (plane, 1),
        &mut d_cols,
    );
    let mut d_input = vec![0.0f32; g.in_channels * g.height * g.width];
    g.for_each_tap(|row, pos, offset| d_input[offset] += d_cols[row * plane + pos]);

    ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    }
}

/// Zero-padded 2-d cross-correlation of a `[Cin, H, W]` input with a
/// `[Cout, Cin, kh, kw]` kernel.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel, bias, stride, pad)?;
    Ok(conv2d_forward(input, kernel, bias, &g).0)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// 2×2 max pooling with stride 2. Also returns, per output, the flat input
/// index that produced it (first in row-major order on ties).
pub(crate) fn maxpool2d_with_argmax(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.dims3("maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape {
            op: "maxpool2d",
            shape: input.shape().to_vec(),
            reason: "spatial dims must be even".into(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ch * h + 2 * oy) * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![c, oh, ow], out), argmax))
}

pub fn maxpool2d(input: &Tensor) -> Result<Tensor> {
    maxpool2d_with_argmax(input).map(|(t, _)| t)
}

/// Per-channel spatial mean of a `[C, H, W]` tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3("global_avg_pool")?;
    if h == 0 || w == 0 {
        return Err(Error::InvalidShape {
            op: "global_avg_pool",
            shape: input.shape().to_vec(),
            reason: "spatial dims must be positive".into(),
        });
    }
    let plane = h * w;
    let data = input
        .data()
        .chunks(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    Ok(Tensor::from_parts(vec![c], data))
}

pub(crate) fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax(logits: &Tensor) -> Tensor {
    Tensor::from_parts(
        logits.shape().to_vec(),
        softmax_f64(logits.data()).into_iter().map(|p| p as f32).collect(),
    )
}

/// Align-corners bilinear resize of an `[h, w]` map up to `[out_h, out_w]`.
pub fn bilinear_upsample(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = map.dims2("bilinear_upsample")?;
    if out_h < h || out_w < w || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "bilinear_upsample: cannot resize {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let axis = |out: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                if src == 1 || out == 1 {
                    return (0, 0, 0.0);
                }
                let pos = i as f64 * (src - 1) as f64 / (out - 1) as f64;
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = axis(out_h, h);
    let cols = axis(out_w, w);
    let src = map.data();
    let at = |y: usize, x: usize| src[y * w + x] as f64;
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ty) in &rows {
        for &(x0, x1, tx) in &cols {
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
            let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w], out))
}
