//! 2-D cross-correlation via im2col and a single GEMM per batch item.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: [usize; 4], kernel: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [_, cin, h, w] = input;
        let [cout, kcin, kh, kw] = kernel;
        if kcin != cin || kh != kw || kh == 0 {
            return Err(Error::Config(format!(
                "conv2d: kernel shape {kernel:?} incompatible with input shape {input:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be positive".into()));
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Config(format!(
                "conv2d: kernel shape {kernel:?} larger than padded input shape {input:?}"
            )));
        }
        Ok(Self {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride,
            pad,
            in_h: h,
            in_w: w,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1, stride 1, no padding: the input plane is already the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Source pixel for an output position and kernel offset, or `None` when it
/// falls into the zero padding.
#[inline]
fn source(out: usize, offset: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let pos = (out * stride + offset).checked_sub(pad)?;
    (pos < len).then_some(pos)
}

fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let k = g.kernel;
    for c in 0..g.in_channels {
        let chan = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * plane;
                let dst = &mut cols[row..row + plane];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match source(oy, ky, g.stride, g.pad, g.in_h) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src = &chan[iy * g.in_w..(iy + 1) * g.in_w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match source(ox, kx, g.stride, g.pad, g.in_w) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let plane = g.out_plane();
    let k = g.kernel;
    for c in 0..g.in_channels {
        let chan = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * plane;
                let src = &cols[row..row + plane];
                for oy in 0..g.out_h {
                    let Some(iy) = source(oy, ky, g.stride, g.pad, g.in_h) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(ix) = source(ox, kx, g.stride, g.pad, g.in_w) {
                            chan[iy * g.in_w + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `bias` has one entry per output channel.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    if bias.len() != g.out_channels {
        return Err(Error::Config(format!(
            "conv2d: bias length {} does not match kernel shape {:?}",
            bias.len(),
            kernel.shape()
        )));
    }
    let batch = input.batch();
    let plane = g.out_plane();
    let in_size = g.in_channels * g.in_h * g.in_w;
    let out_size = g.out_channels * plane;
    let mut out = vec![T::zero(); batch * out_size];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch_len() * plane]
    };
    for n in 0..batch {
        let image = &input.data()[n * in_size..(n + 1) * in_size];
        let dst = &mut out[n * out_size..(n + 1) * out_size];
        for (co, &b) in bias.iter().enumerate() {
            dst[co * plane..(co + 1) * plane].fill(b);
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(&g, image, &mut cols);
            &cols
        };
        T::gemm(
            g.out_channels,
            g.patch_len(),
            plane,
            kernel.data(),
            false,
            cols_ref,
            false,
            T::one(),
            dst,
        );
    }
    Tensor::from_vec([batch, g.out_channels, g.out_h, g.out_w], out)
}

pub struct Conv2dGrads<T> {
    pub input: Vec<T>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    upstream: &[T],
) -> Result<Conv2dGrads<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    let batch = input.batch();
    let plane = g.out_plane();
    let in_size = g.in_channels * g.in_h * g.in_w;
    let out_size = g.out_channels * plane;
    let patch = g.patch_len();
    let mut d_input = vec![T::zero(); input.len()];
    let mut d_kernel = vec![T::zero(); kernel.len()];
    let mut d_bias = vec![T::zero(); g.out_channels];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { patch * plane }];
    let mut d_cols = vec![T::zero(); patch * plane];
    for n in 0..batch {
        let image = &input.data()[n * in_size..(n + 1) * in_size];
        let dy = &upstream[n * out_size..(n + 1) * out_size];
        for (co, db) in d_bias.iter_mut().enumerate() {
            *db += dy[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(&g, image, &mut cols);
            &cols
        };
        // dK += dY · colsᵀ
        T::gemm(
            g.out_channels,
            plane,
            patch,
            dy,
            false,
            cols_ref,
            true,
            T::one(),
            &mut d_kernel,
        );
        // dcols = Kᵀ · dY
        T::gemm(
            patch,
            g.out_channels,
            plane,
            kernel.data(),
            true,
            dy,
            false,
            T::zero(),
            &mut d_cols,
        );
        let dst = &mut d_input[n * in_size..(n + 1) * in_size];
        if g.is_pointwise() {
            dst.iter_mut().zip(&d_cols).for_each(|(d, &v)| *d += v);
        } else {
            col2im(&g, &d_cols, dst);
        }
    }
    Ok(Conv2dGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    })
}
