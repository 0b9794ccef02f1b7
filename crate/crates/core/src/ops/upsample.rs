//! Fixed bilinear upsampling, i.e. a transposed convolution whose kernel is
//! the separable bilinear filter and is never learned.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const UPSAMPLE_FACTORS: [usize; 6] = [1, 2, 4, 8, 16, 32];

/// One axis of the bilinear kernel for `factor`; its length is
/// `2·factor − factor mod 2`.
pub fn bilinear_kernel_1d(factor: usize) -> Vec<f64> {
    let size = 2 * factor - factor % 2;
    let half = size.div_ceil(2) as f64;
    let center = if size % 2 == 1 { half - 1.0 } else { half - 0.5 };
    (0..size)
        .map(|i| 1.0 - (i as f64 - center).abs() / half)
        .collect()
}

/// Offset between the full transposed-conv output and the cropped one.
pub fn crop_offset(factor: usize) -> usize {
    factor / 2
}

/// For each output coordinate, the contributing `(input index, weight)` pairs.
fn taps<T: Scalar>(len_in: usize, factor: usize) -> Vec<Vec<(usize, T)>> {
    let kernel = bilinear_kernel_1d(factor);
    let size = kernel.len();
    let off = crop_offset(factor);
    (0..len_in * factor)
        .map(|y| {
            let full = y + off;
            (0..len_in)
                .filter_map(|i| {
                    let k = full.checked_sub(i * factor)?;
                    (k < size).then(|| (i, T::lit(kernel[k])))
                })
                .collect()
        })
        .collect()
}

fn check_factor(factor: usize) -> Result<()> {
    if UPSAMPLE_FACTORS.contains(&factor) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "bilinear_upsample: unsupported factor {factor} (expected one of {UPSAMPLE_FACTORS:?})"
        )))
    }
}

pub fn upsample_forward<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_factor(factor)?;
    if factor == 1 {
        return Ok(input.map(|v| v));
    }
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h * factor, w * factor);
    let rows = taps::<T>(h, factor);
    let cols = taps::<T>(w, factor);
    let src = input.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut tmp = vec![T::zero(); h * ow];
    for plane in 0..n * c {
        let inp = &src[plane * h * w..(plane + 1) * h * w];
        for i in 0..h {
            let line = &inp[i * w..(i + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[i * ow + x] = taps.iter().map(|&(j, wt)| line[j] * wt).sum();
            }
        }
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (y, taps) in rows.iter().enumerate() {
            let row = &mut dst[y * ow..(y + 1) * ow];
            for &(i, wt) in taps {
                let src_row = &tmp[i * ow..(i + 1) * ow];
                row.iter_mut().zip(src_row).for_each(|(o, &v)| *o += v * wt);
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out)
}

/// Adjoint of [`upsample_forward`]; the kernel itself has no gradient.
pub fn upsample_backward<T: Scalar>(input_shape: [usize; 4], factor: usize, upstream: &[T]) -> Result<Vec<T>> {
    check_factor(factor)?;
    if factor == 1 {
        return Ok(upstream.to_vec());
    }
    let [n, c, h, w] = input_shape;
    let (oh, ow) = (h * factor, w * factor);
    let rows = taps::<T>(h, factor);
    let cols = taps::<T>(w, factor);
    let mut grad = vec![T::zero(); n * c * h * w];
    let mut tmp = vec![T::zero(); h * ow];
    for plane in 0..n * c {
        let up = &upstream[plane * oh * ow..(plane + 1) * oh * ow];
        tmp.fill(T::zero());
        for (y, taps) in rows.iter().enumerate() {
            let row = &up[y * ow..(y + 1) * ow];
            for &(i, wt) in taps {
                let dst = &mut tmp[i * ow..(i + 1) * ow];
                dst.iter_mut().zip(row).for_each(|(d, &v)| *d += v * wt);
            }
        }
        let g = &mut grad[plane * h * w..(plane + 1) * h * w];
        for i in 0..h {
            let line = &tmp[i * ow..(i + 1) * ow];
            for (x, taps) in cols.iter().enumerate() {
                for &(j, wt) in taps {
                    g[i * w + j] += line[x] * wt;
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Naive 2-D transposed convolution with the outer-product kernel,
    /// followed by the crop.
    fn naive(input: &Tensor<f64>, factor: usize) -> Tensor<f64> {
        let k1 = bilinear_kernel_1d(factor);
        let size = k1.len();
        let [n, c, h, w] = input.shape();
        let (fh, fw) = ((h - 1) * factor + size, (w - 1) * factor + size);
        let off = crop_offset(factor);
        let mut out = Tensor::zeros([n, c, h * factor, w * factor]);
        for b in 0..n {
            for ch in 0..c {
                let mut full = vec![0.0; fh * fw];
                for i in 0..h {
                    for j in 0..w {
                        for ky in 0..size {
                            for kx in 0..size {
                                full[(i * factor + ky) * fw + j * factor + kx] +=
                                    input.at(b, ch, i, j) * k1[ky] * k1[kx];
                            }
                        }
                    }
                }
                for y in 0..h * factor {
                    for x in 0..w * factor {
                        let idx = out.index(b, ch, y, x);
                        out.data_mut()[idx] = full[(y + off) * fw + x + off];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn kernel_sizes() {
        assert_eq!(bilinear_kernel_1d(1), vec![1.0]);
        assert_eq!(bilinear_kernel_1d(2), vec![0.25, 0.75, 0.75, 0.25]);
        for f in UPSAMPLE_FACTORS {
            assert_eq!(bilinear_kernel_1d(f).len(), 2 * f - f % 2);
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let mut rng = SeededRng::new(1);
        let x = Tensor::<f32>::uniform([1, 2, 3, 5], 1.0, &mut rng);
        assert_eq!(upsample_forward(&x, 1).unwrap(), x);
    }

    #[test]
    fn unsupported_factor_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        assert!(upsample_forward(&x, 3).is_err());
        assert!(upsample_forward(&x, 64).is_err());
    }

    #[test]
    fn constant_preserved_in_interior() {
        for f in UPSAMPLE_FACTORS {
            let x = Tensor::<f32>::full([1, 1, 4, 4], 2.5);
            let y = upsample_forward(&x, f).unwrap();
            assert_eq!(y.shape(), [1, 1, 4 * f, 4 * f]);
            // Interior: at least half a source pixel away from the border.
            let margin = f / 2;
            for yy in margin..4 * f - margin {
                for xx in margin..4 * f - margin {
                    assert!((y.at(0, 0, yy, xx) - 2.5).abs() < 1e-6, "f={f} ({yy},{xx})");
                }
            }
        }
    }

    #[test]
    fn ramp_factor_two_hand_values() {
        let x = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample_forward(&x, 2).unwrap();
        #[rustfmt::skip]
        let want = [
            0.0,   0.1875, 0.5625, 0.5625,
            0.375, 0.75,   1.25,   1.125,
            1.125, 1.75,   2.25,   1.875,
            1.125, 1.6875, 2.0625, 1.6875,
        ];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(naive(&x, 2), y);
    }

    #[test]
    fn random_matches_naive_forward_and_adjoint() {
        let mut rng = SeededRng::new(4);
        for f in UPSAMPLE_FACTORS {
            let x = Tensor::<f64>::uniform([2, 2, 3, 4], 1.0, &mut rng);
            let y = upsample_forward(&x, f).unwrap();
            let want = naive(&x, f);
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            // <up, U x> == <U^T up, x>
            let up = Tensor::<f64>::uniform(y.shape(), 1.0, &mut rng);
            let g = upsample_backward(x.shape(), f, up.data()).unwrap();
            let lhs: f64 = up.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = g.iter().zip(x.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
