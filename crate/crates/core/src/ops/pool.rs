use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Flat input index of the winning element for each output element.
pub type PoolIndices = Vec<usize>;

/// 2×2 max pooling with stride 2. Ties go to the first element of the
/// window in row-major order.
pub fn maxpool2d_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "maxpool2d: spatial dims of {:?} must be divisible by 2",
            input.shape()
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::from_vec([n, c, oh, ow], out)?, idx))
}

pub fn maxpool2d_backward<T: Scalar>(input_len: usize, indices: &PoolIndices, upstream: &[T]) -> Vec<T> {
    let mut grad = vec![T::zero(); input_len];
    for (&i, &g) in indices.iter().zip(upstream) {
        grad[i] += g;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn single_window() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2d_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(maxpool2d_backward(4, &idx, &[1.0]), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::<f32>::full([1, 2, 4, 4], 0.7);
        let (y, idx) = maxpool2d_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        let g = maxpool2d_backward(x.len(), &idx, &vec![1.0; y.len()]);
        for (i, v) in g.iter().enumerate() {
            let (row, col) = ((i % 16) / 4, i % 4);
            let want = if row % 2 == 0 && col % 2 == 0 { 1.0 } else { 0.0 };
            assert_eq!(*v, want);
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(maxpool2d_forward(&Tensor::<f32>::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn random_matches_naive() {
        let mut rng = SeededRng::new(9);
        for shape in [[1, 1, 4, 4], [2, 3, 8, 6], [2, 8, 16, 16]] {
            let x = Tensor::<f32>::uniform(shape, 1.0, &mut rng);
            let (y, idx) = maxpool2d_forward(&x).unwrap();
            let up: Vec<f32> = (0..y.len()).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let g = maxpool2d_backward(x.len(), &idx, &up);
            let mut want_g = vec![0.0f32; x.len()];
            for n in 0..shape[0] {
                for c in 0..shape[1] {
                    for oy in 0..shape[2] / 2 {
                        for ox in 0..shape[3] / 2 {
                            let mut best = (f32::NEG_INFINITY, 0);
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = x.index(n, c, 2 * oy + dy, 2 * ox + dx);
                                    if x.data()[i] > best.0 {
                                        best = (x.data()[i], i);
                                    }
                                }
                            }
                            assert_eq!(y.at(n, c, oy, ox), best.0);
                            want_g[best.1] += up[y.index(n, c, oy, ox)];
                        }
                    }
                }
            }
            assert_eq!(g, want_g);
        }
    }
}
