use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Logistic function, evaluated so that neither branch overflows.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid)
}

/// Gradient through the sigmoid given its forward output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, upstream: &[T]) -> Vec<T> {
    output
        .data()
        .iter()
        .zip(upstream)
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect()
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &[T]) -> Vec<T> {
    input
        .data()
        .iter()
        .zip(upstream)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}
