//! Pixel-wise binary cross-entropy on logits, summed over pixels.

use crate::error::{Error, Result};
use crate::ops::elementwise::sigmoid;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Neumaier-compensated sum; the losses add thousands of O(1) terms.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for x in terms {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + carry
}

fn check_target<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    logits.ensure_same_shape(target, "cross-entropy target")?;
    if let Some(bad) = target
        .data()
        .iter()
        .find(|&&z| !(z >= T::zero() && z <= T::one()))
    {
        return Err(Error::Input(format!(
            "ground truth value {bad} outside [0, 1]"
        )));
    }
    Ok(())
}

/// `−Σ z·log h(a) + (1−z)·log(1−h(a))`, evaluated as `Σ softplus(a) − z·a`.
pub fn standard_ce_forward<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_target(logits, target)?;
    let total = compensated_sum(logits.data().iter().zip(target.data()).map(|(&a, &z)| {
        let (a, z) = (a.as_f64(), z.as_f64());
        softplus(a) - z * a
    }));
    Ok(T::lit(total))
}

/// `∂/∂a = h(a) − z`, scaled by the upstream scalar.
pub fn standard_ce_backward<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Vec<T> {
    logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &z)| upstream * (sigmoid(a) - z))
        .collect()
}

/// Weight of the positive term: the fraction of negative pixels
/// (`z < 0.5`), clamped away from 0 and 1.
pub fn balance_weight<T: Scalar>(target: &Tensor<T>) -> T {
    let half = T::lit(0.5);
    let negatives = target.data().iter().filter(|&&z| z < half).count();
    let beta = negatives as f64 / target.len().max(1) as f64;
    let clamped = beta.clamp(1e-3, 1.0 - 1e-3);
    if clamped != beta {
        log::warn!("class-balanced loss: degenerate ground truth (beta = {beta}), clamped to {clamped}");
    }
    T::lit(clamped)
}

/// Class-balanced variant: positive term weighted by `β`, negative by `1 − β`.
pub fn class_balanced_ce_forward<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_target(logits, target)?;
    let beta = balance_weight(target).as_f64();
    let total = compensated_sum(logits.data().iter().zip(target.data()).map(|(&a, &z)| {
        let (a, z) = (a.as_f64(), z.as_f64());
        beta * z * softplus(-a) + (1.0 - beta) * (1.0 - z) * softplus(a)
    }));
    Ok(T::lit(total))
}

pub fn class_balanced_ce_backward<T: Scalar>(
    logits: &Tensor<T>,
    target: &Tensor<T>,
    upstream: T,
) -> Vec<T> {
    let beta = balance_weight(target);
    let one = T::one();
    logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &z)| {
            let h = sigmoid(a);
            upstream * ((one - beta) * (one - z) * h - beta * z * (one - h))
        })
        .collect()
}
