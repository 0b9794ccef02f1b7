//! Deeply supervised objective: fusion loss plus weighted side losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::net::config::NUM_SIDES;
use crate::net::model::SideVars;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Plain pixel-wise cross-entropy.
    #[default]
    Standard,
    /// Image-level class-balanced cross-entropy (edge-detection baseline).
    ClassBalanced,
}

impl LossKind {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, logits: Var, target: &Tensor<T>) -> Result<Var> {
        match self {
            LossKind::Standard => g.standard_ce(logits, target),
            LossKind::ClassBalanced => g.class_balanced_ce(logits, target),
        }
    }
}

/// `L(Σ f_m·R̃ᵐ, Z) + Σ α_m·L(R̃ᵐ, Z)` over all six sides.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    sides: &SideVars,
    target: &Tensor<T>,
    side_weights: &[f64; NUM_SIDES],
    kind: LossKind,
) -> Result<Var> {
    if let Some(a) = side_weights.iter().find(|&&a| !(a >= 0.0)) {
        return Err(Error::Config(format!("side loss weight {a} must be ≥ 0")));
    }
    let fused = g.weighted_sum(&sides.r_tilde, &sides.fusion)?;
    let mut terms = vec![kind.apply(g, fused, target)?];
    let mut coeffs = vec![T::one()];
    for (&r, &alpha) in sides.r_tilde.iter().zip(side_weights) {
        terms.push(kind.apply(g, r, target)?);
        coeffs.push(T::lit(alpha));
    }
    g.linear_combination(&terms, &coeffs)
}
