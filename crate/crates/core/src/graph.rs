//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is its own
//! topological order and `backward` is a single reverse sweep.

use crate::error::{Error, Result};
use crate::ops::{self, PoolIndices};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        indices: PoolIndices,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Sigmoid(Var),
    /// `Σ wᵢ·xᵢ` with scalar-tensor weights.
    WeightedSum {
        inputs: Vec<Var>,
        weights: Vec<Var>,
    },
    /// `Σ cᵢ·xᵢ` with constant coefficients.
    LinearCombination {
        inputs: Vec<Var>,
        coeffs: Vec<T>,
    },
    StandardCe {
        logits: Var,
        target: Tensor<T>,
    },
    BalancedCe {
        logits: Var,
        target: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![*input, *kernel, *bias],
            Op::Relu(v) | Op::Sigmoid(v) => vec![*v],
            Op::MaxPool { input, .. } | Op::Upsample { input, .. } => vec![*input],
            Op::WeightedSum { inputs, weights } => {
                inputs.iter().chain(weights).copied().collect()
            }
            Op::LinearCombination { inputs, .. } => inputs.clone(),
            Op::StandardCe { logits, .. } | Op::BalancedCe { logits, .. } => vec![*logits],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Upsample { .. } => "bilinear_upsample",
            Op::Sigmoid(_) => "sigmoid",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::LinearCombination { .. } => "linear_combination",
            Op::StandardCe { .. } => "standard_ce",
            Op::BalancedCe { .. } => "class_balanced_ce",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn op_kind(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.kind()
    }

    /// Inputs of `var`; all of them precede `var` on the tape.
    pub fn inputs_of(&self, var: Var) -> Vec<Var> {
        self.nodes[var.0].op.inputs()
    }

    /// Which piece of every piecewise-linear op each element took: the sign
    /// of each ReLU input and the winning index of each pooling window.
    /// Two tapes with equal signatures are on the same linear piece.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(v) => sig.extend(
                    self.nodes[v.0]
                        .value
                        .data()
                        .iter()
                        .map(|&x| (x > T::zero()) as usize),
                ),
                Op::MaxPool { indices, .. } => sig.extend_from_slice(indices),
                _ => {}
            }
        }
        sig
    }

    /// Parameter leaves registered through [`Graph::param`].
    pub fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.params
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_with(op, value, requires_grad)
    }

    fn push_with(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_with(Op::Leaf, value, false)
    }

    /// Leaf that receives a gradient but is not tied to a parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_with(Op::Leaf, value, true)
    }

    /// Leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let var = self.push_with(Op::Leaf, store.get(id).clone(), true);
        self.params.push((id, var));
        var
    }

    /// `bias` is a `1×C×1×1` tensor.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = ops::conv2d_forward(
            self.value(input),
            self.value(kernel),
            self.value(bias).data(),
            stride,
            pad,
        )?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            value,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = ops::relu_forward(self.value(input));
        self.push(Op::Relu(input), value)
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (value, indices) = ops::maxpool2d_forward(self.value(input))?;
        Ok(self.push(Op::MaxPool { input, indices }, value))
    }

    pub fn bilinear_upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let value = ops::upsample_forward(self.value(input), factor)?;
        Ok(self.push(Op::Upsample { input, factor }, value))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = ops::sigmoid_forward(self.value(input));
        self.push(Op::Sigmoid(input), value)
    }

    /// `Σ wᵢ·xᵢ` where every `wᵢ` is a single-element tensor.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: &[Var]) -> Result<Var> {
        if inputs.is_empty() || inputs.len() != weights.len() {
            return Err(Error::Config(format!(
                "weighted_sum: {} inputs with {} weights",
                inputs.len(),
                weights.len()
            )));
        }
        let coeffs = weights
            .iter()
            .map(|&w| {
                let t = self.value(w);
                if t.len() == 1 {
                    Ok(t.item())
                } else {
                    Err(Error::Config(format!(
                        "weighted_sum: weight has shape {:?}, expected a scalar",
                        t.shape()
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let value = self.combine(inputs, &coeffs, "weighted_sum")?;
        Ok(self.push(
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights: weights.to_vec(),
            },
            value,
        ))
    }

    /// `Σ cᵢ·xᵢ` with constant coefficients.
    pub fn linear_combination(&mut self, inputs: &[Var], coeffs: &[T]) -> Result<Var> {
        if inputs.is_empty() || inputs.len() != coeffs.len() {
            return Err(Error::Config(format!(
                "linear_combination: {} inputs with {} coefficients",
                inputs.len(),
                coeffs.len()
            )));
        }
        let value = self.combine(inputs, coeffs, "linear_combination")?;
        Ok(self.push(
            Op::LinearCombination {
                inputs: inputs.to_vec(),
                coeffs: coeffs.to_vec(),
            },
            value,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.linear_combination(&[a, b], &[T::one(), T::one()])
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean(&mut self, inputs: &[Var]) -> Result<Var> {
        let c = T::one() / T::lit(inputs.len().max(1) as f64);
        self.linear_combination(inputs, &vec![c; inputs.len()])
    }

    fn combine(&self, inputs: &[Var], coeffs: &[T], what: &str) -> Result<Tensor<T>> {
        let first = self.value(inputs[0]);
        let mut out = Tensor::zeros(first.shape());
        for (&v, &c) in inputs.iter().zip(coeffs) {
            let t = self.value(v);
            first.ensure_same_shape(t, what)?;
            out.data_mut()
                .iter_mut()
                .zip(t.data())
                .for_each(|(o, &x)| *o += c * x);
        }
        Ok(out)
    }

    /// Summed pixel-wise cross-entropy of `logits` against `target`.
    pub fn standard_ce(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let loss = ops::standard_ce_forward(self.value(logits), target)?;
        Ok(self.push(
            Op::StandardCe {
                logits,
                target: target.clone(),
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn class_balanced_ce(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let loss = ops::class_balanced_ce_forward(self.value(logits), target)?;
        Ok(self.push(
            Op::BalancedCe {
                logits,
                target: target.clone(),
            },
            Tensor::scalar(loss),
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Config(format!(
                "backward: loss node has shape {:?}, expected a scalar",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(up) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &up, &mut grads)?;
            grads[idx] = Some(up);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        up: &[T],
        grads: &mut [Option<Vec<T>>],
    ) -> Result<()> {
        let mut send = |v: Var, g: Vec<T>| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &x)| *a += x),
                slot @ None => *slot = Some(g),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let g = ops::conv2d_backward(self.value(*input), self.value(*kernel), *stride, *pad, up)?;
                send(*input, g.input);
                send(*kernel, g.kernel);
                send(*bias, g.bias);
            }
            Op::Relu(x) => send(*x, ops::relu_backward(self.value(*x), up)),
            Op::Sigmoid(x) => send(*x, ops::elementwise::sigmoid_backward(out, up)),
            Op::MaxPool { input, indices } => {
                send(*input, ops::maxpool2d_backward(self.value(*input).len(), indices, up));
            }
            Op::Upsample { input, factor } => {
                send(*input, ops::upsample_backward(self.value(*input).shape(), *factor, up)?);
            }
            Op::WeightedSum { inputs, weights } => {
                for (&x, &w) in inputs.iter().zip(weights) {
                    let wv = self.value(w).item();
                    let xv = self.value(x).data();
                    if self.wants(w) {
                        let dot: T = xv.iter().zip(up).map(|(&a, &b)| a * b).sum();
                        send(w, vec![dot]);
                    }
                    if self.wants(x) {
                        send(x, up.iter().map(|&g| g * wv).collect());
                    }
                }
            }
            Op::LinearCombination { inputs, coeffs } => {
                for (&x, &c) in inputs.iter().zip(coeffs) {
                    if self.wants(x) {
                        send(x, up.iter().map(|&g| g * c).collect());
                    }
                }
            }
            Op::StandardCe { logits, target } => {
                send(*logits, ops::standard_ce_backward(self.value(*logits), target, up[0]));
            }
            Op::BalancedCe { logits, target } => {
                send(
                    *logits,
                    ops::class_balanced_ce_backward(self.value(*logits), target, up[0]),
                );
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn tape_order_is_topological() {
        let mut g = Graph::<f32>::new();
        let a = g.variable(Tensor::full([1, 1, 2, 2], 1.0));
        let b = g.relu(a);
        let c = g.sigmoid(b);
        let d = g.add(b, c).unwrap();
        for v in [b, c, d] {
            assert!(g.inputs_of(v).iter().all(|i| i < &v));
        }
        assert_eq!(g.op_kind(d), "linear_combination");
    }

    #[test]
    fn weighted_sum_single_identity_and_zero_weights() {
        let mut rng = SeededRng::new(1);
        let x = Tensor::<f32>::uniform([1, 2, 3, 3], 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.variable(x.clone());
        let one = g.variable(Tensor::scalar(1.0));
        let y = g.weighted_sum(&[xv], &[one]).unwrap();
        assert_eq!(g.value(y).data(), x.data());

        let mut g = Graph::new();
        let ins: Vec<_> = (0..3)
            .map(|_| g.variable(Tensor::<f32>::uniform([1, 1, 2, 2], 1.0, &mut rng)))
            .collect();
        let ws: Vec<_> = (0..3).map(|_| g.variable(Tensor::scalar(0.0))).collect();
        let y = g.weighted_sum(&ins, &ws).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        // Upstream all ones through a linear readout.
        let target = Tensor::full([1, 1, 2, 2], 0.5);
        let loss = g.standard_ce(y, &target).unwrap();
        let grads = g.backward(loss).unwrap();
        // At zero logits the CE upstream is h(0) − 0.5 = 0 everywhere.
        for &w in &ws {
            assert_eq!(grads.get(w).unwrap(), &[0.0]);
        }
        for &x in &ins {
            assert!(grads.get(x).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn weighted_sum_rejects_bad_lists() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros([1, 1, 2, 2]));
        let b = g.input(Tensor::zeros([1, 1, 3, 2]));
        let w = g.variable(Tensor::scalar(1.0));
        assert!(g.weighted_sum(&[], &[]).is_err());
        assert!(g.weighted_sum(&[a], &[w, w]).is_err());
        assert!(g.weighted_sum(&[a, b], &[w, w]).is_err());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f32>::new();
        let a = g.variable(Tensor::zeros([1, 1, 2, 2]));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = SeededRng::new(77);
            let mut g = Graph::<f32>::new();
            let x = g.input(Tensor::uniform([1, 3, 8, 8], 1.0, &mut rng));
            let k = g.variable(Tensor::uniform([4, 3, 3, 3], 0.5, &mut rng));
            let b = g.variable(Tensor::uniform([1, 4, 1, 1], 0.1, &mut rng));
            let y = g.conv2d(x, k, b, 1, 1).unwrap();
            let y = g.relu(y);
            let y = g.maxpool2d(y).unwrap();
            let y = g.bilinear_upsample(y, 2).unwrap();
            g.value(y).clone()
        };
        let a = run();
        let b = run();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
