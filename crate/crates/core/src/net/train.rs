//! Single-image SGD with gradient accumulation and optional flip
//! augmentation.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::net::config::NUM_SIDES;
use crate::net::loss::{total_loss, LossKind};
use crate::net::model::Network;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Learning rate for the summed (not averaged) pixel loss.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Per-side loss weights `α₁..α₆`.
    pub side_weights: [f64; NUM_SIDES],
    /// Learning-rate multiplier for the scalar short-connection and fusion
    /// weights.
    pub blend_lr_scale: f64,
    /// Samples whose gradients are summed before one optimizer step.
    pub accumulation: usize,
    pub epochs: usize,
    /// Set from the enclosing run configuration.
    #[serde(skip)]
    pub seed: u64,
    /// Adds a mirrored copy of every sample to each epoch.
    pub hflip: bool,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            momentum: 0.9,
            weight_decay: 5e-4,
            side_weights: [1.0; NUM_SIDES],
            blend_lr_scale: 0.001,
            accumulation: 10,
            epochs: 20,
            seed: 42,
            hflip: true,
            loss: LossKind::Standard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation window must be ≥ 1".into()));
        }
        if self.side_weights.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("side loss weights must be ≥ 0".into()));
        }
        if !(self.blend_lr_scale >= 0.0) || !self.blend_lr_scale.is_finite() {
            return Err(Error::Config("blend_lr_scale must be finite and ≥ 0".into()));
        }
        if !(self.lr >= 0.0) || !self.momentum.is_finite() || !self.weight_decay.is_finite() {
            return Err(Error::Config("lr, momentum and weight decay must be finite, lr ≥ 0".into()));
        }
        Ok(())
    }

    /// Samples visited per epoch for a dataset of `n`.
    pub fn epoch_len(&self, n: usize) -> usize {
        if self.hflip {
            2 * n
        } else {
            n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    /// Mean per-sample loss over the accumulation window.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub trace: Vec<StepLoss>,
    /// Mean per-sample loss of each epoch.
    pub epoch_means: Vec<f64>,
}

impl TrainReport {
    /// `step,epoch,loss` CSV.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,epoch,loss\n");
        for s in &self.trace {
            out.push_str(&format!("{},{},{:.6}\n", s.step, s.epoch, s.loss));
        }
        out
    }
}

/// Sample loss and gradient accumulation into the network's parameters.
pub fn accumulate_sample<T: Scalar>(
    net: &mut Network<T>,
    image: &Tensor<T>,
    gt: &Tensor<T>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let sides = net.forward_graph(&mut g, image)?;
    let loss = total_loss(&mut g, &sides, gt, &cfg.side_weights, cfg.loss)?;
    let value = g.value(loss).item().as_f64();
    let grads = g.backward(loss)?;
    net.params_mut().accumulate(&g, &grads);
    Ok(value)
}

/// Trains in place. `on_epoch(epoch, net)` runs after each epoch, e.g. to
/// write a checkpoint.
pub fn train<T, F>(
    net: &mut Network<T>,
    dataset: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    T: Scalar,
    F: FnMut(usize, &Network<T>) -> Result<()>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut report = TrainReport::default();
    let (lr, mu, wd) = (T::lit(cfg.lr), T::lit(cfg.momentum), T::lit(cfg.weight_decay));
    let flips: Vec<Option<Sample>> = dataset
        .iter()
        .map(|s| cfg.hflip.then(|| s.hflip()))
        .collect();
    let mut order: Vec<(usize, bool)> = (0..dataset.len()).map(|i| (i, false)).collect();
    if cfg.hflip {
        order.extend((0..dataset.len()).map(|i| (i, true)));
    }
    let blend: Vec<_> = net
        .edges()
        .iter()
        .map(|e| e.weight)
        .chain(net.fusion_ids())
        .collect();
    for id in blend {
        net.params_mut().set_lr_scale(id, T::lit(cfg.blend_lr_scale));
    }
    let mut step = 0;
    net.params_mut().zero_grad();
    for epoch in 0..cfg.epochs {
        let mut rng = SeededRng::fork(cfg.seed, epoch as u64);
        rng.shuffle(&mut order);
        let mut epoch_sum = 0.0;
        let mut window_sum = 0.0;
        let mut window_len = 0;
        for (pos, &(i, flipped)) in order.iter().enumerate() {
            let sample = if flipped {
                flips[i].as_ref().expect("flip prepared")
            } else {
                &dataset[i]
            };
            let image: Tensor<T> = sample.image.cast();
            let gt: Tensor<T> = sample.gt.cast();
            let loss = accumulate_sample(net, &image, &gt, cfg)?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    stage: "training step",
                    index: step,
                });
            }
            epoch_sum += loss;
            window_sum += loss;
            window_len += 1;
            if window_len == cfg.accumulation || pos + 1 == order.len() {
                net.params_mut().sgd_step(lr, mu, wd)?;
                report.trace.push(StepLoss {
                    step,
                    epoch,
                    loss: window_sum / window_len as f64,
                });
                step += 1;
                window_sum = 0.0;
                window_len = 0;
            }
        }
        let mean = epoch_sum / order.len() as f64;
        log::info!("epoch {} mean loss {mean:.3}", epoch + 1);
        report.epoch_means.push(mean);
        on_epoch(epoch, net)?;
    }
    Ok(report)
}
