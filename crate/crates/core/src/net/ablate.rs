//! Short-connection ablation: identical training per pattern, evaluated on
//! a shared held-out set.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::Result;
use crate::metrics::{evaluate, EvalReport, MaxFMode};
use crate::net::config::{NetworkConfig, Pattern};
use crate::net::model::Network;
use crate::net::train::{train, TrainConfig, TrainReport};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pattern: Pattern,
    pub max_f: f64,
    pub mae: f64,
}

impl AblationRow {
    pub fn csv_header() -> &'static str {
        "pattern,max_f,mae"
    }

    pub fn csv_line(&self) -> String {
        format!("{},{:.6},{:.6}", self.pattern, self.max_f, self.mae)
    }
}

/// Saliency maps cropped back to each sample's original size.
pub fn predict(net: &Network<f32>, samples: &[Sample]) -> Result<Vec<Tensor<f32>>> {
    samples
        .iter()
        .map(|s| {
            let map = net.infer(&s.image)?;
            Ok(crate::data::sample::crop(&map, s.original.0, s.original.1))
        })
        .collect()
}

pub fn evaluate_network(net: &Network<f32>, samples: &[Sample]) -> Result<EvalReport> {
    let preds = predict(net, samples)?;
    let gts: Vec<_> = samples
        .iter()
        .map(|s| crate::data::sample::crop(&s.gt, s.original.0, s.original.1))
        .collect();
    let ids: Vec<_> = samples.iter().map(|s| s.id.clone()).collect();
    evaluate(&ids, &preds, &gts, MaxFMode::DatasetMean)
}

/// Trains one network and evaluates it; shared by ablation and the
/// end-to-end benchmark.
pub fn train_and_evaluate(
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    train_set: &[Sample],
    eval_set: &[Sample],
) -> Result<(Network<f32>, TrainReport, EvalReport)> {
    let mut net = Network::<f32>::build(net_cfg, train_cfg.seed)?;
    let report = train(&mut net, train_set, train_cfg, |_, _| Ok(()))?;
    let eval = evaluate_network(&net, eval_set)?;
    Ok((net, report, eval))
}

/// One row per pattern, each trained from the same seed.
pub fn ablate(
    patterns: &[Pattern],
    base: &NetworkConfig,
    train_cfg: &TrainConfig,
    train_set: &[Sample],
    eval_set: &[Sample],
) -> Result<Vec<AblationRow>> {
    patterns
        .iter()
        .map(|&pattern| {
            let cfg = NetworkConfig {
                pattern,
                edges: None,
                ..base.clone()
            };
            let (_, _, eval) = train_and_evaluate(&cfg, train_cfg, train_set, eval_set)?;
            log::info!("ablation {pattern}: max-F {:.4} MAE {:.4}", eval.max_f, eval.mae);
            Ok(AblationRow {
                pattern,
                max_f: eval.max_f,
                mae: eval.mae,
            })
        })
        .collect()
}
