//! Saliency benchmark metrics: threshold-swept precision/recall, Fβ with
//! β² = 0.3, maximum F-measure and mean absolute error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA2: f64 = 0.3;
pub const NUM_THRESHOLDS: usize = 256;

/// Binarization threshold of bin `t`; a pixel is salient iff `value > t/255`.
#[inline]
pub fn threshold(t: usize) -> f32 {
    t as f32 / 255.0
}

fn check_binary(values: &[f32], what: &str) -> Result<()> {
    match values.iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(Error::Input(format!("{what} is not binary (found {v})"))),
        None => Ok(()),
    }
}

fn check_shapes(a: &Tensor<f32>, b: &Tensor<f32>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `(|B∩Z|/|B|, |B∩Z|/|Z|)` for binary masks; an empty `B` has precision 0
/// and an empty `Z` recall 0.
pub fn precision_recall(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<(f64, f64)> {
    check_shapes(pred, gt, "precision_recall")?;
    check_binary(pred.data(), "predicted mask")?;
    check_binary(gt.data(), "ground-truth mask")?;
    let (mut tp, mut b, mut z) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p == 1.0, g == 1.0);
        tp += (p && g) as usize;
        b += p as usize;
        z += g as usize;
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    Ok((ratio(tp, b), ratio(tp, z)))
}

/// `(1+β²)·p·r / (β²·p + r)`, or 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    let denom = BETA2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * precision * recall / denom
    }
}

pub fn mae(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    check_shapes(pred, gt, "mae")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&s, &z)| (s as f64 - z as f64).abs())
        .sum();
    Ok(total / pred.len().max(1) as f64)
}

/// Dataset-mean precision and recall per threshold bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Images that contributed (those with a nonempty ground truth).
    pub images: usize,
}

impl PrCurve {
    pub fn f_values(&self) -> Vec<f64> {
        self.precision
            .iter()
            .zip(&self.recall)
            .map(|(&p, &r)| f_measure(p, r))
            .collect()
    }

    /// `threshold,precision,recall,f` rows, threshold as the bin index.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,f\n");
        for (t, f) in self.f_values().into_iter().enumerate() {
            out.push_str(&format!(
                "{t},{:.9},{:.9},{:.9}\n",
                self.precision[t], self.recall[t], f
            ));
        }
        out
    }
}

/// Per-image precision and recall at every threshold. `None` when the
/// ground truth is empty.
fn image_curve(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    check_shapes(pred, gt, "pr_curve")?;
    if let Some(v) = pred.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("saliency value {v} outside [0, 1]")));
    }
    let cuts: Vec<f32> = (0..NUM_THRESHOLDS).map(threshold).collect();
    // above[k]: pixels salient for exactly thresholds 0..k, i.e. the
    // number of cuts strictly below the value is k.
    let mut pos_hist = vec![0usize; NUM_THRESHOLDS + 1];
    let mut all_hist = vec![0usize; NUM_THRESHOLDS + 1];
    let mut gt_total = 0usize;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let k = cuts.partition_point(|&c| c < p);
        all_hist[k] += 1;
        if g > 0.5 {
            pos_hist[k] += 1;
            gt_total += 1;
        }
    }
    if gt_total == 0 {
        return Ok(None);
    }
    let mut precision = vec![0.0; NUM_THRESHOLDS];
    let mut recall = vec![0.0; NUM_THRESHOLDS];
    // Salient at threshold t iff k > t; accumulate from the top.
    let (mut tp, mut b) = (0usize, 0usize);
    for t in (0..NUM_THRESHOLDS).rev() {
        tp += pos_hist[t + 1];
        b += all_hist[t + 1];
        precision[t] = if b == 0 { 0.0 } else { tp as f64 / b as f64 };
        recall[t] = tp as f64 / gt_total as f64;
    }
    Ok(Some((precision, recall)))
}

pub fn pr_curve(preds: &[Tensor<f32>], gts: &[Tensor<f32>]) -> Result<PrCurve> {
    if preds.len() != gts.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut precision = vec![0.0; NUM_THRESHOLDS];
    let mut recall = vec![0.0; NUM_THRESHOLDS];
    let mut images = 0;
    for (p, g) in preds.iter().zip(gts) {
        if let Some((pi, ri)) = image_curve(p, g)? {
            images += 1;
            precision.iter_mut().zip(&pi).for_each(|(a, v)| *a += v);
            recall.iter_mut().zip(&ri).for_each(|(a, v)| *a += v);
        }
    }
    if images > 0 {
        let n = images as f64;
        precision.iter_mut().for_each(|v| *v /= n);
        recall.iter_mut().for_each(|v| *v /= n);
    }
    Ok(PrCurve {
        precision,
        recall,
        images,
    })
}

pub fn max_f_measure(curve: &PrCurve) -> f64 {
    curve.f_values().into_iter().fold(0.0, f64::max)
}

/// How the headline max-F is aggregated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFMode {
    /// F of the dataset-mean precision and recall, maximized over thresholds.
    #[default]
    DatasetMean,
    /// Per-image maximum F, averaged over images.
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub mae: f64,
    /// Absent when the ground truth is empty.
    pub max_f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub max_f: f64,
    pub mae: f64,
    pub mode: MaxFMode,
    pub curve: PrCurve,
    pub images: Vec<ImageScore>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn evaluate(
    ids: &[String],
    preds: &[Tensor<f32>],
    gts: &[Tensor<f32>],
    mode: MaxFMode,
) -> Result<EvalReport> {
    if ids.len() != preds.len() || preds.len() != gts.len() {
        return Err(Error::Input(format!(
            "{} ids, {} predictions, {} ground truths",
            ids.len(),
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let curve = pr_curve(preds, gts)?;
    let mut images = Vec::with_capacity(ids.len());
    for ((id, p), g) in ids.iter().zip(preds).zip(gts) {
        let max_f = image_curve(p, g)?.map(|(pi, ri)| {
            pi.iter()
                .zip(&ri)
                .map(|(&a, &b)| f_measure(a, b))
                .fold(0.0, f64::max)
        });
        images.push(ImageScore {
            id: id.clone(),
            mae: mae(p, g)?,
            max_f,
        });
    }
    let mean_mae = images.iter().map(|s| s.mae).sum::<f64>() / images.len() as f64;
    let max_f = match mode {
        MaxFMode::DatasetMean => max_f_measure(&curve),
        MaxFMode::PerImage => {
            let scored: Vec<f64> = images.iter().filter_map(|s| s.max_f).collect();
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().sum::<f64>() / scored.len() as f64
            }
        }
    };
    Ok(EvalReport {
        max_f,
        mae: mean_mae,
        mode,
        curve,
        images,
    })
}
