//! Fully connected two-label CRF over a saliency map, refined by mean-field
//! inference with truncated direct summation.

use serde::{Deserialize, Serialize};

use crate::data::Raster;
use crate::error::{Error, Result};
use crate::ops::sigmoid;
use crate::tensor::Tensor;

/// Saliency clamp before taking logs.
pub const SALIENCY_EPS: f64 = 1e-6;
/// Largest pixel count accepted by [`exact_map_small`].
pub const EXACT_MAP_MAX_PIXELS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfParams {
    pub w1: f64,
    pub w2: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_gamma: f64,
    pub tau: f64,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w1: 3.0,
            w2: 3.0,
            sigma_alpha: 60.0,
            sigma_beta: 8.0,
            sigma_gamma: 5.0,
            tau: 1.05,
            iterations: 10,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_alpha, self.sigma_beta, self.sigma_gamma];
        if sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("CRF sigmas must be positive, got {sigmas:?}")));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("CRF tau must be positive, got {}", self.tau)));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) || !(self.w1 + self.w2).is_finite() {
            return Err(Error::Config("CRF kernel weights must be finite and ≥ 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("CRF needs at least one iteration".into()));
        }
        Ok(())
    }

    /// Pixel radius beyond which both kernels are dropped.
    pub fn truncation_radius(&self) -> f64 {
        3.0 * self.sigma_alpha.max(self.sigma_gamma)
    }
}

/// Per-pixel label costs, `cost[i] = [θ(background), θ(salient)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    pub width: usize,
    pub height: usize,
    pub cost: Vec<[f64; 2]>,
}

impl UnaryField {
    /// `Q(salient)` of the unary-only distribution.
    pub fn softmin(&self) -> Vec<f64> {
        self.cost.iter().map(|c| posterior(c[0], c[1])).collect()
    }

    /// Per-pixel argmin, ties to background.
    pub fn argmin(&self) -> Vec<u8> {
        self.cost.iter().map(|c| u8::from(c[1] < c[0])).collect()
    }
}

/// `Q(1)` for energies `e0`, `e1`.
fn posterior(e0: f64, e1: f64) -> f64 {
    1.0 / (1.0 + (e1 - e0).exp())
}

fn map_dims(s: &Tensor<f32>) -> Result<(usize, usize)> {
    let [n, c, h, w] = s.shape();
    if n != 1 || c != 1 {
        return Err(Error::Input(format!(
            "saliency map must be a single channel, got {:?}",
            s.shape()
        )));
    }
    Ok((h, w))
}

pub fn unary_from_saliency(s: &Tensor<f32>, tau: f64) -> Result<UnaryField> {
    let (height, width) = map_dims(s)?;
    if let Some(v) = s.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("saliency value {v} outside [0, 1]")));
    }
    let h0 = sigmoid(0.0f64);
    let h1 = sigmoid(1.0f64);
    let cost = s
        .data()
        .iter()
        .map(|&v| {
            let v = (v as f64).clamp(SALIENCY_EPS, 1.0 - SALIENCY_EPS);
            [-(1.0 - v).ln() / (tau * h0), -v.ln() / (tau * h1)]
        })
        .collect();
    Ok(UnaryField {
        width,
        height,
        cost,
    })
}

/// Pairwise kernel weights for one image, precomputed as lookup tables over
/// spatial offsets and squared color distances.
pub struct PairwiseKernel<'a> {
    image: &'a Raster,
    radius2: usize,
    /// `w1·exp(−d²/2σα²)` indexed by `|dy|·width + |dx|`.
    bilateral_spatial: Vec<f64>,
    /// `w2·exp(−d²/2σγ²)`, same indexing.
    spatial: Vec<f64>,
    /// `exp(−c/2σβ²)` for integer squared color distance `c`.
    color: Vec<f64>,
    /// Per-row half width of the truncation disc.
    reach: Vec<usize>,
    /// Pair weights in [`PairwiseKernel::filter`] visiting order, kept for
    /// small images.
    cached: Option<Vec<f64>>,
}

/// Largest number of pair weights held in memory (64 MiB).
const PAIR_CACHE_LIMIT: usize = 1 << 23;

impl<'a> PairwiseKernel<'a> {
    pub fn new(image: &'a Raster, params: &CrfParams) -> Result<Self> {
        params.validate()?;
        let (w, h) = (image.width, image.height);
        let r = params.truncation_radius();
        let radius2 = (r * r).floor() as usize;
        let mut bilateral_spatial = vec![0.0; w * h];
        let mut spatial = vec![0.0; w * h];
        for dy in 0..h {
            for dx in 0..w {
                let d2 = dy * dy + dx * dx;
                if d2 > radius2 {
                    continue;
                }
                let d2 = d2 as f64;
                bilateral_spatial[dy * w + dx] =
                    params.w1 * (-d2 / (2.0 * params.sigma_alpha.powi(2))).exp();
                spatial[dy * w + dx] = params.w2 * (-d2 / (2.0 * params.sigma_gamma.powi(2))).exp();
            }
        }
        let max_c2 = 255 * 255 * image.channels;
        let color = (0..=max_c2)
            .map(|c| (-(c as f64) / (2.0 * params.sigma_beta.powi(2))).exp())
            .collect();
        let reach = (0..h)
            .map(|dy| {
                let rem = radius2.saturating_sub(dy * dy);
                ((rem as f64).sqrt().floor() as usize).min(w.saturating_sub(1))
            })
            .collect();
        let mut kernel = Self {
            image,
            radius2,
            bilateral_spatial,
            spatial,
            color,
            reach,
            cached: None,
        };
        let n = w * h;
        if n * n.saturating_sub(1) / 2 <= PAIR_CACHE_LIMIT {
            let mut weights = Vec::new();
            kernel.visit_pairs(|i, j| weights.push(kernel.weight(i, j)));
            kernel.cached = Some(weights);
        }
        Ok(kernel)
    }

    fn color_distance2(&self, i: usize, j: usize) -> usize {
        let c = self.image.channels;
        let (a, b) = (&self.image.data[i * c..i * c + c], &self.image.data[j * c..j * c + c]);
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as isize - y as isize;
                (d * d) as usize
            })
            .sum()
    }

    /// Combined kernel `k(i, j)` including truncation; zero for `i == j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let w = self.image.width;
        let (dy, dx) = ((i / w).abs_diff(j / w), (i % w).abs_diff(j % w));
        if dy * dy + dx * dx > self.radius2 {
            return 0.0;
        }
        let o = dy * w + dx;
        self.bilateral_spatial[o] * self.color[self.color_distance2(i, j)] + self.spatial[o]
    }

    /// Calls `f(i, j)` for every unordered pair inside the truncation disc,
    /// `j` after `i` in raster order.
    fn visit_pairs(&self, mut f: impl FnMut(usize, usize)) {
        let (w, h) = (self.image.width, self.image.height);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                for dy in 0..h - y {
                    if dy * dy > self.radius2 {
                        break;
                    }
                    let reach = self.reach[dy];
                    let x0 = if dy == 0 { x + 1 } else { x.saturating_sub(reach) };
                    let x1 = (x + reach).min(w - 1);
                    let row = (y + dy) * w;
                    for xj in x0..=x1 {
                        f(i, row + xj);
                    }
                }
            }
        }
    }

    /// `Σ_{j≠i} k(i, j)·v_j` for every `i`.
    pub fn filter(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        let mut n = 0;
        self.visit_pairs(|i, j| {
            let k = match &self.cached {
                Some(c) => c[n],
                None => self.weight(i, j),
            };
            n += 1;
            out[i] += k * v[j];
            out[j] += k * v[i];
        });
        out
    }
}

fn check_image(unary: &UnaryField, image: &Raster) -> Result<()> {
    if image.width != unary.width || image.height != unary.height {
        return Err(Error::Input(format!(
            "image is {}×{} but saliency map is {}×{}",
            image.width, image.height, unary.width, unary.height
        )));
    }
    Ok(())
}

/// Messages `[m(background), m(salient)]` per pixel for the posterior `q`
/// (`Q(salient)` per pixel), using the Potts compatibility.
pub fn pairwise_message(q: &[f64], image: &Raster, params: &CrfParams) -> Result<Vec<[f64; 2]>> {
    if q.len() != image.width * image.height {
        return Err(Error::Input(format!(
            "{} posterior values for a {}×{} image",
            q.len(),
            image.width,
            image.height
        )));
    }
    let kernel = PairwiseKernel::new(image, params)?;
    let q0: Vec<f64> = q.iter().map(|v| 1.0 - v).collect();
    let m_salient = kernel.filter(&q0);
    let m_background = kernel.filter(q);
    Ok(m_background.into_iter().zip(m_salient).map(|(a, b)| [a, b]).collect())
}

/// Refined saliency `Q(salient)`.
pub fn mean_field_infer(s: &Tensor<f32>, image: &Raster, params: &CrfParams) -> Result<Tensor<f32>> {
    mean_field_observed(s, image, params, |_, _| {})
}

/// As [`mean_field_infer`], calling `observe(iteration, q)` after every
/// update with the full two-label posterior.
pub fn mean_field_observed<F>(
    s: &Tensor<f32>,
    image: &Raster,
    params: &CrfParams,
    mut observe: F,
) -> Result<Tensor<f32>>
where
    F: FnMut(usize, &[[f64; 2]]),
{
    params.validate()?;
    let unary = unary_from_saliency(s, params.tau)?;
    check_image(&unary, image)?;
    let kernel = PairwiseKernel::new(image, params)?;
    let ones = vec![1.0; unary.cost.len()];
    let degree = kernel.filter(&ones);
    let mut q = unary.softmin();
    let mut full = vec![[0.0; 2]; q.len()];
    for iter in 0..params.iterations {
        // Potts: m(background) = Σ k·Q(1), m(salient) = Σ k·Q(0) = degree − m(background).
        let m1 = kernel.filter(&q);
        for (i, c) in unary.cost.iter().enumerate() {
            let e0 = c[0] + m1[i];
            let e1 = c[1] + (degree[i] - m1[i]);
            let q1 = posterior(e0, e1);
            if !q1.is_finite() {
                return Err(Error::Numeric {
                    stage: "mean-field iteration",
                    index: iter,
                });
            }
            q[i] = q1;
            full[i] = [1.0 - q1, q1];
        }
        observe(iter, &full);
    }
    Tensor::from_vec(s.shape(), q.into_iter().map(|v| v as f32).collect())
}

/// `Σ_i θ_i(x_i) + Σ_{i<j} μ(x_i, x_j)·k(i, j)`.
pub fn energy(labels: &[u8], unary: &UnaryField, kernel: &PairwiseKernel<'_>) -> f64 {
    let mut e: f64 = labels.iter().zip(&unary.cost).map(|(&l, c)| c[l as usize]).sum();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] != labels[j] {
                e += kernel.weight(i, j);
            }
        }
    }
    e
}

/// Minimum-energy labeling by enumeration; ties go to the lowest labeling
/// in binary order.
pub fn exact_map_small(s: &Tensor<f32>, image: &Raster, params: &CrfParams) -> Result<Vec<u8>> {
    params.validate()?;
    let unary = unary_from_saliency(s, params.tau)?;
    check_image(&unary, image)?;
    let n = unary.cost.len();
    if n > EXACT_MAP_MAX_PIXELS {
        return Err(Error::Input(format!(
            "exact MAP enumerates 2^N labelings; {n} pixels exceeds {EXACT_MAP_MAX_PIXELS}"
        )));
    }
    let kernel = PairwiseKernel::new(image, params)?;
    let mut best = (f64::INFINITY, vec![0u8; n]);
    let mut labels = vec![0u8; n];
    for code in 0u32..(1 << n) {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = ((code >> i) & 1) as u8;
        }
        let e = energy(&labels, &unary, &kernel);
        if e < best.0 {
            best = (e, labels.clone());
        }
    }
    Ok(best.1)
}
