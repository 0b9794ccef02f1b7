//! Seeded synthetic saliency scenes: textured low-contrast backgrounds with
//! one to three bright, saturated superellipse objects.

use crate::data::netpbm::Raster;
use crate::data::sample::{Sample, DEFAULT_MEANS};
use crate::error::{Error, Result};
use crate::net::model::INPUT_MULTIPLE;
use crate::rng::SeededRng;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Blob {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    exponent: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
}

impl Blob {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u.abs().powf(self.exponent) + v.abs().powf(self.exponent) <= 1.0
    }
}

/// Image and exact object mask for sample `index` of the stream `seed`.
pub fn synth_rasters(seed: u64, index: u64, size: usize) -> Result<(Raster, Raster)> {
    if size == 0 || !size.is_multiple_of(INPUT_MULTIPLE) {
        return Err(Error::Input(format!(
            "synthetic image size {size} must be a positive multiple of {INPUT_MULTIPLE}"
        )));
    }
    let mut rng = SeededRng::fork(seed, index);
    let s = size as f64;

    let bg_hue = rng.next_f64();
    let bg_sat = rng.uniform(0.05, 0.35);
    let bg_val = rng.uniform(0.15, 0.45);
    let grad_angle = rng.uniform(0.0, std::f64::consts::TAU);
    let grad_amp = rng.uniform(0.0, 0.12);
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.uniform(0.05, 0.5),
                rng.uniform(0.0, std::f64::consts::TAU),
                rng.uniform(0.0, std::f64::consts::TAU),
                rng.uniform(0.02, 0.06),
            ]
        })
        .collect();

    let count = 1 + rng.below(3);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let angle = rng.uniform(0.0, std::f64::consts::PI);
            Blob {
                cx: rng.uniform(0.2, 0.8) * s,
                cy: rng.uniform(0.2, 0.8) * s,
                a: rng.uniform(0.1, 0.22) * s,
                b: rng.uniform(0.1, 0.22) * s,
                exponent: rng.uniform(1.5, 4.0),
                cos: angle.cos(),
                sin: angle.sin(),
                color: hsv_to_rgb(rng.next_f64(), rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0)),
            }
        })
        .collect();

    let mut image = Vec::with_capacity(size * size * 3);
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let noise = 0.03 * rng.normal();
            let owner = blobs.iter().rev().find(|b| b.contains(px, py));
            let rgb = match owner {
                Some(b) => b.color.map(|c| c + noise),
                None => {
                    let ramp = ((px / s - 0.5) * grad_angle.cos() + (py / s - 0.5) * grad_angle.sin()) * 2.0;
                    let texture: f64 = waves
                        .iter()
                        .map(|&[freq, dir, phase, amp]| {
                            amp * ((px * dir.cos() + py * dir.sin()) * freq + phase).sin()
                        })
                        .sum();
                    let v = bg_val + grad_amp * ramp + texture;
                    hsv_to_rgb(bg_hue, bg_sat, v.clamp(0.0, 1.0)).map(|c| c + noise)
                }
            };
            image.extend(rgb.map(to_byte));
            mask.push(if owner.is_some() { 255 } else { 0 });
        }
    }
    Ok((Raster::rgb(size, size, image)?, Raster::gray(size, size, mask)?))
}

/// `n` samples, deterministic per `(seed, index)`; ids are `synth_{index:05}`.
pub fn synth_dataset(seed: u64, n: usize, size: usize) -> Result<Vec<Sample>> {
    synth_range(seed, 0, n, size)
}

/// Samples `start..start + n` of the stream, e.g. a held-out split.
pub fn synth_range(seed: u64, start: usize, n: usize, size: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Input("synthetic dataset needs at least one sample".into()));
    }
    (start..start + n)
        .map(|i| {
            let (img, gt) = synth_rasters(seed, i as u64, size)?;
            Sample::from_rasters(sample_id(i), &img, &gt, DEFAULT_MEANS)
        })
        .collect()
}

pub fn sample_id(index: usize) -> String {
    format!("synth_{index:05}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_dataset(7, 3, 32).unwrap();
        let b = synth_dataset(7, 3, 32).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(8, 3, 32).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn masks_binary_and_nonempty() {
        for s in synth_dataset(1, 20, 64).unwrap() {
            assert!(s.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(s.gt.data().iter().any(|&v| v == 1.0));
            assert_eq!(s.dims(), (64, 64));
        }
    }

    #[test]
    fn size_must_be_multiple_of_32() {
        assert!(synth_rasters(0, 0, 48).is_err());
        assert!(synth_dataset(0, 0, 64).is_err());
    }

    #[test]
    fn mean_coverage_in_band() {
        let samples = synth_dataset(42, 200, 64).unwrap();
        let cov: f64 = samples
            .iter()
            .map(|s| s.gt.data().iter().filter(|&&v| v > 0.5).count() as f64 / s.gt.len() as f64)
            .sum::<f64>()
            / samples.len() as f64;
        assert!((0.10..=0.40).contains(&cov), "coverage {cov}");
    }
}
