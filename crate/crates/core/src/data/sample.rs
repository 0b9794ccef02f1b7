use crate::data::netpbm::Raster;
use crate::error::{Error, Result};
use crate::net::model::INPUT_MULTIPLE;
use crate::tensor::Tensor;

/// Per-channel mean subtracted after scaling to `[0, 1]`.
pub const DEFAULT_MEANS: [f32; 3] = [0.5, 0.5, 0.5];

/// One training or evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `1×3×H×W`, normalized and padded.
    pub image: Tensor<f32>,
    /// `1×1×H×W` in `[0, 1]`, padded like the image.
    pub gt: Tensor<f32>,
    /// Size before padding, `(height, width)`.
    pub original: (usize, usize),
}

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn padded_len(n: usize) -> usize {
    n.div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE
}

/// Reflect-pads every plane on the bottom and right to multiples of 32.
pub fn pad_to_multiple(t: &Tensor<f32>) -> Tensor<f32> {
    let [n, c, h, w] = t.shape();
    let (ph, pw) = (padded_len(h), padded_len(w));
    if (ph, pw) == (h, w) {
        return t.clone();
    }
    let mut out = Tensor::zeros([n, c, ph, pw]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..ph {
                let sy = reflect(y as isize, h);
                for x in 0..pw {
                    let i = out.index(b, ch, y, x);
                    out.data_mut()[i] = t.at(b, ch, sy, reflect(x as isize, w));
                }
            }
        }
    }
    out
}

/// Top-left `h×w` window.
pub fn crop(t: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let [n, c, th, tw] = t.shape();
    assert!(h <= th && w <= tw, "crop larger than tensor");
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let start = t.index(b, ch, y, 0);
                data.extend_from_slice(&t.data()[start..start + w]);
            }
        }
    }
    Tensor::from_vec([n, c, h, w], data).expect("crop dims")
}

/// Planar `1×3×H×W` normalized image from an interleaved RGB raster.
pub fn image_tensor(raster: &Raster, means: [f32; 3]) -> Result<Tensor<f32>> {
    if raster.channels != 3 {
        return Err(Error::Input("expected an RGB raster".into()));
    }
    let (w, h) = (raster.width, raster.height);
    let mut data = vec![0.0f32; 3 * w * h];
    for (p, px) in raster.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + p] = px[c] as f32 / 255.0 - means[c];
        }
    }
    Tensor::from_vec([1, 3, h, w], data)
}

pub fn gray_tensor(raster: &Raster) -> Result<Tensor<f32>> {
    if raster.channels != 1 {
        return Err(Error::Input("expected a grayscale raster".into()));
    }
    Tensor::from_vec([1, 1, raster.height, raster.width], raster.to_unit())
}

/// Grayscale raster from a `1×1×H×W` map in `[0, 1]`.
pub fn map_to_raster(map: &Tensor<f32>) -> Result<Raster> {
    Raster::from_unit_gray(map.width(), map.height(), map.data())
}

impl Sample {
    pub fn from_rasters(id: impl Into<String>, image: &Raster, gt: &Raster, means: [f32; 3]) -> Result<Self> {
        let id = id.into();
        if (image.width, image.height) != (gt.width, gt.height) {
            return Err(Error::Input(format!(
                "{id}: image is {}×{} but ground truth is {}×{}",
                image.width, image.height, gt.width, gt.height
            )));
        }
        let image_t = image_tensor(image, means)?;
        let gt_t = gray_tensor(gt)?;
        Ok(Self {
            id,
            original: (image.height, image.width),
            image: pad_to_multiple(&image_t),
            gt: pad_to_multiple(&gt_t),
        })
    }

    /// Mirror about the vertical axis; the id gains an `_f` suffix.
    pub fn hflip(&self) -> Self {
        Self {
            id: format!("{}_f", self.id),
            image: self.image.flip_horizontal(),
            gt: self.gt.flip_horizontal(),
            original: self.original,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.image.height(), self.image.width())
    }
}
