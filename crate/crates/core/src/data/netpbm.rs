//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit raster, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels || !(channels == 1 || channels == 3) {
            return Err(Error::Input(format!(
                "raster {width}×{height}×{channels} does not match {} bytes",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    /// Samples scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&b| b as f32 / 255.0).collect()
    }

    /// Quantizes `[0, 1]` values (clamped) to a grayscale raster.
    pub fn from_unit_gray(width: usize, height: usize, values: &[f32]) -> Result<Self> {
        let data = values.iter().map(|&v| quantize(v)).collect();
        Self::gray(width, height, data)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Decodes a P5 or P6 image. `channels` selects which magic is accepted.
pub fn decode(bytes: &[u8], channels: usize) -> Result<Raster> {
    let magic: &[u8] = if channels == 1 { b"P5" } else { b"P6" };
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(cur.err(format!(
            "expected magic {}",
            std::str::from_utf8(magic).unwrap_or("?")
        )));
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            message: format!("maxval {maxval} unsupported (only 255)"),
        });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected single whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    Raster::new(width, height, channels, payload[..need].to_vec())
}

pub fn encode(raster: &Raster) -> Vec<u8> {
    let magic = if raster.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.data);
    out
}

fn load(path: &Path, channels: usize) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, channels).map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn load_pgm(path: &Path) -> Result<Raster> {
    load(path, 1)
}

pub fn load_ppm(path: &Path) -> Result<Raster> {
    load(path, 3)
}

/// Writes atomically.
pub fn save(path: &Path, raster: &Raster) -> Result<()> {
    super::write_atomic(path, &encode(raster))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_white_pixel() {
        let r = decode(b"P5\n1 1\n255\n\xff", 1).unwrap();
        assert_eq!(r.to_unit(), vec![1.0]);
    }

    #[test]
    fn rgb_fixture_decodes_to_unit_channels() {
        let mut bytes = b"P6\n# fixture\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0, 255]);
        let r = decode(&bytes, 3).unwrap();
        assert_eq!((r.width, r.height), (2, 2));
        assert_eq!(r.pixel(0, 0), &[0, 0, 0]);
        assert_eq!(r.pixel(1, 0), &[255, 0, 0]);
        assert_eq!(r.pixel(0, 1), &[0, 255, 0]);
        assert_eq!(r.pixel(1, 1), &[0, 0, 255]);
        let unit = r.to_unit();
        assert_eq!(&unit[3..6], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn errors_carry_offsets() {
        match decode(b"P2\n1 1\n255\n\x00", 1) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode(b"P5\n1 1\n65535\n\x00\x00", 1) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 7);
                assert!(message.contains("maxval"));
            }
            other => panic!("{other:?}"),
        }
        match decode(b"P5\n2 2\n255\n\x00\x00", 1) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 13);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(decode(b"P5\nx 1\n255\n\x00", 1).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(w in 1usize..9, h in 1usize..9, rgb in any::<bool>(), seed in any::<u64>()) {
            let channels = if rgb { 3 } else { 1 };
            let mut rng = crate::rng::SeededRng::new(seed);
            let data = (0..w * h * channels).map(|_| rng.below(256) as u8).collect();
            let r = Raster::new(w, h, channels, data).unwrap();
            prop_assert_eq!(decode(&encode(&r), channels).unwrap(), r);
        }
    }
}
