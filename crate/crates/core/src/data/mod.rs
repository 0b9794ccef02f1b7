//! Rasters, samples, the synthetic generator and dataset manifests.

pub mod manifest;
pub mod netpbm;
pub mod sample;
pub mod synth;

use std::path::Path;

use crate::error::{Error, Result};

pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use netpbm::{load_pgm, load_ppm, Raster};
pub use sample::{Sample, DEFAULT_MEANS};
pub use synth::{synth_dataset, synth_range, synth_rasters};

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
