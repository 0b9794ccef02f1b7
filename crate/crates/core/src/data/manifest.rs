//! Plain-text dataset lists: one `image<TAB>gt` pair per line.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::netpbm::{load_pgm, load_ppm};
use crate::data::sample::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// File stem of the image.
    pub id: String,
    pub image: PathBuf,
    pub gt: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

const SPLIT_PREFIX: &str = "# split:";

impl DatasetManifest {
    /// Parses manifest text. Relative paths resolve against `base`.
    /// A `# split: <tag>` comment sets the split; other `#` lines are ignored.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut manifest = DatasetManifest::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if let Some(tag) = line.strip_prefix(SPLIT_PREFIX) {
                manifest.split = tag.trim().parse()?;
                continue;
            }
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (image, gt) = line.split_once('\t').ok_or_else(|| {
                Error::Input(format!("manifest line {}: expected image<TAB>gt", lineno + 1))
            })?;
            let image = base.join(image.trim());
            let gt = base.join(gt.trim());
            let id = image
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Input(format!("manifest line {}: bad image path", lineno + 1)))?
                .to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::Input(format!("manifest line {}: duplicate id {id:?}", lineno + 1)));
            }
            manifest.entries.push(ManifestEntry { id, image, gt });
        }
        Ok(manifest)
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let manifest = Self::parse(&text, base)?;
        for e in &manifest.entries {
            for p in [&e.image, &e.gt] {
                if !p.is_file() {
                    return Err(Error::Input(format!("{}: referenced file missing", p.display())));
                }
            }
        }
        Ok(manifest)
    }

    /// Serializes with paths relative to `base` when possible.
    pub fn render(&self, base: &Path) -> String {
        let rel = |p: &Path| -> String {
            p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
        };
        let mut out = format!("{SPLIT_PREFIX} {}\n", self.split);
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\n", rel(&e.image), rel(&e.gt)));
        }
        out
    }

    pub fn load_samples(&self, means: [f32; 3]) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|e| Sample::from_rasters(e.id.clone(), &load_ppm(&e.image)?, &load_pgm(&e.gt)?, means))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_keeps_order() {
        let text = "# split: test\n# note\nb.ppm\tb.pgm\n\na.ppm\ta.pgm\n";
        let m = DatasetManifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.split, Split::Test);
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(m.entries[0].gt, Path::new("/data/b.pgm"));
        assert_eq!(DatasetManifest::parse(&m.render(Path::new("/data")), Path::new("/data")).unwrap(), m);
    }

    #[test]
    fn duplicates_and_bad_lines_rejected() {
        assert!(DatasetManifest::parse("a.ppm\ta.pgm\na.ppm\tx.pgm\n", Path::new(".")).is_err());
        assert!(DatasetManifest::parse("a.ppm a.pgm\n", Path::new(".")).is_err());
    }

    #[test]
    fn missing_files_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "nope.ppm\tnope.pgm\n").unwrap();
        let err = DatasetManifest::load(&path).unwrap_err().to_string();
        assert!(err.contains("nope.ppm"), "{err}");
    }
}
