//! JSON run configuration shared by the subcommands.

use std::path::{Path, PathBuf};

use dss_core::crf::CrfParams;
use dss_core::data::DEFAULT_MEANS;
use dss_core::net::{NetworkConfig, TrainConfig};
use dss_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub crf: CrfParams,
    /// Per-channel means subtracted from `[0, 1]` pixels.
    pub means: [f32; 3],
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            crf: CrfParams::default(),
            means: DEFAULT_MEANS,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config; relative manifest paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.train_manifest, &mut cfg.paths.eval_manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [r#"{"sed": 1}"#, r#"{"train": {"learning_rate": 1}}"#, r#"{"crf": {"w3": 1}}"#] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.train.epochs = 3;
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.train_config().seed, 7);
    }
}
