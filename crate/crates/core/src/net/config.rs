//! Architecture description: backbone stages, side-output heads and the
//! short-connection graph between side outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_SIDES: usize = 6;

/// Side-output head widths and kernels at full scale; desk-scale profiles
/// divide the widths.
pub const FULL_HEAD_CHANNELS: [usize; NUM_SIDES] = [128, 128, 256, 256, 512, 512];
pub const HEAD_KERNELS: [usize; NUM_SIDES] = [3, 3, 5, 5, 5, 7];

/// Initial value of every short-connection and fusion weight.
pub const INIT_BLEND_WEIGHT: f64 = 0.1667;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    pub in_channels: usize,
    /// Number of 3×3 convolutions in each of the five stages.
    pub conv_counts: Vec<usize>,
    pub channels: Vec<usize>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl BackboneSpec {
    /// VGG-shaped, narrowed for CPU training.
    pub fn desk() -> Self {
        Self {
            in_channels: 3,
            conv_counts: vec![2, 2, 3, 3, 3],
            channels: vec![16, 32, 64, 128, 128],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_counts.len() != 5 || self.channels.len() != 5 {
            return Err(Error::Config(format!(
                "backbone needs exactly 5 stages, got {} conv counts and {} channel widths",
                self.conv_counts.len(),
                self.channels.len()
            )));
        }
        if self.in_channels == 0
            || self.conv_counts.contains(&0)
            || self.channels.contains(&0)
        {
            return Err(Error::Config("backbone stage sizes must be positive".into()));
        }
        Ok(())
    }

    /// Output stride of tap `m` (1-based): taps 1–5 are the last conv of
    /// each stage, tap 6 is the pooled output of stage 5.
    pub fn tap_stride(m: usize) -> usize {
        1 << (m - 1)
    }

    /// Channel count seen by side head `m` (1-based).
    pub fn tap_channels(&self, m: usize) -> usize {
        self.channels[(m - 1).min(4)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideHeadSpec {
    pub channels: [usize; NUM_SIDES],
    pub kernels: [usize; NUM_SIDES],
}

impl Default for SideHeadSpec {
    fn default() -> Self {
        Self::with_divisor(8).expect("8 divides every head width")
    }
}

impl SideHeadSpec {
    pub fn with_divisor(divisor: usize) -> Result<Self> {
        if divisor == 0 || FULL_HEAD_CHANNELS.iter().any(|c| c % divisor != 0) {
            return Err(Error::Config(format!(
                "head divisor {divisor} must divide every side width {FULL_HEAD_CHANNELS:?}"
            )));
        }
        Ok(Self {
            channels: FULL_HEAD_CHANNELS.map(|c| c / divisor),
            kernels: HEAD_KERNELS,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(
                "side heads need positive widths and odd kernel sizes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    None,
    Pattern1,
    Pattern2,
    Pattern3,
    Full,
    /// Explicit edge list supplied by configuration.
    Custom,
}

impl Pattern {
    pub const NAMED: [Pattern; 5] = [
        Pattern::None,
        Pattern::Pattern1,
        Pattern::Pattern2,
        Pattern::Pattern3,
        Pattern::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::None => "none",
            Pattern::Pattern1 => "pattern1",
            Pattern::Pattern2 => "pattern2",
            Pattern::Pattern3 => "pattern3",
            Pattern::Full => "full",
            Pattern::Custom => "custom",
        }
    }

    /// Edges `(from, to)` with `from > to`, sides numbered 1..=6.
    pub fn edges(self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        match self {
            Pattern::None | Pattern::Custom => {}
            Pattern::Pattern1 => edges.extend((1..=5).map(|m| (m + 1, m))),
            Pattern::Pattern2 => {
                for m in 1..=4 {
                    edges.push((m + 1, m));
                    edges.push((m + 2, m));
                }
            }
            Pattern::Pattern3 => {
                for m in 1..=2 {
                    edges.extend((3..=6).map(|i| (i, m)));
                }
                for m in 3..=4 {
                    edges.push((5, m));
                    edges.push((6, m));
                }
            }
            Pattern::Full => {
                for m in 1..NUM_SIDES {
                    edges.extend((m + 1..=NUM_SIDES).map(|i| (i, m)));
                }
            }
        }
        edges
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Pattern::None),
            "pattern1" => Ok(Pattern::Pattern1),
            "pattern2" => Ok(Pattern::Pattern2),
            "pattern3" => Ok(Pattern::Pattern3),
            "full" => Ok(Pattern::Full),
            "custom" => Ok(Pattern::Custom),
            other => Err(Error::Config(format!(
                "unknown short-connection pattern {other:?} (expected none, pattern1, pattern2, pattern3, full)"
            ))),
        }
    }
}

/// Deeper-to-shallower links between side outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortConnectionGraph {
    pattern: Pattern,
    edges: Vec<(usize, usize)>,
}

impl ShortConnectionGraph {
    pub fn from_pattern(pattern: Pattern) -> Result<Self> {
        if pattern == Pattern::Custom {
            return Err(Error::Config(
                "pattern \"custom\" requires an explicit edge list".into(),
            ));
        }
        Ok(Self {
            pattern,
            edges: pattern.edges(),
        })
    }

    pub fn custom(edges: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = edges.to_vec();
        for &(i, m) in &sorted {
            if !(1..=NUM_SIDES).contains(&i) || !(1..=NUM_SIDES).contains(&m) || i <= m {
                return Err(Error::Config(format!(
                    "short connection ({i}, {m}) must run from a deeper side to a shallower one (6 ≥ i > m ≥ 1)"
                )));
            }
        }
        sorted.sort_unstable_by_key(|&(i, m)| (m, i));
        let before = sorted.len();
        sorted.dedup();
        if sorted.len() != before {
            return Err(Error::Config("duplicate short connection".into()));
        }
        Ok(Self {
            pattern: Pattern::Custom,
            edges: sorted,
        })
    }

    pub fn pattern(&self) -> Pattern {
        self.pattern
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sources feeding side `m`, ascending.
    pub fn incoming(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |&&(_, to)| to == m)
            .map(|&(from, _)| from)
    }
}

/// JSON-facing network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub backbone: BackboneSpec,
    /// Divides the full-scale side-head widths.
    pub head_divisor: usize,
    pub pattern: Pattern,
    /// Overrides `pattern` when present.
    pub edges: Option<Vec<[usize; 2]>>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneSpec::desk(),
            head_divisor: 8,
            pattern: Pattern::Pattern3,
            edges: None,
        }
    }
}

impl NetworkConfig {
    pub fn with_pattern(pattern: Pattern) -> Self {
        Self {
            pattern,
            ..Self::default()
        }
    }

    pub fn heads(&self) -> Result<SideHeadSpec> {
        SideHeadSpec::with_divisor(self.head_divisor)
    }

    pub fn connections(&self) -> Result<ShortConnectionGraph> {
        match &self.edges {
            Some(list) => {
                let pairs: Vec<_> = list.iter().map(|&[i, m]| (i, m)).collect();
                ShortConnectionGraph::custom(&pairs)
            }
            None => ShortConnectionGraph::from_pattern(self.pattern),
        }
    }
}
