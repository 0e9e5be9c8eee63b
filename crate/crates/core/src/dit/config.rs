use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which view the model maps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// First-frame view → video view.
    #[serde(rename = "f2v", alias = "first_to_video")]
    FirstToVideo,
    /// Video view → first-frame view.
    #[serde(rename = "v2f", alias = "video_to_first")]
    VideoToFirst,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::FirstToVideo => "f2v",
            Direction::VideoToFirst => "v2f",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f2v" | "first_to_video" => Ok(Direction::FirstToVideo),
            "v2f" | "video_to_first" => Ok(Direction::VideoToFirst),
            other => Err(format!("unknown direction `{other}` (expected f2v or v2f)")),
        }
    }
}

/// Per-stream probability of replacing a conditioning stream by its null
/// token during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionDropout {
    pub trajectories: f64,
    pub context: f64,
    pub reference: f64,
}

impl Default for ConditionDropout {
    fn default() -> Self {
        Self {
            trajectories: 0.05,
            context: 0.05,
            reference: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub frames: usize,
    pub grid: usize,
    pub dct_order: usize,
    /// Side of the square context grid.
    pub context_size: usize,
    /// Side of the square context patches; each patch is one token.
    pub context_patch: usize,
    pub direction: Direction,
    pub dropout: ConditionDropout,
}

impl Default for DitConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            model_dim: 128,
            heads: 4,
            mlp_ratio: 4,
            frames: 24,
            grid: 12,
            dct_order: 20,
            context_size: 16,
            context_patch: 4,
            direction: Direction::FirstToVideo,
            dropout: ConditionDropout::default(),
        }
    }
}

impl DitConfig {
    /// Clip length used for full-size training runs.
    pub const FULL_FRAMES: usize = 73;

    /// Small configuration that trains on a desktop CPU in minutes.
    pub fn desk() -> Self {
        Self {
            layers: 4,
            model_dim: 64,
            heads: 4,
            mlp_ratio: 2,
            grid: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::ConfigMismatch(m));
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if !self.model_dim.is_multiple_of(2) {
            return fail("model_dim must be even (sinusoidal timestep features)".into());
        }
        if self.dct_order == 0 || self.dct_order > self.frames {
            return fail(format!("dct_order {} must be in [1, frames={}]", self.dct_order, self.frames));
        }
        if self.grid == 0 || self.mlp_ratio == 0 {
            return fail("grid and mlp_ratio must be positive".into());
        }
        if self.context_patch == 0 || !self.context_size.is_multiple_of(self.context_patch) {
            return fail(format!(
                "context_size {} not divisible by context_patch {}",
                self.context_size, self.context_patch
            ));
        }
        Ok(())
    }

    pub fn trajectory_tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn trajectory_features(&self) -> usize {
        2 * self.dct_order
    }

    pub fn context_tokens(&self) -> usize {
        let per_side = self.context_size / self.context_patch;
        per_side * per_side
    }

    pub fn context_features(&self) -> usize {
        self.context_patch * self.context_patch
    }

    /// Total sequence length seen by the transformer blocks.
    pub fn sequence_len(&self) -> usize {
        self.frames + self.trajectory_tokens() + self.context_tokens()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        DitConfig::default().validate().unwrap();
        DitConfig::desk().validate().unwrap();
        let full = DitConfig {
            frames: DitConfig::FULL_FRAMES,
            grid: 25,
            ..DitConfig::default()
        };
        full.validate().unwrap();
        assert_eq!(full.layers, 8);
        assert_eq!(full.trajectory_features(), 40);
        assert_eq!(full.context_tokens(), 16);
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            DitConfig { heads: 3, ..DitConfig::default() },
            DitConfig { layers: 0, ..DitConfig::default() },
            DitConfig { dct_order: 30, ..DitConfig::default() },
            DitConfig { context_patch: 5, ..DitConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(ModelError::ConfigMismatch(_))));
        }
    }

    #[test]
    fn direction_names() {
        assert_eq!("first_to_video".parse::<Direction>().unwrap(), Direction::FirstToVideo);
        assert_eq!(serde_json::to_string(&Direction::VideoToFirst).unwrap(), "\"v2f\"");
        assert!("sideways".parse::<Direction>().is_err());
    }
}
