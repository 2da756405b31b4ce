//! Tolerances, windows and switches for a pipeline run, read from TOML.
//!
//! Every field has a default, so an empty file is a valid config. Unknown
//! keys are rejected to catch typos.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hands::DEFAULT_CONFIDENCE;
use crate::trajectory::{Norm, OrientationRemoval, SpeedAlignOptions, HEADING_EPS};

/// How a ground-plane heading angle drives the heading rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingMode {
    /// Rotate so the body's forward axis (+z) follows the path.
    #[default]
    Facing,
    /// Use the path angle, measured from +x, unchanged.
    Literal,
}

impl HeadingMode {
    /// Angle fed to the heading matrix for a path angle `psi`.
    pub fn angle(self, psi: f64) -> f64 {
        match self {
            HeadingMode::Facing => std::f64::consts::FRAC_PI_2 - psi,
            HeadingMode::Literal => psi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub norm: Norm,
    pub rescale: bool,
    pub heading_window: usize,
    pub heading_eps: f64,
    pub heading_mode: HeadingMode,
    pub orientation_removal: OrientationRemoval,
    pub ground: bool,
    pub ground_window: usize,
    /// Lift drawn pixels with the bundle's depth maps when present.
    pub use_depth: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            norm: Norm::L1,
            rescale: true,
            heading_window: 9,
            heading_eps: HEADING_EPS,
            heading_mode: HeadingMode::Facing,
            orientation_removal: OrientationRemoval::Full,
            ground: true,
            ground_window: 5,
            use_depth: true,
        }
    }
}

impl TrajectoryConfig {
    pub fn speed_options(&self) -> SpeedAlignOptions {
        SpeedAlignOptions {
            norm: self.norm,
            rescale: self.rescale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandsConfig {
    pub min_confidence: f64,
}

impl Default for HandsConfig {
    fn default() -> Self {
        HandsConfig {
            min_confidence: DEFAULT_CONFIDENCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub blend_window: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { blend_window: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub depth_pfm: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 512,
            height: 512,
            depth_pfm: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Gravity direction in the bundle's world coordinates.
    pub gravity: [f64; 3],
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            gravity: [0.0, -1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub trajectory: TrajectoryConfig,
    pub hands: HandsConfig,
    #[serde(rename = "loop")]
    pub looping: LoopConfig,
    pub render: RenderConfig,
    pub world: WorldConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(m) => Error::parse(path, m),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trajectory;
        if t.heading_window == 0 {
            return Err(Error::validation("trajectory.heading_window must be at least 1"));
        }
        if t.ground_window.is_multiple_of(2) {
            return Err(Error::validation("trajectory.ground_window must be odd"));
        }
        if !(t.heading_eps >= 0.0 && t.heading_eps.is_finite()) {
            return Err(Error::validation("trajectory.heading_eps must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.hands.min_confidence) {
            return Err(Error::validation("hands.min_confidence must lie in [0, 1]"));
        }
        if self.render.width == 0 || self.render.height == 0 {
            return Err(Error::validation("render resolution must be positive"));
        }
        let g = self.world.gravity;
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::validation("world.gravity must be a non-zero vector"));
        }
        Ok(())
    }

    /// Unit gravity direction.
    pub fn gravity(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::from(self.world.gravity).normalize()
    }
}
