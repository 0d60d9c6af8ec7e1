use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::DEFAULT_ATLAS_RESOLUTION;
use crate::render::{Viewpoint, DEFAULT_CAMERA_RADIUS, DEFAULT_FOV_DEG, DEFAULT_RENDER_RESOLUTION};
use crate::sampler::{SamplingSchedule, DEFAULT_GUIDANCE};
use crate::trimap::{BlendConfig, TrimapConfig};

/// Camera direction in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub azimuth: f64,
    pub elevation: f64,
}

impl ViewSpec {
    pub const fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }
}

/// What the object is composited onto before sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Background {
    Solid { color: [f32; 3] },
    /// A photo resized to the backend resolution.
    Plate { path: PathBuf },
}

impl Default for Background {
    fn default() -> Self {
        Background::Solid { color: [0.5; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub rounds: usize,
    /// Number of Laplacian eigenpairs to draw deformations from.
    pub eigenpairs: usize,
    /// Deformation amplitude relative to the bounding radius.
    pub amplitude: f64,
    pub resolution: usize,
    /// Placeholder token for the learned texture.
    pub texture_token: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            eigenpairs: 16,
            amplitude: 0.05,
            resolution: 512,
            texture_token: "<S_texture>".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub prompt: String,
    pub seed: u64,
    /// Painted in order; the first view starts from a blank atlas.
    pub views: Vec<ViewSpec>,
    pub camera_radius: f64,
    pub fov: f64,
    pub atlas_resolution: usize,
    pub render_resolution: usize,
    pub backend_resolution: usize,
    pub guidance_scale: f32,
    pub schedule: SamplingSchedule,
    pub trimap: TrimapConfig,
    pub blend: BlendConfig,
    /// Standard deviation of the projection mask blur, in render pixels.
    pub soft_mask_sigma: f32,
    /// Margin around the tight foreground square, as a fraction of its side.
    pub crop_margin: f64,
    pub background: Background,
    /// Flip the depth conditioning so that far is bright.
    pub depth_invert: bool,
    /// Color of unpainted texels.
    pub atlas_fill: [f32; 3],
    pub gutter_bleed: usize,
    pub dataset: DatasetConfig,
}

/// Eight azimuths at 60 degrees elevation, then top and bottom.
pub fn default_views() -> Vec<ViewSpec> {
    let mut views: Vec<ViewSpec> = (0..8).map(|k| ViewSpec::new(45.0 * k as f64, 60.0)).collect();
    views.push(ViewSpec::new(0.0, 85.0));
    views.push(ViewSpec::new(0.0, -85.0));
    views
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            seed: 0,
            views: default_views(),
            camera_radius: DEFAULT_CAMERA_RADIUS,
            fov: DEFAULT_FOV_DEG,
            atlas_resolution: DEFAULT_ATLAS_RESOLUTION,
            render_resolution: DEFAULT_RENDER_RESOLUTION,
            backend_resolution: 512,
            guidance_scale: DEFAULT_GUIDANCE,
            schedule: SamplingSchedule::default(),
            trimap: TrimapConfig::default(),
            blend: BlendConfig::default(),
            soft_mask_sigma: 9.0,
            crop_margin: 0.1,
            background: Background::default(),
            depth_invert: false,
            atlas_fill: [0.5; 3],
            gutter_bleed: crate::projection::GUTTER_BLEED_TEXELS,
            dataset: DatasetConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.views.is_empty() {
            return bad("at least one view is required");
        }
        if self.atlas_resolution == 0 || self.render_resolution == 0 || self.backend_resolution == 0 {
            return bad("resolutions must be positive");
        }
        if !(self.camera_radius > 0.0) || !(self.fov > 0.0 && self.fov < 180.0) {
            return bad("camera radius must be positive and fov in (0, 180)");
        }
        if self.crop_margin < 0.0 || self.soft_mask_sigma < 0.0 {
            return bad("crop margin and mask sigma must be non-negative");
        }
        if self.blend.checker_period == 0 {
            return bad("checker period must be positive");
        }
        self.schedule
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn viewpoint(&self, spec: &ViewSpec) -> Viewpoint {
        Viewpoint {
            radius: self.camera_radius,
            azimuth: spec.azimuth,
            elevation: spec.elevation,
            fov: self.fov,
            resolution: self.render_resolution,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_ten_views() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.views.len(), 10);
        assert_eq!(cfg.views[3], ViewSpec::new(135.0, 60.0));
        assert_eq!(cfg.views[9].elevation, -85.0);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.prompt = "a wooden chair".into();
        cfg.background = Background::Plate { path: "bg.png".into() };
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("prompt = \"x\"\nseed = 4\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.atlas_resolution, 1024);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("views = []").is_err());
        assert!(RunConfig::from_toml("atlas_resolution = 0").is_err());
        assert!(RunConfig::from_toml("no_such_key = 1").is_err());
        let gap = "[[schedule.spans]]\nstart = 1\nend = 50\nmode = \"depth\"\n";
        assert!(RunConfig::from_toml(gap).is_err());
    }
}
