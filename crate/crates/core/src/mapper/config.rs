use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::OdometryParams;
use crate::graph::{LmParams, DEFAULT_HUBER_K};
use crate::render::DensifyThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMode {
    /// Ring by ring outward from the landmark with pose refinement.
    Incremental,
    /// Every frame at once from graph poses, without refinement.
    Batch,
}

/// Gaussian learning rates for Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    /// Meters.
    pub mean: f64,
    pub log_scale: f64,
    pub logit_opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 2e-3,
            log_scale: 5e-3,
            logit_opacity: 2.5e-2,
            color: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    /// Map steps between densification passes; 0 disables densification.
    pub every: usize,
    pub grad_threshold: f64,
    pub split_scale: f64,
    pub opacity_floor: f64,
    pub max_gaussians: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        let t = DensifyThresholds::default();
        Self {
            every: 100,
            grad_threshold: t.grad_threshold,
            split_scale: t.split_scale,
            opacity_floor: t.opacity_floor,
            max_gaussians: 60_000,
        }
    }
}

impl DensityConfig {
    pub fn thresholds(&self) -> DensifyThresholds {
        DensifyThresholds {
            grad_threshold: self.grad_threshold,
            split_scale: self.split_scale,
            opacity_floor: self.opacity_floor,
            max_gaussians: self.max_gaussians,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyConfig {
    pub enabled: bool,
    pub hidden: usize,
    pub beta_min: f64,
    pub learning_rate: f64,
    /// Number of feature clusters used by the variance term.
    pub clusters: usize,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hidden: 16,
            beta_min: 0.1,
            learning_rate: 1e-3,
            clusters: 8,
            lambda3: 0.1,
            lambda4: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub iters: usize,
    /// Initial Adam step sizes, decayed with a cosine schedule.
    pub lr_rotation: f64,
    pub lr_translation: f64,
    /// Minimum mean rendered alpha needed to attempt a refinement.
    pub coverage_min: f64,
    /// Refinements that move farther than this are rejected.
    pub max_translation: f64,
    pub max_rotation: f64,
    /// Refine rotation about the camera x and y axes. For a nadir camera these
    /// are roll and pitch, which the graph already pins through gravity.
    pub tilt: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iters: 100,
            lr_rotation: 1e-3,
            lr_translation: 1e-2,
            coverage_min: 0.3,
            max_translation: 0.5,
            max_rotation: 0.15,
            tilt: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mode: MappingMode,
    pub reoptimize: bool,
    pub seed: u64,
    pub ring_width: f64,
    pub gate_factor: f64,
    /// SSIM weight in the reconstruction loss.
    pub lambda1: f64,
    /// Depth smoothness weight in the reconstruction loss.
    pub lambda2: f64,
    /// External factor standard deviations (rad, m).
    pub sigma_ext_rotation: f64,
    pub sigma_ext_translation: f64,
    pub landmark_sigma_rotation: f64,
    pub landmark_sigma_translation: f64,
    pub landmark_prior_sigma: f64,
    pub huber_k: f64,
    pub seed_steps: usize,
    pub ring_steps: usize,
    /// Map steps over all frames after the last ring.
    pub final_steps: usize,
    /// Re-refine frontier poses every this many map steps; 0 disables.
    pub rerefine_every: usize,
    pub rerefine_iters: usize,
    /// Fraction of map steps drawn from the current ring; the rest revisit
    /// earlier rings.
    pub frontier_fraction: f64,
    pub pixel_stride: usize,
    /// Pixels already rendered with alpha above this are not re-seeded.
    pub fill_threshold: f64,
    pub init_opacity: f64,
    /// Initial gaussian scale as a fraction of the sample spacing on the ground.
    pub init_scale: f64,
    pub learning_rates: LearningRates,
    pub density: DensityConfig,
    pub uncertainty: UncertaintyConfig,
    pub refine: RefineConfig,
    pub odometry: OdometryParams,
    pub lm: LmParams,
    /// Timestamp tolerance when matching against ground truth.
    pub match_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: MappingMode::Incremental,
            reoptimize: true,
            seed: 0,
            ring_width: 2.0,
            gate_factor: 2.0,
            lambda1: 0.2,
            lambda2: 0.05,
            sigma_ext_rotation: 0.02,
            sigma_ext_translation: 0.05,
            landmark_sigma_rotation: 0.01,
            landmark_sigma_translation: 0.02,
            landmark_prior_sigma: 1e-4,
            huber_k: DEFAULT_HUBER_K,
            seed_steps: 400,
            ring_steps: 300,
            final_steps: 0,
            rerefine_every: 50,
            rerefine_iters: 30,
            frontier_fraction: 0.5,
            pixel_stride: 4,
            fill_threshold: 0.6,
            init_opacity: 0.5,
            init_scale: 0.6,
            learning_rates: LearningRates::default(),
            density: DensityConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            refine: RefineConfig { tilt: false, ..RefineConfig::default() },
            odometry: OdometryParams::default(),
            lm: LmParams::default(),
            match_tolerance: crate::eval::DEFAULT_MATCH_TOLERANCE,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.ring_width > 0.0) {
            return bad("ring_width must be positive");
        }
        if !(self.gate_factor > 1.0) {
            return bad("gate_factor must exceed 1");
        }
        if self.pixel_stride == 0 {
            return bad("pixel_stride must be positive");
        }
        if !(self.sigma_ext_rotation > 0.0 && self.sigma_ext_translation > 0.0) {
            return bad("external factor sigmas must be positive");
        }
        if !(self.landmark_sigma_rotation > 0.0 && self.landmark_sigma_translation > 0.0 && self.landmark_prior_sigma > 0.0) {
            return bad("landmark sigmas must be positive");
        }
        if !(self.huber_k > 0.0) {
            return bad("huber_k must be positive");
        }
        if !(0.0..=1.0).contains(&self.frontier_fraction) {
            return bad("frontier_fraction must lie in [0, 1]");
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return bad("init_opacity must lie in (0, 1)");
        }
        if self.uncertainty.enabled && (self.uncertainty.clusters == 0 || !(self.uncertainty.beta_min > 0.0)) {
            return bad("uncertainty needs at least one cluster and a positive beta_min");
        }
        Ok(())
    }
}
