//! Synthetic survey: seafloor scene, rosette trajectory and sensor logs.

pub mod log;
pub mod rosette;
pub mod scene;
pub mod sensors;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PinholeCamera;
use crate::render::SplatMap;

pub use log::{read_log, read_manifest, write_log, Manifest};
pub use rosette::{generate_rosette, nadir_attitude, Hover, KinematicState, Rosette, RosetteSpec, Trajectory};
pub use scene::{generate_ground_truth_scene, landmark_pose, SceneSpec, Terrain};
pub use sensors::{synthesize_sensors, DepthProvider, NoiseSpec, SensorLog, SensorRates, SimulatedDepth, GRAVITY};

/// Everything needed to produce a sensor log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub camera: PinholeCamera,
    pub scene: SceneSpec,
    pub rosette: RosetteSpec,
    pub noise: NoiseSpec,
    pub rates: SensorRates,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scene: SplatMap,
    pub rosette: Rosette,
    pub log: SensorLog,
    pub manifest: Manifest,
}

/// Generates the scene and flies the rosette over it. The rosette is
/// centered on the landmark.
pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    let scene = generate_ground_truth_scene(&config.scene)?;
    let landmark = landmark_pose(&config.scene);
    let mut rosette_spec = config.rosette;
    let l = landmark.translation;
    rosette_spec.center = [l.x, l.y, l.z];
    let rosette = Rosette::new(rosette_spec)?;
    let log = synthesize_sensors(&rosette, &scene, &config.camera, &landmark, &config.noise, &config.rates)?;
    let manifest = Manifest {
        camera: config.camera,
        rates: config.rates,
        noise: config.noise,
        scene: config.scene,
        rosette: rosette_spec,
        landmark: landmark.to_array7(),
        frames: log.images.len(),
    };
    Ok(Simulation { scene, rosette, log, manifest })
}

/// Writes the log plus the ground-truth scene as `scene.ply`.
pub fn write_simulation(dir: impl AsRef<Path>, sim: &Simulation) -> Result<()> {
    let dir = dir.as_ref();
    write_log(dir, &sim.log, &sim.manifest)?;
    sim.scene.write_ply(dir.join("scene.ply"))
}
