//! Procedural seafloor made of splats over a rough height field.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::render::{Gaussian3D, SplatMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Half-width of the square patch, meters.
    pub extent: f64,
    pub splat_count: usize,
    pub seed: u64,
    /// World z of the seafloor datum at the landmark (negative below surface).
    pub datum: f64,
    /// Peak-to-peak amplitude of the terrain relief, meters.
    pub relief: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent: 14.0,
            splat_count: 40_000,
            seed: 7,
            datum: -10.0,
            relief: 0.4,
        }
    }
}

/// Smooth terrain shared by the splat generator and the simulator.
#[derive(Debug, Clone)]
pub struct Terrain {
    datum: f64,
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Terrain {
    pub fn new(datum: f64, relief: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e44a1);
        let waves = (0..6)
            .map(|i| {
                let wavelength = 3.0 + 2.5 * i as f64;
                let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..std::f64::consts::TAU), relief / 6.0)
            })
            .collect();
        Self { datum, waves }
    }

    fn raw(&self, x: f64, y: f64) -> f64 {
        self.waves.iter().map(|&(kx, ky, phase, amp)| amp * (kx * x + ky * y + phase).sin()).sum()
    }

    /// Seafloor height at (x, y); equals the datum at the origin.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.datum + self.raw(x, y) - self.raw(0.0, 0.0)
    }

    pub fn datum(&self) -> f64 {
        self.datum
    }
}

/// Sand-colored field with broad hue patches and ripples down to ~0.5 m.
fn base_color(x: f64, y: f64, phases: &[f64; 6]) -> Vector3<f64> {
    let sand = Vector3::new(0.62, 0.55, 0.42);
    let a = (0.9 * x + phases[0]).sin() * (0.7 * y + phases[1]).cos();
    let b = (0.35 * x - 0.5 * y + phases[2]).sin();
    let c = (2.1 * x + phases[3]).sin() * (1.7 * y + phases[4]).sin();
    let d = (5.3 * x + 2.0 * phases[5]).sin() * (4.7 * y - phases[0]).sin();
    let e = (9.1 * x - 7.7 * y + phases[1] + phases[3]).sin() + (6.4 * x + 10.3 * y + phases[2]).sin();
    sand + Vector3::new(0.18 * a - 0.05 * b, 0.1 * a + 0.12 * b, -0.08 * a + 0.15 * b) + Vector3::repeat(0.1 * c + 0.1 * d + 0.05 * e)
}

pub fn generate_ground_truth_scene(spec: &SceneSpec) -> Result<SplatMap> {
    if spec.splat_count == 0 {
        return Err(Error::InvalidInput("splat_count must be positive".into()));
    }
    if !(spec.extent > 0.0) {
        return Err(Error::InvalidInput("extent must be positive".into()));
    }
    let terrain = Terrain::new(spec.datum, spec.relief, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let side = (spec.splat_count as f64).sqrt().ceil() as usize;
    let cell = 2.0 * spec.extent / side as f64;
    let mut gaussians = Vec::with_capacity(spec.splat_count);
    for i in 0..spec.splat_count {
        let (gx, gy) = ((i % side) as f64, (i / side) as f64);
        let x = -spec.extent + (gx + rng.random_range(0.0..1.0)) * cell;
        let y = -spec.extent + (gy + rng.random_range(0.0..1.0)) * cell;
        let z = terrain.height(x, y) + rng.random_range(-0.02..0.02);
        let jitter = Vector3::new(rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08))
            + Vector3::repeat(rng.random_range(-0.15..0.15));
        let color = (base_color(x, y, &phases) + jitter).map(|v| v.clamp(0.02, 0.98));
        let scale = cell * rng.random_range(0.75..0.95);
        let opacity = rng.random_range(0.85..0.98);
        gaussians.push(Gaussian3D::new(Vector3::new(x, y, z), scale, opacity, color));
    }
    Ok(SplatMap::from_gaussians(gaussians))
}

/// The landmark sits at the origin of the seafloor datum, axis-aligned.
pub fn landmark_pose(spec: &SceneSpec) -> RigidPose {
    RigidPose::from_translation(Vector3::new(0.0, 0.0, spec.datum))
}
