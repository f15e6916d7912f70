//! Noisy multimodal sensor streams sampled from a ground-truth trajectory.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rosette::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{PinholeCamera, RigidPose, Twist};
use crate::image::Image;
use crate::render::{render, RenderSettings, SplatMap};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub gyro_sigma: f64,
    pub gyro_bias: f64,
    pub accel_sigma: f64,
    pub accel_bias: f64,
    pub dvl_sigma: f64,
    /// Constant velocity error along the direction of travel (image up), m/s.
    pub dvl_bias: f64,
    pub depth_sigma: f64,
    pub landmark_rot_sigma: f64,
    pub landmark_trans_sigma: f64,
    /// Relative per-pixel error of the pseudo-depth maps.
    pub depthmap_sigma: f64,
    /// Global relative scale error of the pseudo-depth maps.
    pub depthmap_scale_bias: f64,
    pub rng_seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gyro_sigma: 0.005,
            gyro_bias: 0.0,
            accel_sigma: 0.02,
            accel_bias: 0.0,
            dvl_sigma: 0.02,
            dvl_bias: 0.0,
            depth_sigma: 0.05,
            landmark_rot_sigma: 0.01,
            landmark_trans_sigma: 0.02,
            depthmap_sigma: 0.05,
            depthmap_scale_bias: 0.0,
            rng_seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn zero(rng_seed: u64) -> Self {
        Self {
            gyro_sigma: 0.0,
            gyro_bias: 0.0,
            accel_sigma: 0.0,
            accel_bias: 0.0,
            dvl_sigma: 0.0,
            dvl_bias: 0.0,
            depth_sigma: 0.0,
            landmark_rot_sigma: 0.0,
            landmark_trans_sigma: 0.0,
            depthmap_sigma: 0.0,
            depthmap_scale_bias: 0.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.gyro_sigma,
            self.accel_sigma,
            self.dvl_sigma,
            self.depth_sigma,
            self.landmark_rot_sigma,
            self.landmark_trans_sigma,
            self.depthmap_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sampling rates in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorRates {
    pub camera: f64,
    pub dvl: f64,
    pub imu: f64,
    pub pressure: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            camera: 3.0,
            dvl: 5.0,
            imu: 100.0,
            pressure: 22.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SensorLog {
    pub camera: PinholeCamera,
    pub images: Vec<(f64, Image)>,
    pub dvl: Vec<(f64, Vector3<f64>)>,
    pub gyro: Vec<(f64, Vector3<f64>)>,
    pub accel: Vec<(f64, Vector3<f64>)>,
    pub pressure_depth: Vec<(f64, f64)>,
    pub landmark_obs: Vec<(f64, RigidPose)>,
    /// Pseudo-depth map per image, same order as `images`.
    pub depth_maps: Vec<Image>,
    /// True camera poses at the image timestamps.
    pub ground_truth: Vec<(f64, RigidPose)>,
    /// Known world pose of the landmark.
    pub landmark: RigidPose,
}

impl SensorLog {
    pub fn image_index(&self, timestamp: f64) -> Result<usize> {
        self.images
            .iter()
            .position(|(t, _)| (t - timestamp).abs() < 1e-9)
            .ok_or(Error::UnknownTimestamp(timestamp))
    }
}

/// Source of metric depth for initializing new gaussians.
pub trait DepthProvider {
    fn depth(&self, timestamp: f64) -> Result<Image>;
}

impl DepthProvider for SensorLog {
    fn depth(&self, timestamp: f64) -> Result<Image> {
        let i = self.image_index(timestamp)?;
        self.depth_maps.get(i).cloned().ok_or(Error::UnknownTimestamp(timestamp))
    }
}

/// Simulated monocular depth network: true rendered depth with
/// multiplicative noise.
pub struct SimulatedDepth<'a> {
    pub scene: &'a SplatMap,
    pub camera: PinholeCamera,
    pub poses: &'a [(f64, RigidPose)],
    pub noise: NoiseSpec,
}

impl SimulatedDepth<'_> {
    pub fn pseudo_depth(&self, timestamp: f64) -> Result<Image> {
        let frame = self
            .poses
            .iter()
            .position(|(t, _)| (t - timestamp).abs() < 1e-9)
            .ok_or(Error::UnknownTimestamp(timestamp))?;
        let truth = render(self.scene, &self.camera, &self.poses[frame].1, &RenderSettings::default()).0.depth;
        Ok(perturb_depth(&truth, &self.noise, frame as u64))
    }
}

impl DepthProvider for SimulatedDepth<'_> {
    fn depth(&self, timestamp: f64) -> Result<Image> {
        self.pseudo_depth(timestamp)
    }
}

const STREAM_GYRO: u64 = 1;
const STREAM_ACCEL: u64 = 2;
const STREAM_DVL: u64 = 3;
const STREAM_PRESSURE: u64 = 4;
const STREAM_LANDMARK: u64 = 5;
const STREAM_DEPTHMAP: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("sigma is finite").sample(rng)
    }
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::new(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma))
}

/// `depth·(1 + bias)·(1 + ε)` per pixel, with ε seeded by the frame index.
pub fn perturb_depth(truth: &Image, noise: &NoiseSpec, frame: u64) -> Image {
    let mut rng = stream_rng(noise.rng_seed, STREAM_DEPTHMAP + frame);
    truth.map(|d| {
        let eps = gaussian(&mut rng, noise.depthmap_sigma);
        d * (1.0 + noise.depthmap_scale_bias) * (1.0 + eps)
    })
}

fn sample_times(duration: f64, rate: f64) -> Vec<f64> {
    if !(rate > 0.0) {
        return Vec::new();
    }
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 / rate).collect()
}

/// True specific force in the body frame: `Rᵀ(a − g)` with `g = (0, 0, −9.81)`.
pub fn specific_force(pose: &RigidPose, acceleration: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation.inverse() * (acceleration + Vector3::new(0.0, 0.0, GRAVITY))
}

/// Whether the landmark origin projects inside the image with positive depth.
pub fn landmark_visible(camera: &PinholeCamera, pose: &RigidPose, landmark: &RigidPose) -> bool {
    let p = pose.inverse_transform_point(&landmark.translation);
    match camera.project(&p) {
        Ok((px, _)) => camera.contains(&px),
        Err(_) => false,
    }
}

pub fn synthesize_sensors(
    traj: &dyn Trajectory,
    scene: &SplatMap,
    camera: &PinholeCamera,
    landmark: &RigidPose,
    noise: &NoiseSpec,
    rates: &SensorRates,
) -> Result<SensorLog> {
    noise.validate()?;
    camera.validate()?;
    let duration = traj.duration();
    if !(duration > 0.0) {
        return Err(Error::InvalidInput("trajectory is empty".into()));
    }
    let seed = noise.rng_seed;
    let mut log = SensorLog {
        camera: *camera,
        landmark: *landmark,
        ..SensorLog::default()
    };

    let mut rng = stream_rng(seed, STREAM_GYRO);
    let gyro_bias = Vector3::repeat(noise.gyro_bias);
    for t in sample_times(duration, rates.imu) {
        let s = traj.state(t);
        log.gyro.push((t, s.angular_velocity + gyro_bias + gaussian3(&mut rng, noise.gyro_sigma)));
    }
    let mut rng = stream_rng(seed, STREAM_ACCEL);
    let accel_bias = Vector3::repeat(noise.accel_bias);
    for t in sample_times(duration, rates.imu) {
        let s = traj.state(t);
        log.accel.push((t, specific_force(&s.pose, &s.acceleration) + accel_bias + gaussian3(&mut rng, noise.accel_sigma)));
    }
    let mut rng = stream_rng(seed, STREAM_DVL);
    let dvl_bias = Vector3::new(0.0, -noise.dvl_bias, 0.0);
    for t in sample_times(duration, rates.dvl) {
        let s = traj.state(t);
        log.dvl.push((t, s.pose.rotation.inverse() * s.velocity + dvl_bias + gaussian3(&mut rng, noise.dvl_sigma)));
    }
    let mut rng = stream_rng(seed, STREAM_PRESSURE);
    for t in sample_times(duration, rates.pressure) {
        let s = traj.state(t);
        log.pressure_depth.push((t, -s.pose.translation.z + gaussian(&mut rng, noise.depth_sigma)));
    }

    let mut rng = stream_rng(seed, STREAM_LANDMARK);
    for (frame, t) in sample_times(duration, rates.camera).into_iter().enumerate() {
        let pose = traj.state(t).pose;
        let (out, _) = render(scene, camera, &pose, &RenderSettings::default());
        log.depth_maps.push(perturb_depth(&out.depth, noise, frame as u64));
        log.images.push((t, out.color));
        log.ground_truth.push((t, pose));
        if landmark_visible(camera, &pose, landmark) {
            let perturbation = Twist::new(gaussian3(&mut rng, noise.landmark_rot_sigma), gaussian3(&mut rng, noise.landmark_trans_sigma));
            let measurement = pose.between(landmark).compose(&RigidPose::exp(&perturbation));
            log.landmark_obs.push((t, measurement));
        }
    }
    Ok(log)
}
