//! Sensor-log front end: runs the complementary filter and EKF over all
//! streams in time order and emits keyframes at the image timestamps.

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use super::complementary::{complementary_update, ComplementaryParams, OrientationState};
use super::ekf::{ekf_predict, ekf_update_depth, ekf_update_dvl, Matrix9, OdomState, ProcessNoise, POS, ROT, VEL};
use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::sim::SensorLog;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdometryParams {
    pub complementary: ComplementaryParams,
    pub process: ProcessNoise,
    pub dvl_sigma: f64,
    pub depth_sigma: f64,
    /// Initial standard deviations of position (m), orientation (rad) and
    /// velocity (m/s).
    pub init_position_sigma: f64,
    pub init_orientation_sigma: f64,
    pub init_velocity_sigma: f64,
    /// Floor on odometry-delta variances so information stays finite.
    pub min_delta_variance: f64,
}

impl Default for OdometryParams {
    fn default() -> Self {
        Self {
            complementary: ComplementaryParams::default(),
            process: ProcessNoise::default(),
            dvl_sigma: 0.02,
            depth_sigma: 0.05,
            init_position_sigma: 0.05,
            init_orientation_sigma: 0.02,
            init_velocity_sigma: 0.05,
            min_delta_variance: 1e-10,
        }
    }
}

/// EKF state at an image timestamp with the noise accumulated since the
/// previous keyframe.
#[derive(Debug, Clone, Copy)]
pub struct Keyframe {
    pub timestamp: f64,
    pub state: OdomState,
    /// `[rotation; translation]` covariance of the motion since the previous
    /// keyframe, expressed in the previous keyframe's body frame.
    pub relative_covariance: Matrix6<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct OdometryResult {
    pub keyframes: Vec<Keyframe>,
    pub rejected_dvl: usize,
    pub rejected_depth: usize,
}

impl OdometryResult {
    pub fn trajectory(&self) -> Vec<(f64, RigidPose)> {
        self.keyframes.iter().map(|k| (k.timestamp, k.state.pose)).collect()
    }
}

/// `delta_i = pose_i⁻¹ ∘ pose_{i+1}` with the covariance accumulated between
/// the two keyframes.
pub fn extract_odometry_deltas(keyframes: &[Keyframe]) -> Result<Vec<(RigidPose, Matrix6<f64>)>> {
    if keyframes.len() < 2 {
        return Err(Error::InvalidInput("odometry needs at least two keyframes".into()));
    }
    Ok(keyframes
        .windows(2)
        .map(|w| (w[0].state.pose.between(&w[1].state.pose), w[1].relative_covariance))
        .collect())
}

fn interpolate(samples: &[(f64, Vector3<f64>)], t: f64) -> Vector3<f64> {
    let i = samples.partition_point(|(ts, _)| *ts <= t);
    if i == 0 {
        return samples[0].1;
    }
    if i == samples.len() {
        return samples[i - 1].1;
    }
    let (t0, a) = samples[i - 1];
    let (t1, b) = samples[i];
    let u = (t - t0) / (t1 - t0);
    a * (1.0 - u) + b * u
}

enum Event {
    Imu,
    Dvl(Vector3<f64>),
    Depth(f64),
    Image,
}

/// Runs the filters from `initial` (valid at `start_time`) through the end of
/// the log. Keyframes are emitted at every image timestamp ≥ `start_time`.
pub fn run_odometry(log: &SensorLog, initial: &OdomState, start_time: f64, params: &OdometryParams) -> Result<OdometryResult> {
    if log.gyro.is_empty() || log.accel.len() != log.gyro.len() {
        return Err(Error::InvalidInput("log needs matching gyro and accel streams".into()));
    }
    let mut events: Vec<(f64, u8, Event)> = Vec::new();
    for (t, _) in &log.gyro {
        events.push((*t, 0, Event::Imu));
    }
    for (t, v) in &log.dvl {
        events.push((*t, 1, Event::Dvl(*v)));
    }
    for (t, d) in &log.pressure_depth {
        events.push((*t, 2, Event::Depth(*d)));
    }
    for (t, _) in &log.images {
        events.push((*t, 3, Event::Image));
    }
    events.retain(|e| e.0 >= start_time - 1e-12);
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let r_dvl = Matrix3::identity() * params.dvl_sigma.powi(2).max(1e-12);
    let r_depth = params.depth_sigma.powi(2).max(1e-12);
    let mut orientation = OrientationState::new(initial.pose.rotation);
    let mut state = *initial;
    let mut body_velocity = initial.pose.rotation.inverse() * initial.velocity;
    let mut t = start_time;
    let mut result = OdometryResult::default();

    // Accumulators for the relative covariance since the last keyframe.
    let mut acc_pos = Matrix3::zeros();
    let mut acc_rot = Matrix3::zeros();
    let mut since_key = 0.0;
    let mut key_vel_var = Matrix3::zeros();
    let mut key_rotation = initial.pose.rotation;

    for (te, _, event) in events {
        let dt = te - t;
        if dt > 1e-12 {
            let omega = (interpolate(&log.gyro, t) + interpolate(&log.gyro, te)) * 0.5;
            let accel = (interpolate(&log.accel, t) + interpolate(&log.accel, te)) * 0.5;
            // Remove the transport term ω × v so only gravity remains.
            let compensated = accel - omega.cross(&body_velocity);
            orientation = complementary_update(&orientation, &omega, &compensated, dt, &params.complementary)?;
            state = ekf_predict(&state, &orientation.attitude, dt, &params.process)?;
            acc_pos += Matrix3::identity() * (params.process.position * dt);
            acc_rot += Matrix3::identity() * (params.process.orientation * dt);
            since_key += dt;
            t = te;
        }
        match event {
            Event::Imu => {}
            Event::Dvl(v) => {
                let up = ekf_update_dvl(&state, &v, &r_dvl)?;
                if up.accepted {
                    state = up.state;
                    body_velocity = v;
                } else {
                    result.rejected_dvl += 1;
                }
            }
            Event::Depth(d) => {
                let up = ekf_update_depth(&state, d, r_depth)?;
                if up.accepted {
                    state = up.state;
                } else {
                    result.rejected_depth += 1;
                }
            }
            Event::Image => {
                let rt = key_rotation.to_rotation_matrix().into_inner().transpose();
                let pos_world = acc_pos + key_vel_var * (since_key * since_key);
                let mut cov = Matrix6::zeros();
                cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rt * acc_rot * rt.transpose()));
                cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&(rt * pos_world * rt.transpose()));
                for i in 0..6 {
                    cov[(i, i)] = cov[(i, i)].max(params.min_delta_variance);
                }
                result.keyframes.push(Keyframe {
                    timestamp: te,
                    state,
                    relative_covariance: cov,
                });
                acc_pos = Matrix3::zeros();
                acc_rot = Matrix3::zeros();
                since_key = 0.0;
                key_vel_var = state.covariance.fixed_view::<3, 3>(VEL, VEL).into_owned();
                key_rotation = state.pose.rotation;
            }
        }
    }
    Ok(result)
}

/// Initial covariance from the configured standard deviations.
pub fn initial_covariance(params: &OdometryParams) -> Matrix9 {
    let mut p = Matrix9::zeros();
    for i in 0..3 {
        p[(POS + i, POS + i)] = params.init_position_sigma.powi(2);
        p[(ROT + i, ROT + i)] = params.init_orientation_sigma.powi(2);
        p[(VEL + i, VEL + i)] = params.init_velocity_sigma.powi(2);
    }
    p
}

/// Starting state from the first landmark observation: `X = L ∘ Z⁻¹`, with
/// the velocity taken from the first DVL sample at or after that time.
pub fn initialize_from_landmark(log: &SensorLog, params: &OdometryParams) -> Result<(f64, OdomState)> {
    let (t0, z) = log
        .landmark_obs
        .first()
        .ok_or_else(|| Error::InvalidInput("log has no landmark observation to initialize from".into()))?;
    let pose = log.landmark.compose(&z.inverse());
    let v_body = log.dvl.iter().find(|(t, _)| *t >= *t0 - 1e-9).map(|(_, v)| *v).unwrap_or_else(Vector3::zeros);
    let velocity = pose.rotation * v_body;
    Ok((*t0, OdomState::new(pose, velocity, initial_covariance(params))))
}
