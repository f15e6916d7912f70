use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::so3;
use crate::sim::GRAVITY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationState {
    /// Body-to-world rotation.
    pub attitude: UnitQuaternion<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl OrientationState {
    pub fn new(attitude: UnitQuaternion<f64>) -> Self {
        Self { attitude, gyro_bias: Vector3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplementaryParams {
    /// Fraction of the tilt error removed per update.
    pub gain: f64,
    /// Fraction of the per-step correction folded into the gyro bias.
    pub bias_gain: f64,
    /// Below this fraction of g the accelerometer is ignored.
    pub free_fall_ratio: f64,
    /// Deviation of ‖a‖ from g (m/s²) at which the gain is halved.
    pub gain_falloff: f64,
}

impl Default for ComplementaryParams {
    fn default() -> Self {
        Self {
            gain: 0.01,
            bias_gain: 0.001,
            free_fall_ratio: 0.1,
            gain_falloff: 0.5,
        }
    }
}

/// Integrates the bias-corrected gyro, then rotates the attitude part of the
/// way toward agreement with the measured gravity direction.
pub fn complementary_update(
    state: &OrientationState,
    omega: &Vector3<f64>,
    accel: &Vector3<f64>,
    dt: f64,
    params: &ComplementaryParams,
) -> Result<OrientationState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let rate = omega - state.gyro_bias;
    let mut attitude = state.attitude * so3::exp(&(rate * dt));
    let mut gyro_bias = state.gyro_bias;

    let norm = accel.norm();
    if norm >= params.free_fall_ratio * GRAVITY {
        let measured_up = accel / norm;
        let predicted_up = attitude.inverse() * Vector3::z();
        let cross = measured_up.cross(&predicted_up);
        let angle = cross.norm().atan2(measured_up.dot(&predicted_up));
        if cross.norm() > 1e-15 {
            let deviation = (norm - GRAVITY).abs() / params.gain_falloff;
            let gain = params.gain / (1.0 + deviation * deviation);
            let correction = cross / cross.norm() * (gain * angle);
            attitude *= so3::exp(&correction);
            gyro_bias -= params.bias_gain * correction / dt;
        }
    }
    Ok(OrientationState {
        attitude: UnitQuaternion::new_normalize(attitude.into_inner()),
        gyro_bias,
    })
}
