//! Nine-state EKF over position, orientation and world-frame velocity.
//!
//! Attitude is supplied by the complementary filter; the orientation block of
//! the covariance only tracks how much heading uncertainty has accumulated.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidPose;

pub type Matrix9 = SMatrix<f64, 9, 9>;

pub const POS: usize = 0;
pub const ROT: usize = 3;
pub const VEL: usize = 6;

/// χ² quantiles at 0.999.
pub const CHI2_3DOF: f64 = 16.266;
pub const CHI2_1DOF: f64 = 10.828;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdomState {
    pub pose: RigidPose,
    pub velocity: Vector3<f64>,
    pub covariance: Matrix9,
}

impl OdomState {
    pub fn new(pose: RigidPose, velocity: Vector3<f64>, covariance: Matrix9) -> Self {
        Self { pose, velocity, covariance }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.covariance.symmetric_eigenvalues().min()
    }
}

/// Continuous-time process noise densities (variance per second).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessNoise {
    pub position: f64,
    pub orientation: f64,
    pub velocity: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            position: 1e-4,
            // 0.005 rad/s/√Hz gyro noise.
            orientation: 0.005 * 0.005,
            velocity: 1e-3,
        }
    }
}

impl ProcessNoise {
    pub fn matrix(&self) -> Matrix9 {
        let mut q = Matrix9::zeros();
        for i in 0..3 {
            q[(POS + i, POS + i)] = self.position;
            q[(ROT + i, ROT + i)] = self.orientation;
            q[(VEL + i, VEL + i)] = self.velocity;
        }
        q
    }
}

fn symmetrize(p: &Matrix9) -> Matrix9 {
    (p + p.transpose()) * 0.5
}

/// Propagates over `dt` assuming constant body-frame velocity while the
/// attitude moves to `attitude`: the world velocity rotates with the body and
/// the position integrates it with the trapezoid rule.
pub fn ekf_predict(state: &OdomState, attitude: &UnitQuaternion<f64>, dt: f64, noise: &ProcessNoise) -> Result<OdomState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let delta: Matrix3<f64> = (attitude * state.pose.rotation.inverse()).to_rotation_matrix().into_inner();
    let velocity = delta * state.velocity;
    let translation = state.pose.translation + 0.5 * dt * (state.velocity + velocity);

    let mut f = Matrix9::identity();
    f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(0.5 * dt * (Matrix3::identity() + delta)));
    f.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&delta);
    let p = f * state.covariance * f.transpose() + noise.matrix() * dt;
    Ok(OdomState {
        pose: RigidPose::new(*attitude, translation),
        velocity,
        covariance: symmetrize(&p),
    })
}

/// Generic linear update with Joseph-form covariance and a χ² gate.
/// Returns `None` when the innovation is gated out.
fn update<const M: usize>(
    state: &OdomState,
    innovation: SVector<f64, M>,
    h: SMatrix<f64, M, 9>,
    r: SMatrix<f64, M, M>,
    gate: f64,
) -> Result<Option<OdomState>> {
    let s = h * state.covariance * h.transpose() + r;
    let s_inv = s.try_inverse().ok_or(Error::SingularInformation)?;
    let d2 = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    if !(d2 <= gate) {
        return Ok(None);
    }
    let k = state.covariance * h.transpose() * s_inv;
    let dx = k * innovation;
    let i_kh = Matrix9::identity() - k * h;
    let p = i_kh * state.covariance * i_kh.transpose() + k * r * k.transpose();
    let mut out = *state;
    out.pose.translation += dx.fixed_rows::<3>(POS);
    out.velocity += dx.fixed_rows::<3>(VEL);
    out.covariance = symmetrize(&p);
    Ok(Some(out))
}

/// Outcome of a gated measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Update {
    pub state: OdomState,
    pub accepted: bool,
}

/// DVL update: the body-frame velocity `Rᵀ·v`.
pub fn ekf_update_dvl(state: &OdomState, v_body: &Vector3<f64>, r_dvl: &Matrix3<f64>) -> Result<Update> {
    if !v_body.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("DVL measurement"));
    }
    if r_dvl.cholesky().is_none() {
        return Err(Error::InvalidInput("DVL covariance must be positive definite".into()));
    }
    let rt = state.pose.rotation_matrix().transpose();
    let innovation = v_body - rt * state.velocity;
    let mut h = SMatrix::<f64, 3, 9>::zeros();
    h.fixed_view_mut::<3, 3>(0, VEL).copy_from(&rt);
    Ok(match update(state, innovation, h, *r_dvl, CHI2_3DOF)? {
        Some(s) => Update { state: s, accepted: true },
        None => Update { state: *state, accepted: false },
    })
}

/// Pressure update: depth below the surface is `−z`.
pub fn ekf_update_depth(state: &OdomState, depth: f64, variance: f64) -> Result<Update> {
    if !depth.is_finite() {
        return Err(Error::NonFinite("depth measurement"));
    }
    if !(variance > 0.0) {
        return Err(Error::InvalidInput("depth variance must be positive".into()));
    }
    let innovation = SVector::<f64, 1>::new(depth + state.pose.translation.z);
    let mut h = SMatrix::<f64, 1, 9>::zeros();
    h[(0, POS + 2)] = -1.0;
    Ok(match update(state, innovation, h, SMatrix::<f64, 1, 1>::new(variance), CHI2_1DOF)? {
        Some(s) => Update { state: s, accepted: true },
        None => Update { state: *state, accepted: false },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state_with(p: Matrix9) -> OdomState {
        OdomState::new(RigidPose::identity(), Vector3::zeros(), p)
    }

    #[test]
    fn zero_velocity_prediction() {
        let noise = ProcessNoise::default();
        let mut p = Matrix9::zeros();
        for i in 0..6 {
            p[(i, i)] = 0.3;
        }
        let s = state_with(p);
        let out = ekf_predict(&s, &UnitQuaternion::identity(), 0.1, &noise).unwrap();
        assert_eq!(out.pose.translation, Vector3::zeros());
        let grown = out.covariance.trace() - s.covariance.trace();
        assert!((grown - noise.matrix().trace() * 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_velocity_moves_position() {
        let s = OdomState::new(RigidPose::identity(), Vector3::new(1.0, 0.0, 0.0), Matrix9::identity());
        let out = ekf_predict(&s, &UnitQuaternion::identity(), 0.5, &ProcessNoise::default()).unwrap();
        assert!((out.pose.translation - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn repeated_prediction_grows_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = Matrix9::from_diagonal(&SVector::<f64, 9>::from_fn(|_, _| rng.random_range(0.0..1.0)));
            let mut s = OdomState::new(RigidPose::identity(), Vector3::new(0.3, -0.2, 0.0), p);
            let mut prev = s.covariance.trace();
            for _ in 0..50 {
                let att = s.pose.rotation * UnitQuaternion::from_euler_angles(0.0, 0.0, rng.random_range(-0.05..0.05));
                s = ekf_predict(&s, &att, rng.random_range(0.001..0.1), &ProcessNoise::default()).unwrap();
                let trace = s.covariance.trace();
                assert!(trace > prev);
                assert!(s.min_eigenvalue() >= -1e-10);
                prev = trace;
            }
        }
    }

    #[test]
    fn dvl_examples() {
        let mut p = Matrix9::identity();
        p[(0, 6)] = 0.2;
        p[(6, 0)] = 0.2;
        let s = OdomState::new(RigidPose::identity(), Vector3::new(0.4, 0.1, 0.0), p);
        let r = Matrix3::identity() * 0.01;

        let same = ekf_update_dvl(&s, &Vector3::new(0.4, 0.1, 0.0), &r).unwrap();
        assert!(same.accepted);
        assert_eq!(same.state.velocity, s.velocity);
        assert_eq!(same.state.pose.translation, s.pose.translation);
        assert!(same.state.covariance.trace() < s.covariance.trace());
        for i in 0..3 {
            assert!(same.state.covariance[(VEL + i, VEL + i)] <= s.covariance[(VEL + i, VEL + i)]);
        }

        let still = state_with(Matrix9::identity());
        let out = ekf_update_dvl(&still, &Vector3::new(1.0, 0.0, 0.0), &(Matrix3::identity() * 1e-4)).unwrap();
        // Scalar gain 1 / (1 + 1e-4).
        assert!((out.state.velocity.x - 1.0 / (1.0 + 1e-4)).abs() < 1e-12);
        assert!((out.state.velocity.x - 1.0).abs() < 0.01);

        let outlier = ekf_update_dvl(&s, &Vector3::new(100.0, 0.0, 0.0), &r).unwrap();
        assert!(!outlier.accepted);
        assert_eq!(outlier.state, s);
    }

    #[test]
    fn dvl_uses_body_frame() {
        let q = UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let s = OdomState::new(RigidPose::new(q, Vector3::zeros()), Vector3::zeros(), Matrix9::identity());
        // Forward in the body is +y in the world after a quarter turn.
        let out = ekf_update_dvl(&s, &Vector3::new(1.0, 0.0, 0.0), &(Matrix3::identity() * 1e-6)).unwrap();
        assert!((out.state.velocity - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-5);
    }

    #[test]
    fn depth_examples() {
        let mut s = state_with(Matrix9::identity());
        s.pose.translation.z = -2.0;
        let same = ekf_update_depth(&s, 2.0, 0.01).unwrap();
        assert_eq!(same.state.pose.translation, s.pose.translation);

        let out = ekf_update_depth(&s, 3.0, 1e-6).unwrap();
        assert!(out.accepted);
        assert!((out.state.pose.translation.z + 3.0).abs() < 1e-5);

        assert!(ekf_update_depth(&s, f64::NAN, 0.01).is_err());
        assert!(!ekf_update_depth(&s, 50.0, 0.01).unwrap().accepted);
    }
}
