//! Rigid-body algebra on SE(3)/SO(3) and the pinhole camera model.
//!
//! Twists are ordered rotation first: `[ω; v]`. Every Jacobian in the crate
//! uses the same left-multiplicative, world-frame perturbation
//! `X ← exp(ξ) · X`.
//!
//! Poses of cameras are camera-to-world transforms, so a world point maps into
//! the camera frame through `pose.inverse_transform_point`.

use std::ops::Mul;

use nalgebra::{Matrix2x3, Matrix3, Matrix3x6, Matrix6, Quaternion, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SMALL_ANGLE: f64 = 1e-3;
/// Distance from π below which the logarithm refuses to pick a branch.
pub const PI_BRANCH_TOLERANCE: f64 = 1e-9;

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
#[rustfmt::skip]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -w.z, w.y,
        w.z, 0.0, -w.x,
        -w.y, w.x, 0.0,
    )
}

pub mod so3 {
    use super::*;

    pub fn exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let (real, imag_scale) = if theta < SMALL_ANGLE {
            (
                1.0 - theta2 / 8.0 + theta2 * theta2 / 384.0,
                0.5 - theta2 / 48.0 + theta2 * theta2 / 3840.0,
            )
        } else {
            let half = 0.5 * theta;
            (half.cos(), half.sin() / theta)
        };
        let v = w * imag_scale;
        UnitQuaternion::new_normalize(Quaternion::new(real, v.x, v.y, v.z))
    }

    /// Principal-branch logarithm. Fails when the rotation angle is within
    /// [`PI_BRANCH_TOLERANCE`] of π.
    pub fn log(q: &UnitQuaternion<f64>) -> Result<Vector3<f64>> {
        let q = q.quaternion();
        let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
        let vn = v.norm();
        let theta = 2.0 * vn.atan2(w);
        if std::f64::consts::PI - theta < PI_BRANCH_TOLERANCE {
            return Err(Error::AmbiguousBranch);
        }
        if vn < 1e-8 {
            // theta / sin(theta/2) with theta/2 ~ vn/w
            let scale = 2.0 / w * (1.0 - vn * vn / (3.0 * w * w));
            Ok(v * scale)
        } else {
            Ok(v * (theta / vn))
        }
    }

    pub fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let (b1, b2) = if theta < SMALL_ANGLE {
            (
                0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
                1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
            )
        } else {
            ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
        };
        let a = hat(w);
        Matrix3::identity() + a * b1 + a * a * b2
    }

    pub fn left_jacobian_inverse(w: &Vector3<f64>) -> Matrix3<f64> {
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let e = if theta < SMALL_ANGLE {
            1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
        } else {
            1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
        };
        let a = hat(w);
        Matrix3::identity() - a * 0.5 + a * a * e
    }

    pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
        left_jacobian(&-w)
    }

    pub fn right_jacobian_inverse(w: &Vector3<f64>) -> Matrix3<f64> {
        left_jacobian_inverse(&-w)
    }
}

/// Tangent-space coordinates of SE(3).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    /// Radians.
    pub rotational: Vector3<f64>,
    /// Meters.
    pub translational: Vector3<f64>,
}

impl Twist {
    pub fn new(rotational: Vector3<f64>, translational: Vector3<f64>) -> Self {
        Self { rotational, translational }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rotational: v.fixed_rows::<3>(0).into_owned(),
            translational: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rotational);
        v.fixed_rows_mut::<3>(3).copy_from(&self.translational);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.rotational.iter().chain(self.translational.iter()).all(|x| x.is_finite())
    }
}

/// An element of SE(3) stored as a unit quaternion and a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Exponential map: Rodrigues for the rotation, left Jacobian for the
    /// translation.
    pub fn exp(xi: &Twist) -> Self {
        Self {
            rotation: so3::exp(&xi.rotational),
            translation: so3::left_jacobian(&xi.rotational) * xi.translational,
        }
    }

    pub fn log(&self) -> Result<Twist> {
        let w = so3::log(&self.rotation)?;
        let v = so3::left_jacobian_inverse(&w) * self.translation;
        Ok(Twist::new(w, v))
    }

    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: UnitQuaternion::new_normalize((self.rotation * other.rotation).into_inner()),
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let r = self.rotation.inverse();
        RigidPose {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    /// `self⁻¹ ∘ other`, the pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &RigidPose) -> RigidPose {
        self.inverse().compose(other)
    }

    /// Left-multiplicative update `exp(xi) ∘ self`.
    pub fn retract(&self, xi: &Twist) -> RigidPose {
        RigidPose::exp(xi).compose(self)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Adjoint in the `[ω; v]` ordering: `exp(Ad·ξ) = X exp(ξ) X⁻¹`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&self.translation) * r));
        ad
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Rotation angle (radians) and translation distance between two poses.
    pub fn distance_to(&self, other: &RigidPose) -> (f64, f64) {
        (
            self.rotation.angle_to(&other.rotation),
            (self.translation - other.translation).norm(),
        )
    }

    /// `[tx, ty, tz, qx, qy, qz, qw]`.
    pub fn to_array7(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = self.translation;
        [t.x, t.y, t.z, q.i, q.j, q.k, q.w]
    }

    pub fn from_array7(a: &[f64; 7]) -> Result<Self> {
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let q = Quaternion::new(a[6], a[3], a[4], a[5]);
        if q.norm() < 1e-12 {
            return Err(Error::InvalidInput("zero quaternion".into()));
        }
        // Already-normalized input is kept bit-exact so text round trips are stable.
        let rotation = if (q.norm() - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Self { rotation, translation: Vector3::new(a[0], a[1], a[2]) })
    }
}

impl Mul for RigidPose {
    type Output = RigidPose;
    fn mul(self, rhs: RigidPose) -> RigidPose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a RigidPose> for &'a RigidPose {
    type Output = RigidPose;
    fn mul(self, rhs: &RigidPose) -> RigidPose {
        self.compose(rhs)
    }
}

/// Left Jacobian of SE(3) in `[ω; v]` ordering.
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let j = so3::left_jacobian(&xi.rotational);
    let q = se3_q_block(xi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&q);
    out
}

pub fn se3_left_jacobian_inverse(xi: &Twist) -> Matrix6<f64> {
    let ji = so3::left_jacobian_inverse(&xi.rotational);
    let q = se3_q_block(xi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-ji * q * ji));
    out
}

pub fn se3_right_jacobian_inverse(xi: &Twist) -> Matrix6<f64> {
    se3_left_jacobian_inverse(&Twist::new(-xi.rotational, -xi.translational))
}

/// Coupling block of the SE(3) left Jacobian.
fn se3_q_block(xi: &Twist) -> Matrix3<f64> {
    let phi = &xi.rotational;
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (c1, c2, c3) = if theta < SMALL_ANGLE {
        (
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
            1.0 / 24.0 - theta2 / 720.0 + theta2 * theta2 / 40320.0,
            1.0 / 120.0 - theta2 / 2520.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t4 = theta2 * theta2;
        (
            (theta - s) / (theta2 * theta),
            (theta2 + 2.0 * c - 2.0) / (2.0 * t4),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
        )
    };
    let a = hat(phi);
    let r = hat(&xi.translational);
    let ar = a * r;
    let ra = r * a;
    let ara = ar * a;
    r * 0.5 + (ar + ra + ara) * c1 + (a * ar + ra * a - ara * 3.0) * c2 + (ara * a + a * ara) * c3
}

/// Calibrated pinhole camera without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for PinholeCamera {
    fn default() -> Self {
        Self {
            fx: 64.0,
            fy: 64.0,
            cx: 64.0,
            cy: 48.0,
            width: 128,
            height: 96,
        }
    }
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with square pixels, a horizontal field of view in radians and
    /// the principal point at the image center.
    pub fn with_fov(width: usize, height: usize, hfov: f64) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * hfov).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCamera(format!("{self:?}")))
        }
    }

    /// Single focal length used for isotropic footprints.
    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        Ok((
            Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy),
            p.z,
        ))
    }

    /// Jacobian of the pixel coordinates with respect to the camera-frame point.
    pub fn project_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }

    /// Camera-frame point at depth `z` through pixel `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }
}

/// Jacobian of the camera-frame point `pose⁻¹ · p_world` with respect to a
/// left perturbation of the camera-to-world `pose`, columns `[ω; v]`.
pub fn camera_point_pose_jacobian(pose: &RigidPose, p_world: &Vector3<f64>) -> Matrix3x6<f64> {
    let rt = pose.rotation_matrix().transpose();
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rt * hat(p_world)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rt));
    j
}
