//! Continuous-time rosette survey around the landmark.
//!
//! Each petal is the rose-curve lobe `r = R·|sin(k·φ/2)|` for `φ` in one
//! `2π/k` sector, flown at constant speed. When the petal count allows it,
//! consecutive petals are chosen so the vehicle crosses the center in a
//! straight line instead of turning back on itself.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidPose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosetteSpec {
    pub petal_count: usize,
    pub radius: f64,
    pub altitude: f64,
    pub speed: f64,
    pub center: [f64; 3],
}

impl Default for RosetteSpec {
    fn default() -> Self {
        Self {
            petal_count: 4,
            radius: 10.0,
            altitude: 2.0,
            speed: 0.5,
            center: [0.0, 0.0, -10.0],
        }
    }
}

/// Pose and its time derivatives at one instant.
#[derive(Debug, Clone, Copy)]
pub struct KinematicState {
    pub pose: RigidPose,
    /// World-frame velocity and acceleration of the body origin.
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Angular velocity in the body frame.
    pub angular_velocity: Vector3<f64>,
}

/// A differentiable ground-truth trajectory.
pub trait Trajectory {
    fn duration(&self) -> f64;
    fn state(&self, t: f64) -> KinematicState;
}

/// Camera/body attitude for a nadir-looking vehicle with heading `yaw`:
/// optical axis down, image "up" pointing forward.
pub fn nadir_attitude(yaw: f64) -> UnitQuaternion<f64> {
    let (s, c) = yaw.sin_cos();
    let r = Matrix3::from_columns(&[Vector3::new(s, -c, 0.0), Vector3::new(-c, -s, 0.0), Vector3::new(0.0, 0.0, -1.0)]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r))
}

fn body_rates(yaw_rate: f64) -> Vector3<f64> {
    // World yaw rate about +z seen in a frame whose z-axis points down.
    Vector3::new(0.0, 0.0, -yaw_rate)
}

/// Stationary vehicle, used for calibration-style checks.
#[derive(Debug, Clone, Copy)]
pub struct Hover {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub duration: f64,
}

impl Trajectory for Hover {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn state(&self, _t: f64) -> KinematicState {
        KinematicState {
            pose: RigidPose::new(nadir_attitude(self.yaw), self.position),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }
}

const TABLE_DT: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Rosette {
    spec: RosetteSpec,
    /// Sector start angle of each petal in flight order.
    order: Vec<f64>,
    petal_duration: f64,
    /// Petal-local angle sampled every `TABLE_DT` seconds.
    table: Vec<f64>,
}

impl Rosette {
    pub fn new(spec: RosetteSpec) -> Result<Self> {
        if spec.petal_count == 0 || !(spec.radius > 0.0) || !(spec.speed > 0.0) {
            return Err(Error::InvalidInput("rosette needs petal_count ≥ 1, radius > 0 and speed > 0".into()));
        }
        let k = spec.petal_count;
        let sector = TAU / k as f64;
        let step = if k % 2 == 0 && gcd(1 + k / 2, k) == 1 { 1 + k / 2 } else { 1 };
        let order = (0..k).map(|i| ((i * step) % k) as f64 * sector).collect();

        let mut rosette = Self {
            spec,
            order,
            petal_duration: 0.0,
            table: Vec::new(),
        };
        let mut table = vec![0.0];
        let mut phi = 0.0;
        loop {
            let next = rosette.rk4(phi, TABLE_DT);
            if next >= sector {
                // Final partial step: interpolate the crossing time.
                let frac = (sector - phi) / (next - phi);
                rosette.petal_duration = (table.len() - 1) as f64 * TABLE_DT + frac * TABLE_DT;
                table.push(next);
                break;
            }
            table.push(next);
            phi = next;
        }
        rosette.table = table;
        Ok(rosette)
    }

    pub fn spec(&self) -> &RosetteSpec {
        &self.spec
    }

    pub fn petal_duration(&self) -> f64 {
        self.petal_duration
    }

    pub fn path_length(&self) -> f64 {
        self.duration() * self.spec.speed
    }

    fn half_k(&self) -> f64 {
        self.spec.petal_count as f64 / 2.0
    }

    /// Petal-local position relative to the center and its first two
    /// derivatives with respect to the local angle, for sector start `a`.
    fn local(&self, a: f64, phi: f64) -> [Vector3<f64>; 3] {
        let (rad, hk) = (self.spec.radius, self.half_k());
        let r = rad * (hk * phi).sin();
        let dr = rad * hk * (hk * phi).cos();
        let ddr = -rad * hk * hk * (hk * phi).sin();
        let (s, c) = (a + phi).sin_cos();
        let p = Vector3::new(r * c, r * s, 0.0);
        let dp = Vector3::new(dr * c - r * s, dr * s + r * c, 0.0);
        let ddp = Vector3::new(ddr * c - 2.0 * dr * s - r * c, ddr * s + 2.0 * dr * c - r * s, 0.0);
        [p, dp, ddp]
    }

    fn phi_rate(&self, phi: f64) -> f64 {
        self.spec.speed / self.local(0.0, phi)[1].norm()
    }

    fn rk4(&self, phi: f64, h: f64) -> f64 {
        let k1 = self.phi_rate(phi);
        let k2 = self.phi_rate(phi + 0.5 * h * k1);
        let k3 = self.phi_rate(phi + 0.5 * h * k2);
        let k4 = self.phi_rate(phi + h * k3);
        phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    fn local_angle(&self, tau: f64) -> f64 {
        let i = ((tau / TABLE_DT).floor() as usize).min(self.table.len() - 1);
        self.rk4(self.table[i], tau - i as f64 * TABLE_DT)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Trajectory for Rosette {
    fn duration(&self) -> f64 {
        self.petal_duration * self.spec.petal_count as f64
    }

    fn state(&self, t: f64) -> KinematicState {
        let t = t.clamp(0.0, self.duration());
        let petal = ((t / self.petal_duration).floor() as usize).min(self.spec.petal_count - 1);
        let tau = t - petal as f64 * self.petal_duration;
        let phi = self.local_angle(tau);
        let [p, dp, ddp] = self.local(self.order[petal], phi);
        let phi_dot = self.spec.speed / dp.norm();
        let phi_ddot = -self.spec.speed * dp.dot(&ddp) / dp.norm().powi(3) * phi_dot;
        let velocity = dp * phi_dot;
        let acceleration = ddp * phi_dot * phi_dot + dp * phi_ddot;
        let yaw = velocity.y.atan2(velocity.x);
        let yaw_rate = (velocity.x * acceleration.y - velocity.y * acceleration.x) / velocity.norm_squared();
        let c = self.spec.center;
        let position = Vector3::new(c[0], c[1], c[2] + self.spec.altitude) + p;
        KinematicState {
            pose: RigidPose::new(nadir_attitude(yaw), position),
            velocity,
            acceleration,
            angular_velocity: body_rates(yaw_rate),
        }
    }
}

/// Samples the rosette every `dt` seconds from time zero.
pub fn generate_rosette(spec: &RosetteSpec, dt: f64) -> Result<Vec<(f64, RigidPose)>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let rosette = Rosette::new(*spec)?;
    let n = (rosette.duration() / dt).floor() as usize;
    Ok((0..=n).map(|i| (i as f64 * dt, rosette.state(i as f64 * dt).pose)).collect())
}

/// Heading that makes the image "up" direction align with `forward`.
pub fn yaw_of(forward: &Vector3<f64>) -> f64 {
    forward.y.atan2(forward.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stays_within_radius_at_constant_altitude() {
        let spec = RosetteSpec::default();
        let traj = generate_rosette(&spec, 0.05).unwrap();
        let mut max_r: f64 = 0.0;
        for (_, pose) in &traj {
            let t = pose.translation;
            max_r = max_r.max(t.x.hypot(t.y));
            assert!((t.z - (spec.center[2] + spec.altitude)).abs() < 1e-12);
        }
        assert!(max_r <= 10.0 + 1e-9 && max_r > 10.0 - 1e-3, "max radius {max_r}");
    }

    #[test]
    fn single_petal_is_a_closed_loop_through_center() {
        let spec = RosetteSpec { petal_count: 1, ..RosetteSpec::default() };
        let r = Rosette::new(spec).unwrap();
        let start = r.state(0.0).pose.translation;
        let end = r.state(r.duration()).pose.translation;
        assert!((start - end).norm() < 1e-6);
        assert!(start.x.abs() < 1e-12 && start.y.abs() < 1e-12);
    }

    #[test]
    fn every_petal_visits_the_center() {
        let r = Rosette::new(RosetteSpec { petal_count: 6, ..RosetteSpec::default() }).unwrap();
        for i in 0..6 {
            let p = r.state(i as f64 * r.petal_duration() + 1e-9).pose.translation;
            assert!(p.x.hypot(p.y) < 1e-6);
        }
    }

    #[test]
    fn path_length_matches_numeric_arc_length() {
        for k in [2usize, 4, 8] {
            let spec = RosetteSpec { petal_count: k, ..RosetteSpec::default() };
            // Independent polar arc length: ∫ sqrt(r² + r'²) dθ over [0, 2π].
            let n = 200_000;
            let h = TAU / n as f64;
            let hk = k as f64 / 2.0;
            let f = |th: f64| {
                let r = 10.0 * (hk * th).sin().abs();
                let dr = 10.0 * hk * (hk * th).cos();
                (r * r + dr * dr).sqrt()
            };
            let oracle: f64 = (0..n).map(|i| f((i as f64 + 0.5) * h) * h).sum();
            let length = Rosette::new(spec).unwrap().path_length();
            assert!((length - oracle).abs() < 1e-3 * oracle, "k={k}: {length} vs {oracle}");
        }
        // Petals become near-straight chords as k grows, so length per petal tends to 2R.
        let per_petal = |k: usize| Rosette::new(RosetteSpec { petal_count: k, ..RosetteSpec::default() }).unwrap().path_length() / k as f64;
        assert!((per_petal(32) - per_petal(34)).abs() < 0.05);
    }

    #[test]
    fn constant_speed_and_consistent_derivatives() {
        let r = Rosette::new(RosetteSpec { speed: 0.8, ..RosetteSpec::default() }).unwrap();
        let h = 1e-5;
        for i in 1..40 {
            let t = i as f64 * r.duration() / 40.0 + 0.123;
            let s = r.state(t);
            assert!((s.velocity.norm() - 0.8).abs() < 1e-9);
            let fd_v = (r.state(t + h).pose.translation - r.state(t - h).pose.translation) / (2.0 * h);
            assert!((fd_v - s.velocity).norm() < 1e-6);
            let fd_a = (r.state(t + h).velocity - r.state(t - h).velocity) / (2.0 * h);
            assert!((fd_a - s.acceleration).norm() < 1e-4);
            let dq = r.state(t).pose.rotation.inverse() * r.state(t + h).pose.rotation;
            let fd_w = dq.scaled_axis() / h;
            assert!((fd_w - s.angular_velocity).norm() < 1e-4);
        }
    }

    #[test]
    fn straight_crossing_keeps_heading_continuous() {
        let r = Rosette::new(RosetteSpec::default()).unwrap();
        for i in 1..4 {
            let t = i as f64 * r.petal_duration();
            let before = r.state(t - 1e-4).pose.rotation;
            let after = r.state(t + 1e-4).pose.rotation;
            assert!(before.angle_to(&after) < 1e-3);
        }
    }

    #[test]
    fn nadir_attitude_looks_down_with_forward_up() {
        let q = nadir_attitude(0.3);
        assert!((q * Vector3::z() + Vector3::z()).norm() < 1e-12);
        let forward = q * -Vector3::y();
        assert!((yaw_of(&forward) - 0.3).abs() < 1e-12);
    }
}
