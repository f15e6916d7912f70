//! Dead-reckoning front end: attitude from gyro and accelerometer, position
//! and velocity from DVL and pressure.

pub mod complementary;
pub mod ekf;
pub mod odometry;

pub use complementary::{complementary_update, ComplementaryParams, OrientationState};
pub use ekf::{ekf_predict, ekf_update_depth, ekf_update_dvl, Matrix9, OdomState, ProcessNoise, Update};
pub use odometry::{
    extract_odometry_deltas, initial_covariance, initialize_from_landmark, run_odometry, Keyframe, OdometryParams, OdometryResult,
};
