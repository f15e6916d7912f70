//! Trajectory and image metrics plus trajectory file formats.

pub mod align;
pub mod metrics;
pub mod tum;

pub use align::{ate_rmse, match_timestamps, umeyama_align, AlignedTrajectoryPair, Alignment, DEFAULT_MATCH_TOLERANCE};
pub use metrics::{evaluate_trajectory, psnr, trajectory_length, MetricsReport};
pub use tum::{read_tum, write_tum};
