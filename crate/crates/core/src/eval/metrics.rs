use std::path::Path;

use serde::Serialize;

use super::align::{ate_rmse, AlignedTrajectoryPair};
use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::image::Image;

/// Peak signal-to-noise ratio for images in [0, 1]. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b)?;
    if a.data.is_empty() {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub fn trajectory_length(poses: &[RigidPose]) -> f64 {
    poses.windows(2).map(|w| (w[1].translation - w[0].translation).norm()).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameError {
    pub timestamp: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub ate_rmse: f64,
    pub length: f64,
    pub matched: usize,
    pub with_scale: bool,
    pub scale: f64,
    pub per_frame: Vec<FrameError>,
}

pub fn evaluate_trajectory(est: &[(f64, RigidPose)], reference: &[(f64, RigidPose)], tolerance: f64, with_scale: bool) -> Result<MetricsReport> {
    let pair = AlignedTrajectoryPair::new(est, reference, tolerance, with_scale)?;
    let ate = ate_rmse(&pair)?;
    let poses: Vec<RigidPose> = est.iter().map(|(_, p)| *p).collect();
    let per_frame = pair
        .matched
        .iter()
        .zip(pair.errors())
        .map(|((t, _, _), error)| FrameError { timestamp: *t, error })
        .collect();
    Ok(MetricsReport {
        ate_rmse: ate,
        length: trajectory_length(&poses),
        matched: pair.matched.len(),
        with_scale,
        scale: pair.alignment.scale,
        per_frame,
    })
}

impl MetricsReport {
    /// Summary rows (`metric,value`) followed by the per-frame error table.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
        w.write_record(["metric", "value"])?;
        w.write_record(["ate_rmse", &self.ate_rmse.to_string()])?;
        w.write_record(["length", &self.length.to_string()])?;
        w.write_record(["matched", &self.matched.to_string()])?;
        w.write_record(["alignment", if self.with_scale { "sim3" } else { "se3" }])?;
        w.write_record(["scale", &self.scale.to_string()])?;
        w.write_record(["timestamp", "error"])?;
        for f in &self.per_frame {
            w.write_record([f.timestamp.to_string(), f.error.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
