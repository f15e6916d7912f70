use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::RigidPose;

/// Similarity transform `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Least-squares similarity (or rigid, without scale) mapping `est` onto
/// `reference` (Umeyama 1991).
pub fn umeyama_align(est: &[Vector3<f64>], reference: &[Vector3<f64>], with_scale: bool) -> Result<Alignment> {
    if est.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} points", est.len(), reference.len())));
    }
    let n = est.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("alignment needs at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mu_x = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_y = reference.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in est.iter().zip(reference) {
        let (dx, dy) = (x - mu_x, y - mu_y);
        cov += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= nf;
    var_x /= nf;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if var_x <= 0.0 || sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // Flip the axis of the smallest singular value.
        let (imin, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        s[(imin, imin)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_x
    } else {
        1.0
    };
    let translation = mu_y - scale * (rotation * mu_x);
    Ok(Alignment { rotation, translation, scale })
}

/// Estimated and reference trajectories matched by timestamp and aligned.
#[derive(Debug, Clone)]
pub struct AlignedTrajectoryPair {
    /// `(timestamp, estimated, reference)` for every matched pair.
    pub matched: Vec<(f64, RigidPose, RigidPose)>,
    pub alignment: Alignment,
    pub with_scale: bool,
    pub tolerance: f64,
}

pub const DEFAULT_MATCH_TOLERANCE: f64 = 0.02;

/// Pairs every estimated pose with the nearest reference timestamp within
/// `tolerance`.
pub fn match_timestamps(est: &[(f64, RigidPose)], reference: &[(f64, RigidPose)], tolerance: f64) -> Vec<(f64, RigidPose, RigidPose)> {
    let mut sorted: Vec<&(f64, RigidPose)> = reference.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    for (t, pose) in est {
        let i = sorted.partition_point(|r| r.0 < *t);
        let candidates = [i.checked_sub(1), Some(i)];
        let best = candidates
            .iter()
            .flatten()
            .filter_map(|&j| sorted.get(j))
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()));
        if let Some(r) = best {
            if (r.0 - t).abs() <= tolerance {
                out.push((*t, *pose, r.1));
            }
        }
    }
    out
}

impl AlignedTrajectoryPair {
    pub fn new(est: &[(f64, RigidPose)], reference: &[(f64, RigidPose)], tolerance: f64, with_scale: bool) -> Result<Self> {
        let matched = match_timestamps(est, reference, tolerance);
        let xs: Vec<_> = matched.iter().map(|m| m.1.translation).collect();
        let ys: Vec<_> = matched.iter().map(|m| m.2.translation).collect();
        let alignment = umeyama_align(&xs, &ys, with_scale)?;
        Ok(Self { matched, alignment, with_scale, tolerance })
    }

    /// Matches without aligning (identity transform).
    pub fn unaligned(est: &[(f64, RigidPose)], reference: &[(f64, RigidPose)], tolerance: f64) -> Self {
        Self {
            matched: match_timestamps(est, reference, tolerance),
            alignment: Alignment::identity(),
            with_scale: false,
            tolerance,
        }
    }

    /// Translational residual norms after alignment.
    pub fn errors(&self) -> Vec<f64> {
        self.matched.iter().map(|(_, e, r)| (r.translation - self.alignment.apply(&e.translation)).norm()).collect()
    }
}

pub fn ate_rmse(pair: &AlignedTrajectoryPair) -> Result<f64> {
    if pair.matched.is_empty() {
        return Err(Error::InvalidInput("no matched poses".into()));
    }
    let errors = pair.errors();
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}
