use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::graph::{marginal_covariances, Estimates, FactorGraph, LinearSolver, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RingMember {
    /// Index of the image in the sensor log.
    pub frame: usize,
    pub variable: VarId,
}

/// Keyframes whose horizontal distance from the landmark lies in `[r_lo, r_hi)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ring {
    pub index: usize,
    pub r_lo: f64,
    pub r_hi: f64,
    pub members: Vec<RingMember>,
}

impl Ring {
    pub fn frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|m| m.frame)
    }

    pub fn variables(&self) -> Vec<VarId> {
        self.members.iter().map(|m| m.variable).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn horizontal_distance(pose: &RigidPose, landmark: &RigidPose) -> f64 {
    (pose.translation - landmark.translation).xy().norm()
}

/// Assigns each `(frame, variable, pose)` to ring `⌊d / ring_width⌋`. Members
/// keep their input order; empty rings are dropped.
pub fn ring_partition(keyframes: &[(usize, VarId, RigidPose)], landmark: &RigidPose, ring_width: f64) -> Result<Vec<Ring>> {
    if !(ring_width > 0.0) {
        return Err(Error::InvalidInput("ring_width must be positive".into()));
    }
    let mut rings: Vec<Ring> = Vec::new();
    for &(frame, variable, pose) in keyframes {
        let index = (horizontal_distance(&pose, landmark) / ring_width).floor() as usize;
        if rings.len() <= index {
            rings.extend((rings.len()..=index).map(|i| Ring {
                index: i,
                r_lo: i as f64 * ring_width,
                r_hi: (i + 1) as f64 * ring_width,
                members: Vec::new(),
            }));
        }
        rings[index].members.push(RingMember { frame, variable });
    }
    if rings.first().is_none_or(|r| r.is_empty()) {
        return Err(Error::EmptySeedRing);
    }
    rings.retain(|r| !r.is_empty());
    Ok(rings)
}

/// True iff the frontier's mean uncertainty is at most `gate_factor` times
/// the seed ring's.
pub fn gate_decision(frontier_traces: &[f64], seed_traces: &[f64], gate_factor: f64) -> bool {
    if frontier_traces.is_empty() || seed_traces.is_empty() {
        return false;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, s) = (mean(frontier_traces), mean(seed_traces));
    f.is_finite() && s.is_finite() && f <= gate_factor * s
}

/// Traces of the 6×6 marginal covariances of `ids`, or `None` when the
/// information matrix is singular.
pub fn marginal_traces(graph: &FactorGraph, estimates: &Estimates, ids: &[VarId]) -> Option<Vec<f64>> {
    marginal_covariances(graph, estimates, ids, LinearSolver::Sparse)
        .ok()
        .map(|covs| covs.iter().map(|c| c.trace()).collect())
}

pub fn should_reoptimize(graph: &FactorGraph, estimates: &Estimates, frontier: &Ring, seed: &Ring, gate_factor: f64) -> bool {
    let mut ids = seed.variables();
    let n_seed = ids.len();
    ids.extend(frontier.variables());
    match marginal_traces(graph, estimates, &ids) {
        Some(traces) => gate_decision(&traces[n_seed..], &traces[..n_seed], gate_factor),
        None => false,
    }
}
