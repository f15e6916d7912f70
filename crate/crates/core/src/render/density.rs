//! Adaptive density control: clone, split and prune driven by accumulated
//! screen-space gradients.

use nalgebra::Vector3;

use super::gaussian::{Gaussian3D, SplatMap};
use super::raster::RenderGradients;

/// Screen-space gradient statistics gathered over an optimization window.
#[derive(Debug, Clone, Default)]
pub struct DensityStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
    /// Summed world-space gradient of the mean, used to pick the clone offset.
    pub mean_grad: Vec<Vector3<f64>>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
            mean_grad: vec![Vector3::zeros(); n],
        }
    }

    pub fn record(&mut self, grads: &RenderGradients) {
        let n = grads.screen.len();
        if self.grad_sum.len() < n {
            self.grad_sum.resize(n, 0.0);
            self.count.resize(n, 0);
            self.mean_grad.resize(n, Vector3::zeros());
        }
        for i in 0..n {
            if grads.visible[i] {
                self.grad_sum[i] += grads.screen[i];
                self.count[i] += 1;
                let p = &grads.params[i];
                self.mean_grad[i] += Vector3::new(p[0], p[1], p[2]);
            }
        }
    }

    pub fn average(&self, i: usize) -> f64 {
        match self.count.get(i) {
            Some(&c) if c > 0 => self.grad_sum[i] / c as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyThresholds {
    /// Mean screen-space gradient norm above which a gaussian is densified.
    pub grad_threshold: f64,
    /// World scale separating clone (below) from split (at or above).
    pub split_scale: f64,
    pub opacity_floor: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            split_scale: 0.1,
            opacity_floor: 0.005,
            max_gaussians: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small high-gradient gaussians one σ against the descent direction,
/// splits large ones into two at 0.8× scale, then prunes transparent ones.
/// New gaussians inherit the ring tag of their parent.
pub fn densify_and_prune(map: &mut SplatMap, stats: &DensityStats, thresholds: &DensifyThresholds) -> DensifyReport {
    let mut report = DensifyReport::default();
    let n = map.len();
    let mut remove = vec![false; n];
    let mut added: Vec<(Gaussian3D, usize)> = Vec::new();
    for i in 0..n {
        if stats.average(i) < thresholds.grad_threshold || n + added.len() >= thresholds.max_gaussians {
            continue;
        }
        let g = map.gaussians[i];
        let s = g.scale();
        let dir = stats.mean_grad[i].try_normalize(1e-300).unwrap_or_else(Vector3::x);
        if s < thresholds.split_scale {
            let mut child = g;
            child.mean -= dir * s;
            added.push((child, map.ring_tags[i]));
            report.cloned += 1;
        } else {
            for sign in [-1.0, 1.0] {
                let mut child = g;
                child.mean += dir * (sign * s);
                child.log_scale = (0.8 * s).ln();
                added.push((child, map.ring_tags[i]));
            }
            remove[i] = true;
            report.split += 1;
        }
    }
    for (g, ring) in added {
        map.push(g, ring);
        remove.push(false);
    }
    map.retain_indices(|i| !remove[i]);
    let after_split = map.len();
    let floor = thresholds.opacity_floor;
    let keep: Vec<bool> = map.gaussians.iter().map(|g| g.opacity() >= floor).collect();
    map.retain_indices(|i| keep[i]);
    report.pruned = after_split - map.len();
    report
}
