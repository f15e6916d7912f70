//! Photometric camera tracking against a frozen map.

use nalgebra::{Vector3, Vector6};

use super::config::RefineConfig;
use crate::error::Result;
use crate::geometry::{PinholeCamera, RigidPose, Twist};
use crate::image::Image;
use crate::render::{backward, loss_reconstruction_masked, render, Adam, AdamState, ReconWeights, RenderSettings, SplatMap};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementResult {
    pub frame: usize,
    pub initial: RigidPose,
    pub refined: RigidPose,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    /// False when the map did not cover enough of the view to try.
    pub attempted: bool,
    pub accepted: bool,
}

impl RefinementResult {
    fn not_attempted(frame: usize, pose: RigidPose) -> Self {
        Self {
            frame,
            initial: pose,
            refined: pose,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
            iterations: 0,
            attempted: false,
            accepted: false,
        }
    }
}

const MASK_ALPHA: f64 = 0.7;
const MASK_MARGIN: usize = 5;

/// Pixels whose alpha and that of every pixel within `margin` (Chebyshev
/// distance) exceed `threshold`.
fn interior_mask(alpha: &Image, threshold: f64, margin: usize) -> Vec<f64> {
    let (w, h) = (alpha.width, alpha.height);
    let inside: Vec<bool> = alpha.data.iter().map(|&a| a > threshold).collect();
    // Separable erosion: rows, then columns.
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(margin), (x + margin).min(w - 1));
            rows[y * w + x] = (lo..=hi).all(|q| inside[y * w + q]);
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(margin), (y + margin).min(h - 1));
        for x in 0..w {
            if (lo..=hi).all(|q| rows[q * w + x]) {
                out[y * w + x] = 1.0;
            }
        }
    }
    out
}

/// Photometric loss at `pose` over the pixels in `mask`, with the gradient
/// with respect to a perturbation `pose ∘ P ∘ exp(ξ) ∘ P⁻¹` about `pivot`.
fn photometric(
    map: &SplatMap,
    image: &Image,
    pose: &RigidPose,
    pivot: &RigidPose,
    cam: &PinholeCamera,
    mask: &[f64],
    ssim_weight: f64,
) -> Result<(f64, Vector6<f64>)> {
    let (out, state) = render(map, cam, pose, &RenderSettings::default());
    let beta = Image::filled(cam.width, cam.height, 1, 1.0);
    let weights = ReconWeights { ssim: ssim_weight, depth_tv: 0.0 };
    let loss = loss_reconstruction_masked(image, &out, &beta, Some(mask), weights)?;
    let grads = backward(map, &state, &loss.grads);
    // The world-frame twist is Ad(X·P)·ξ.
    let local = (pose.adjoint() * pivot.adjoint()).transpose() * grads.pose.to_vector();
    Ok((loss.value, local))
}

/// Adam on the camera-frame twist with cosine-decayed step sizes. The best
/// pose seen is returned; it is accepted only if it lowers the loss and stays
/// within the configured displacement bounds.
pub fn refine_pose(
    map: &SplatMap,
    frame: usize,
    image: &Image,
    init: &RigidPose,
    cam: &PinholeCamera,
    config: &RefineConfig,
    ssim_weight: f64,
    iters: usize,
) -> Result<RefinementResult> {
    let (start, _) = render(map, cam, init, &RenderSettings::default());
    if map.is_empty() || start.mean_alpha() < config.coverage_min {
        return Ok(RefinementResult::not_attempted(frame, *init));
    }
    // Only pixels well inside the rendered coverage take part, so the map's
    // soft boundary cannot pull the camera.
    let mask = interior_mask(&start.alpha, MASK_ALPHA, MASK_MARGIN);
    if !mask.iter().any(|&m| m > 0.0) {
        return Ok(RefinementResult::not_attempted(frame, *init));
    }
    // Rotating about a point at the scene depth decouples tilt from sideways
    // translation, which otherwise move the image almost identically.
    let covered: Vec<f64> = start.depth.data.iter().zip(&mask).filter(|(_, &m)| m > 0.0).map(|(d, _)| *d).collect();
    let depth = if covered.is_empty() { 0.0 } else { covered.iter().sum::<f64>() / covered.len() as f64 };
    let pivot = RigidPose::from_translation(Vector3::new(0.0, 0.0, depth));
    let pivot_adjoint = pivot.adjoint();
    let adam = Adam::default();
    let mut state = AdamState::new(6);
    let mut pose = *init;
    let (initial_loss, mut grad) = photometric(map, image, &pose, &pivot, cam, &mask, ssim_weight)?;
    let (mut best, mut best_loss) = (pose, initial_loss);
    let mut iterations = 0;
    for t in 0..iters {
        let decay = 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / iters as f64).cos());
        let mut step = [0.0; 6];
        state.steps += 1;
        adam.update(&mut step, grad.as_slice(), &mut state.first, &mut state.second, state.steps, |k| {
            decay * if k < 3 { config.lr_rotation } else { config.lr_translation }
        });
        if !config.tilt {
            step[0] = 0.0;
            step[1] = 0.0;
        }
        let xi = pivot_adjoint * Vector6::from_column_slice(&step);
        pose = pose.compose(&RigidPose::exp(&Twist::from_vector(&xi)));
        let (loss, g) = photometric(map, image, &pose, &pivot, cam, &mask, ssim_weight)?;
        iterations += 1;
        grad = g;
        if loss < best_loss {
            best_loss = loss;
            best = pose;
        }
    }
    let (angle, dist) = best.distance_to(init);
    let accepted = best_loss < initial_loss && dist < config.max_translation && angle < config.max_rotation;
    Ok(RefinementResult {
        frame,
        initial: *init,
        refined: if accepted { best } else { *init },
        initial_loss,
        final_loss: if accepted { best_loss } else { initial_loss },
        iterations,
        attempted: true,
        accepted,
    })
}
