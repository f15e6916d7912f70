use std::collections::HashMap;

use super::config::{DensityConfig, LearningRates, UncertaintyConfig};
use crate::error::{Error, Result};
use crate::geometry::{PinholeCamera, RigidPose};
use crate::image::Image;
use crate::render::gaussian::param;
use crate::render::{
    backward, densify_and_prune, kmeans, loss_reconstruction, loss_uncertainty, render, Adam, AdamState, DensityStats, FeatureProvider,
    Gaussian3D, HandcraftedFeatures, ReconWeights, RenderSettings, SplatMap, UncertaintyModel, PARAMS_PER_GAUSSIAN,
};

/// Back-projects a `stride`-spaced pixel grid through `depth` at `pose`.
/// Pixels whose `coverage` alpha exceeds its paired threshold, or whose depth is
/// not positive, are skipped.
#[allow(clippy::too_many_arguments)]
pub fn backproject_frame(
    image: &Image,
    depth: &Image,
    pose: &RigidPose,
    cam: &PinholeCamera,
    stride: usize,
    init_scale: f64,
    init_opacity: f64,
    coverage: Option<(&Image, f64)>,
) -> Result<Vec<Gaussian3D>> {
    if depth.width != image.width || depth.height != image.height || depth.channels != 1 {
        return Err(Error::ShapeMismatch("pseudo-depth does not match image".into()));
    }
    let mut out = Vec::new();
    for y in (stride / 2..image.height).step_by(stride) {
        for x in (stride / 2..image.width).step_by(stride) {
            if let Some((alpha, threshold)) = coverage {
                if alpha.at(x, y, 0) > threshold {
                    continue;
                }
            }
            let z = depth.at(x, y, 0);
            if !(z > 0.0) {
                continue;
            }
            let p = pose.transform_point(&cam.back_project(x as f64, y as f64, z));
            let c = image.pixel(x, y);
            let color = nalgebra::Vector3::new(c[0], c[1], c[2]);
            out.push(Gaussian3D::new(p, z * stride as f64 / cam.mean_focal() * init_scale, init_opacity, color));
        }
    }
    Ok(out)
}

fn group_rate(rates: &LearningRates, k: usize) -> f64 {
    match k {
        k if k < param::LOG_SCALE => rates.mean,
        param::LOG_SCALE => rates.log_scale,
        param::LOGIT_OPACITY => rates.logit_opacity,
        _ => rates.color,
    }
}

struct UncertaintyState {
    model: UncertaintyModel,
    adam: AdamState,
    config: UncertaintyConfig,
    /// Features and cluster labels per frame.
    cache: FeatureCache,
    seed: u64,
}

/// Adam over the visible gaussians of one view per step, with periodic
/// densification and an optional per-pixel uncertainty model.
pub struct MapTrainer {
    adam: Adam,
    rates: LearningRates,
    density: DensityConfig,
    weights: ReconWeights,
    stats: DensityStats,
    steps: usize,
    uncertainty: Option<UncertaintyState>,
}

impl MapTrainer {
    pub fn new(rates: LearningRates, density: DensityConfig, weights: ReconWeights, uncertainty: UncertaintyConfig, seed: u64) -> Self {
        let uncertainty = uncertainty.enabled.then(|| {
            let provider = HandcraftedFeatures;
            let model = UncertaintyModel::new(provider.dim(), uncertainty.hidden, uncertainty.beta_min, provider.name(), seed);
            let adam = AdamState::new(model.parameter_count());
            UncertaintyState {
                model,
                adam,
                config: uncertainty,
                cache: HashMap::new(),
                seed,
            }
        });
        Self {
            adam: Adam::default(),
            rates,
            density,
            weights,
            stats: DensityStats::new(0),
            steps: 0,
            uncertainty,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Per-pixel β for `frame`; ones when the uncertainty model is off.
    pub fn beta(&mut self, frame: usize, image: &Image) -> Result<Image> {
        match &mut self.uncertainty {
            None => Ok(Image::filled(image.width, image.height, 1, 1.0)),
            Some(u) => {
                let (features, _) = cached_features(&mut u.cache, u.config.clusters, u.seed, frame, image);
                u.model.forward(features)
            }
        }
    }

    /// One optimization step on `frame`. Returns the reconstruction loss.
    pub fn step(&mut self, map: &mut SplatMap, frame: usize, image: &Image, pose: &RigidPose, cam: &PinholeCamera) -> Result<f64> {
        if map.is_empty() {
            return Ok(0.0);
        }
        let beta = self.beta(frame, image)?;
        let (out, state) = render(map, cam, pose, &RenderSettings::default());
        let loss = loss_reconstruction(image, &out, &beta, self.weights)?;
        if !loss.value.is_finite() {
            return Err(Error::NonFinite("reconstruction loss"));
        }
        let grads = backward(map, &state, &loss.grads);
        for (i, g) in grads.params.iter().enumerate() {
            if !grads.visible[i] {
                continue;
            }
            let gaussian = &mut map.gaussians[i];
            let m = &mut map.moments[i];
            let mut p = gaussian.params();
            m.steps += 1;
            self.adam.update(&mut p, g, &mut m.first, &mut m.second, m.steps, |k| group_rate(&self.rates, k));
            for c in &mut p[param::COLOR..PARAMS_PER_GAUSSIAN] {
                *c = c.clamp(0.0, 1.0);
            }
            gaussian.set_params(&p);
        }
        self.stats.record(&grads);

        if let Some(u) = &mut self.uncertainty {
            let (lambda3, lambda4) = (u.config.lambda3, u.config.lambda4);
            let lr = u.config.learning_rate;
            let (features, clusters) = cached_features(&mut u.cache, u.config.clusters, u.seed, frame, image);
            let ul = loss_uncertainty(&u.model, features, &loss.ssim_map, clusters, lambda3, lambda4)?;
            let mut w = std::mem::take(&mut u.model.weights);
            u.adam.step(&self.adam, &mut w, &ul.grads, lr);
            u.model.weights = w;
        }

        self.steps += 1;
        if self.density.every > 0 && self.steps % self.density.every == 0 {
            densify_and_prune(map, &self.stats, &self.density.thresholds());
            self.stats = DensityStats::new(map.len());
        }
        Ok(loss.value)
    }
}

type FeatureCache = HashMap<usize, (Image, Vec<usize>)>;

fn cached_features<'a>(cache: &'a mut FeatureCache, k: usize, seed: u64, frame: usize, image: &Image) -> (&'a Image, &'a [usize]) {
    let entry = cache.entry(frame).or_insert_with(|| {
        let features = HandcraftedFeatures.features(image);
        let clusters = kmeans(&features, k, 10, seed ^ frame as u64);
        (features, clusters)
    });
    (&entry.0, &entry.1)
}
