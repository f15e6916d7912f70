//! Tile-based forward and backward rasterization of isotropic gaussians.
//!
//! Each gaussian projects to a circular footprint with standard deviation
//! `σ = S·f/z` pixels. Footprints are sorted front to back by camera depth and
//! alpha-composited per pixel:
//!
//! ```text
//! αᵢ = oᵢ · exp(−d²/(2σᵢ²)),  wᵢ = αᵢ · Π_{j<i}(1 − αⱼ)
//! C = Σ wᵢ cᵢ,  A = Σ wᵢ,  D = Σ wᵢ zᵢ / A
//! ```
//!
//! Pixel `(x, y)` is sampled at its integer coordinates, so the principal
//! point lands exactly on a pixel center.

use nalgebra::{Vector3, Vector6};
use rayon::prelude::*;

use super::gaussian::{SplatMap, PARAMS_PER_GAUSSIAN};
use crate::geometry::{hat, PinholeCamera, RigidPose, Twist};
use crate::image::Image;

const DEPTH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Contributions below this alpha are skipped.
    pub alpha_min: f64,
    /// Hard footprint cutoff in units of σ.
    pub max_radius_sigmas: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f64,
    pub near: f64,
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            max_radius_sigmas: 8.0,
            min_transmittance: 1e-4,
            near: 0.05,
            tile_size: 16,
        }
    }
}

impl RenderSettings {
    /// Settings without alpha cutoff, for gradient verification.
    pub fn exact() -> Self {
        Self {
            alpha_min: 0.0,
            min_transmittance: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// H×W×3, composited over a black background.
    pub color: Image,
    /// H×W alpha-normalized expected depth; zero where nothing is rendered.
    pub depth: Image,
    pub alpha: Image,
}

impl RenderOutput {
    fn empty(cam: &PinholeCamera) -> Self {
        Self {
            color: Image::new(cam.width, cam.height, 3),
            depth: Image::new(cam.width, cam.height, 1),
            alpha: Image::new(cam.width, cam.height, 1),
        }
    }

    pub fn mean_alpha(&self) -> f64 {
        self.alpha.data.iter().sum::<f64>() / self.alpha.data.len().max(1) as f64
    }
}

/// A gaussian after projection into the current view.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Projected {
    pub index: usize,
    pub p_cam: Vector3<f64>,
    pub u: f64,
    pub v: f64,
    pub sigma: f64,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub radius: f64,
}

impl Projected {
    /// Alpha and unweighted footprint value at pixel `(x, y)`, or `None` when
    /// the gaussian does not contribute there.
    #[inline]
    pub fn alpha_at(&self, x: f64, y: f64, settings: &RenderSettings) -> Option<(f64, f64)> {
        let (dx, dy) = (x - self.u, y - self.v);
        let d2 = dx * dx + dy * dy;
        if d2 > self.radius * self.radius {
            return None;
        }
        let g = (-0.5 * d2 / (self.sigma * self.sigma)).exp();
        let alpha = self.opacity * g;
        (alpha >= settings.alpha_min && alpha > 0.0).then_some((alpha, g))
    }
}

pub(crate) fn project_all(map: &SplatMap, cam: &PinholeCamera, pose: &RigidPose, settings: &RenderSettings) -> Vec<Projected> {
    let f = cam.mean_focal();
    map.gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let p_cam = pose.inverse_transform_point(&g.mean);
            if p_cam.z <= settings.near {
                return None;
            }
            let opacity = g.opacity();
            if opacity < settings.alpha_min {
                return None;
            }
            let sigma = g.scale() * f / p_cam.z;
            let reach = if settings.alpha_min > 0.0 {
                (2.0 * (opacity / settings.alpha_min).ln()).sqrt()
            } else {
                f64::INFINITY
            };
            let radius = sigma * reach.min(settings.max_radius_sigmas);
            let u = cam.fx * p_cam.x / p_cam.z + cam.cx;
            let v = cam.fy * p_cam.y / p_cam.z + cam.cy;
            let (w, h) = (cam.width as f64, cam.height as f64);
            if u + radius < 0.0 || v + radius < 0.0 || u - radius > w - 1.0 || v - radius > h - 1.0 {
                return None;
            }
            Some(Projected {
                index,
                p_cam,
                u,
                v,
                sigma,
                opacity,
                color: g.color,
                radius,
            })
        })
        .collect()
}

/// Per-view data needed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub camera: PinholeCamera,
    pub pose: RigidPose,
    pub settings: RenderSettings,
    pub(crate) projected: Vec<Projected>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

impl ForwardState {
    pub fn visible_count(&self) -> usize {
        self.projected.len()
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ts = self.settings.tile_size;
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * ts;
        let y0 = ty * ts;
        let x1 = (x0 + ts).min(self.camera.width);
        let y1 = (y0 + ts).min(self.camera.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

fn build_tiles(projected: &[Projected], cam: &PinholeCamera, tile_size: usize) -> (Vec<Vec<u32>>, usize) {
    let tiles_x = cam.width.div_ceil(tile_size);
    let tiles_y = cam.height.div_ceil(tile_size);
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.p_cam.z.total_cmp(&pb.p_cam.z).then(pa.index.cmp(&pb.index))
    });
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let (w, h) = (cam.width as f64 - 1.0, cam.height as f64 - 1.0);
    for &k in &order {
        let p = &projected[k as usize];
        let x0 = (p.u - p.radius).ceil().max(0.0);
        let x1 = (p.u + p.radius).floor().min(w);
        let y0 = (p.v - p.radius).ceil().max(0.0);
        let y1 = (p.v + p.radius).floor().min(h);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / tile_size, x1 as usize / tile_size);
        let (ty0, ty1) = (y0 as usize / tile_size, y1 as usize / tile_size);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(k);
            }
        }
    }
    (tiles, tiles_x)
}

pub fn rasterize(map: &SplatMap, cam: &PinholeCamera, pose: &RigidPose) -> RenderOutput {
    render(map, cam, pose, &RenderSettings::default()).0
}

pub fn render(map: &SplatMap, cam: &PinholeCamera, pose: &RigidPose, settings: &RenderSettings) -> (RenderOutput, ForwardState) {
    let projected = project_all(map, cam, pose, settings);
    let (tiles, tiles_x) = build_tiles(&projected, cam, settings.tile_size);
    let state = ForwardState {
        camera: *cam,
        pose: *pose,
        settings: *settings,
        projected,
        tiles,
        tiles_x,
    };
    let tile_results: Vec<Vec<(usize, usize, [f64; 5])>> = (0..state.tiles.len())
        .into_par_iter()
        .map(|t| {
            let list = &state.tiles[t];
            state
                .tile_pixels(t)
                .map(|(x, y)| {
                    let mut c = Vector3::zeros();
                    let (mut n, mut a, mut trans) = (0.0, 0.0, 1.0);
                    for &k in list {
                        let p = &state.projected[k as usize];
                        let Some((alpha, _)) = p.alpha_at(x as f64, y as f64, settings) else {
                            continue;
                        };
                        let w = alpha * trans;
                        c += p.color * w;
                        n += w * p.p_cam.z;
                        a += w;
                        trans *= 1.0 - alpha;
                        if trans < settings.min_transmittance {
                            break;
                        }
                    }
                    let depth = if a > DEPTH_EPS { n / a } else { 0.0 };
                    (x, y, [c.x, c.y, c.z, depth, a])
                })
                .collect()
        })
        .collect();
    let mut out = RenderOutput::empty(cam);
    for tile in tile_results {
        for (x, y, v) in tile {
            for ch in 0..3 {
                *out.color.at_mut(x, y, ch) = v[ch];
            }
            *out.depth.at_mut(x, y, 0) = v[3];
            *out.alpha.at_mut(x, y, 0) = v[4];
        }
    }
    (out, state)
}

/// Naive renderer: for each pixel, gathers every contributing gaussian,
/// sorts by depth and composites. Shares only the footprint predicate with
/// the tiled path.
pub fn rasterize_reference(map: &SplatMap, cam: &PinholeCamera, pose: &RigidPose, settings: &RenderSettings) -> RenderOutput {
    let projected = project_all(map, cam, pose, settings);
    let mut out = RenderOutput::empty(cam);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut hits: Vec<(&Projected, f64)> = projected
                .iter()
                .filter_map(|p| p.alpha_at(x as f64, y as f64, settings).map(|(a, _)| (p, a)))
                .collect();
            hits.sort_by(|a, b| a.0.p_cam.z.total_cmp(&b.0.p_cam.z).then(a.0.index.cmp(&b.0.index)));
            let mut c = Vector3::zeros();
            let (mut n, mut a, mut trans) = (0.0, 0.0, 1.0);
            for (p, alpha) in hits {
                let w = alpha * trans;
                c += p.color * w;
                n += w * p.p_cam.z;
                a += w;
                trans *= 1.0 - alpha;
                if trans < settings.min_transmittance {
                    break;
                }
            }
            for ch in 0..3 {
                *out.color.at_mut(x, y, ch) = c[ch];
            }
            *out.depth.at_mut(x, y, 0) = if a > DEPTH_EPS { n / a } else { 0.0 };
            *out.alpha.at_mut(x, y, 0) = a;
        }
    }
    out
}

/// Upstream gradients of a scalar loss with respect to the rendered images.
#[derive(Debug, Clone)]
pub struct PixelGradients {
    pub color: Image,
    pub depth: Image,
    pub alpha: Image,
}

impl PixelGradients {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: Image::new(width, height, 3),
            depth: Image::new(width, height, 1),
            alpha: Image::new(width, height, 1),
        }
    }
}

/// Gradients with respect to the raw gaussian parameters (mean, log-scale,
/// logit-opacity, color) and the camera pose twist.
#[derive(Debug, Clone)]
pub struct RenderGradients {
    pub params: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    /// Left-multiplicative world-frame twist `[ω; v]` of the camera-to-world pose.
    pub pose: Twist,
    /// ‖∂L/∂(u, v)‖ per gaussian for this view.
    pub screen: Vec<f64>,
    pub visible: Vec<bool>,
}

// Per-contribution accumulator layout.
const G_U: usize = 0;
const G_V: usize = 1;
const G_SIGMA: usize = 2;
const G_OPACITY: usize = 3;
const G_COLOR: usize = 4;
const G_Z: usize = 7;

pub fn backward(map: &SplatMap, state: &ForwardState, upstream: &PixelGradients) -> RenderGradients {
    let settings = &state.settings;
    let tile_grads: Vec<Vec<[f64; 8]>> = (0..state.tiles.len())
        .into_par_iter()
        .map(|t| {
            let list = &state.tiles[t];
            let mut acc = vec![[0.0; 8]; list.len()];
            let mut hits: Vec<(usize, f64, f64, f64)> = Vec::new();
            for (x, y) in state.tile_pixels(t) {
                let (xf, yf) = (x as f64, y as f64);
                hits.clear();
                let mut trans = 1.0;
                let (mut n, mut a) = (0.0, 0.0);
                for (j, &k) in list.iter().enumerate() {
                    let p = &state.projected[k as usize];
                    let Some((alpha, g)) = p.alpha_at(xf, yf, settings) else {
                        continue;
                    };
                    hits.push((j, alpha, g, trans));
                    let w = alpha * trans;
                    n += w * p.p_cam.z;
                    a += w;
                    trans *= 1.0 - alpha;
                    if trans < settings.min_transmittance {
                        break;
                    }
                }
                if hits.is_empty() {
                    continue;
                }
                let gc = Vector3::new(
                    upstream.color.at(x, y, 0),
                    upstream.color.at(x, y, 1),
                    upstream.color.at(x, y, 2),
                );
                let gd = upstream.depth.at(x, y, 0);
                let (gn, ga) = if a > DEPTH_EPS {
                    let depth = n / a;
                    (gd / a, upstream.alpha.at(x, y, 0) - gd * depth / a)
                } else {
                    (0.0, upstream.alpha.at(x, y, 0))
                };
                // Composite of everything behind the current contribution.
                let mut behind_c = Vector3::zeros();
                let (mut behind_z, mut behind_a) = (0.0, 0.0);
                for &(j, alpha, g, t_i) in hits.iter().rev() {
                    let p = &state.projected[list[j] as usize];
                    let z = p.p_cam.z;
                    let w = alpha * t_i;
                    let d_alpha = t_i * (gc.dot(&(p.color - behind_c)) + gn * (z - behind_z) + ga * (1.0 - behind_a));
                    let (dx, dy) = (xf - p.u, yf - p.v);
                    let s2 = p.sigma * p.sigma;
                    let e = &mut acc[j];
                    e[G_U] += d_alpha * alpha * dx / s2;
                    e[G_V] += d_alpha * alpha * dy / s2;
                    e[G_SIGMA] += d_alpha * alpha * (dx * dx + dy * dy) / (s2 * p.sigma);
                    e[G_OPACITY] += d_alpha * g;
                    e[G_COLOR] += gc.x * w;
                    e[G_COLOR + 1] += gc.y * w;
                    e[G_COLOR + 2] += gc.z * w;
                    e[G_Z] += gn * w;
                    behind_c = p.color * alpha + behind_c * (1.0 - alpha);
                    behind_z = alpha * z + (1.0 - alpha) * behind_z;
                    behind_a = alpha + (1.0 - alpha) * behind_a;
                }
            }
            acc
        })
        .collect();

    let mut per_projected = vec![[0.0; 8]; state.projected.len()];
    for (t, grads) in tile_grads.iter().enumerate() {
        for (j, g) in grads.iter().enumerate() {
            let e = &mut per_projected[state.tiles[t][j] as usize];
            for (dst, src) in e.iter_mut().zip(g) {
                *dst += src;
            }
        }
    }

    let cam = &state.camera;
    let f = cam.mean_focal();
    let r = state.pose.rotation_matrix();
    let n = map.len();
    let mut params = vec![[0.0; PARAMS_PER_GAUSSIAN]; n];
    let mut screen = vec![0.0; n];
    let mut visible = vec![false; n];
    let mut pose_grad = Vector6::zeros();
    for (p, g) in state.projected.iter().zip(&per_projected) {
        let gauss = &map.gaussians[p.index];
        let (x, y, z) = (p.p_cam.x, p.p_cam.y, p.p_cam.z);
        let scale = gauss.scale();
        let d_scale = g[G_SIGMA] * f / z;
        let d_pc = Vector3::new(
            g[G_U] * cam.fx / z,
            g[G_V] * cam.fy / z,
            g[G_Z] - g[G_SIGMA] * scale * f / (z * z) - g[G_U] * cam.fx * x / (z * z) - g[G_V] * cam.fy * y / (z * z),
        );
        let d_mean = r * d_pc;
        let out = &mut params[p.index];
        out[0] = d_mean.x;
        out[1] = d_mean.y;
        out[2] = d_mean.z;
        out[3] = d_scale * scale;
        out[4] = g[G_OPACITY] * p.opacity * (1.0 - p.opacity);
        out[5] = g[G_COLOR];
        out[6] = g[G_COLOR + 1];
        out[7] = g[G_COLOR + 2];
        screen[p.index] = (g[G_U] * g[G_U] + g[G_V] * g[G_V]).sqrt();
        visible[p.index] = true;
        // p_cam = Rᵀ(μ − t); ∂p_cam/∂ω = Rᵀ[μ]×, ∂p_cam/∂v = −Rᵀ.
        let d_w = hat(&gauss.mean).transpose() * d_mean;
        pose_grad[0] += d_w.x;
        pose_grad[1] += d_w.y;
        pose_grad[2] += d_w.z;
        pose_grad[3] -= d_mean.x;
        pose_grad[4] -= d_mean.y;
        pose_grad[5] -= d_mean.z;
    }
    RenderGradients {
        params,
        pose: Twist::from_vector(&pose_grad),
        screen,
        visible,
    }
}
