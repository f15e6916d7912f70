//! Photometric reconstruction loss with uncertainty-weighted L1, SSIM and an
//! edge-aware depth smoothness term.

use super::raster::{PixelGradients, RenderOutput};
use super::ssim::{ssim, ssim_with_grad};
use crate::error::{Error, Result};
use crate::image::Image;

/// Sharpness of the image-edge weighting in [`edge_aware_tv`]. With unit
/// sharpness a full-contrast edge only attenuates the penalty by e⁻¹.
pub const EDGE_SHARPNESS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconWeights {
    /// Weight of the SSIM term (the remainder goes to L1).
    pub ssim: f64,
    /// Weight of the edge-aware depth smoothness term.
    pub depth_tv: f64,
}

impl Default for ReconWeights {
    fn default() -> Self {
        Self { ssim: 0.2, depth_tv: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct ReconLoss {
    pub value: f64,
    pub l1: f64,
    pub ssim: f64,
    pub tv: f64,
    pub grads: PixelGradients,
    /// Per-pixel SSIM between target and render.
    pub ssim_map: Image,
}

/// `(1−λ₁)·mean(|I − Î| / β) + λ₁·(1 − SSIM) + λ₂·TV(depth)`.
///
/// `beta` is a fixed per-pixel weight; no gradient flows into it.
pub fn loss_reconstruction(target: &Image, render: &RenderOutput, beta: &Image, weights: ReconWeights) -> Result<ReconLoss> {
    loss_reconstruction_masked(target, render, beta, None, weights)
}

/// Same as [`loss_reconstruction`] with the L1 and SSIM terms averaged under a
/// per-pixel mask (treated as a constant).
pub fn loss_reconstruction_masked(
    target: &Image,
    render: &RenderOutput,
    beta: &Image,
    mask: Option<&[f64]>,
    weights: ReconWeights,
) -> Result<ReconLoss> {
    target.check_shape(&render.color)?;
    let (w, h) = (target.width, target.height);
    let n = w * h;
    if beta.width != w || beta.height != h || beta.channels != 1 {
        return Err(Error::ShapeMismatch("uncertainty map does not match image".into()));
    }
    if render.depth.width != w || render.depth.height != h {
        return Err(Error::ShapeMismatch("depth map does not match image".into()));
    }
    if beta.data.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::InvalidInput("uncertainty must be positive".into()));
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::ShapeMismatch("mask does not match image".into()));
        }
    }
    let mask_at = |i: usize| mask.map_or(1.0, |m| m[i]);
    let total: f64 = (0..n).map(mask_at).sum();
    let mut grads = PixelGradients::zeros(w, h);
    let ssim_weights: Vec<f64> = (0..n).map(|i| -weights.ssim * mask_at(i) / total.max(f64::MIN_POSITIVE)).collect();
    let (ssim_mean_unmasked, ssim_map, ssim_grad) = if weights.ssim != 0.0 && total > 0.0 {
        let (m, map, g) = ssim_with_grad(target, &render.color, &ssim_weights)?;
        (m, map, Some(g))
    } else {
        let (m, map) = ssim(target, &render.color)?;
        (m, map, None)
    };
    if total <= 0.0 {
        return Ok(ReconLoss {
            value: 0.0,
            l1: 0.0,
            ssim: ssim_mean_unmasked,
            tv: 0.0,
            grads,
            ssim_map,
        });
    }

    let c = target.channels;
    let l1_scale = (1.0 - weights.ssim) / (total * c as f64);
    let mut l1 = 0.0;
    for i in 0..n {
        let m = mask_at(i);
        if m == 0.0 {
            continue;
        }
        let b = beta.data[i];
        for ch in 0..c {
            let k = i * c + ch;
            let diff = render.color.data[k] - target.data[k];
            l1 += m * diff.abs() / b;
            if diff != 0.0 {
                grads.color.data[k] = l1_scale * m * diff.signum() / b;
            }
        }
    }
    l1 /= total * c as f64;

    let ssim_masked = (0..n).map(|i| mask_at(i) * ssim_map.data[i]).sum::<f64>() / total;
    if let Some(g) = ssim_grad {
        for (dst, src) in grads.color.data.iter_mut().zip(&g.data) {
            *dst += src;
        }
    }

    let mut tv = 0.0;
    if weights.depth_tv != 0.0 {
        let (value, g) = edge_aware_tv_with_grad(&render.depth, target)?;
        tv = value;
        for (dst, src) in grads.depth.data.iter_mut().zip(&g) {
            *dst += weights.depth_tv * src;
        }
    }

    Ok(ReconLoss {
        value: (1.0 - weights.ssim) * l1 + weights.ssim * (1.0 - ssim_masked) + weights.depth_tv * tv,
        l1,
        ssim: ssim_masked,
        tv,
        grads,
        ssim_map,
    })
}

/// Mean over pixels of `|∂x D|·exp(−γ|∂x I|) + |∂y D|·exp(−γ|∂y I|)` with
/// forward differences and channel-averaged image gradients.
pub fn edge_aware_tv(depth: &Image, image: &Image) -> Result<f64> {
    Ok(edge_aware_tv_with_grad(depth, image)?.0)
}

pub fn edge_aware_tv_with_grad(depth: &Image, image: &Image) -> Result<(f64, Vec<f64>)> {
    let (w, h) = (depth.width, depth.height);
    if image.width != w || image.height != h || depth.channels != 1 {
        return Err(Error::ShapeMismatch("depth and image differ".into()));
    }
    let n = (w * h) as f64;
    let c = image.channels;
    let img_grad = |x0: usize, y0: usize, x1: usize, y1: usize| {
        (0..c).map(|ch| (image.at(x1, y1, ch) - image.at(x0, y0, ch)).abs()).sum::<f64>() / c as f64
    };
    let mut value = 0.0;
    let mut grad = vec![0.0; w * h];
    let mut term = |x0: usize, y0: usize, x1: usize, y1: usize, grad: &mut Vec<f64>| {
        let weight = (-EDGE_SHARPNESS * img_grad(x0, y0, x1, y1)).exp();
        let d = depth.at(x1, y1, 0) - depth.at(x0, y0, 0);
        value += d.abs() * weight;
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad[y1 * w + x1] += s * weight / n;
        grad[y0 * w + x0] -= s * weight / n;
    };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                term(x, y, x + 1, y, &mut grad);
            }
            if y + 1 < h {
                term(x, y, x, y + 1, &mut grad);
            }
        }
    }
    Ok((value / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn render_of(color: Image, depth: f64) -> RenderOutput {
        let (w, h) = (color.width, color.height);
        RenderOutput {
            color,
            depth: Image::filled(w, h, 1, depth),
            alpha: Image::filled(w, h, 1, 1.0),
        }
    }

    fn random_image(rng: &mut ChaCha8Rng) -> Image {
        Image::from_data(12, 10, 3, (0..360).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = random_image(&mut rng);
        let beta = Image::filled(12, 10, 1, 0.7);
        let loss = loss_reconstruction(&img, &render_of(img.clone(), 2.0), &beta, ReconWeights { ssim: 0.2, depth_tv: 0.05 }).unwrap();
        assert!(loss.value.abs() < 1e-12);
    }

    #[test]
    fn unit_beta_without_extras_is_mean_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng);
        let b = random_image(&mut rng);
        let beta = Image::filled(12, 10, 1, 1.0);
        let loss = loss_reconstruction(&a, &render_of(b.clone(), 1.0), &beta, ReconWeights { ssim: 0.0, depth_tv: 0.0 }).unwrap();
        let mean_l1 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / 360.0;
        assert!((loss.value - mean_l1).abs() < 1e-14);
    }

    #[test]
    fn doubling_beta_halves_contribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng);
        let b = random_image(&mut rng);
        let weights = ReconWeights { ssim: 0.0, depth_tv: 0.0 };
        let ones = Image::filled(12, 10, 1, 1.0);
        let mut half_doubled = ones.clone();
        let doubled: Vec<usize> = (0..120).filter(|i| i % 2 == 0).collect();
        for &i in &doubled {
            half_doubled.data[i] = 2.0;
        }
        let base = loss_reconstruction(&a, &render_of(b.clone(), 1.0), &ones, weights).unwrap().value;
        let changed = loss_reconstruction(&a, &render_of(b.clone(), 1.0), &half_doubled, weights).unwrap().value;
        let doubled_part: f64 = doubled
            .iter()
            .flat_map(|&i| (0..3).map(move |c| i * 3 + c))
            .map(|k| (a.data[k] - b.data[k]).abs())
            .sum::<f64>()
            / 360.0;
        assert!((base - changed - 0.5 * doubled_part).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let img = Image::new(4, 4, 3);
        let beta = Image::filled(4, 4, 1, 1.0);
        let r = render_of(Image::new(5, 4, 3), 1.0);
        assert!(matches!(loss_reconstruction(&img, &r, &beta, ReconWeights::default()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn tv_examples() {
        let flat = Image::filled(10, 10, 3, 0.5);
        assert_eq!(edge_aware_tv(&Image::filled(10, 10, 1, 3.0), &flat).unwrap(), 0.0);

        let mut step_depth = Image::filled(10, 10, 1, 2.0);
        let mut edge_image = Image::filled(10, 10, 3, 0.0);
        for y in 0..10 {
            for x in 5..10 {
                *step_depth.at_mut(x, y, 0) = 2.5;
                for c in 0..3 {
                    *edge_image.at_mut(x, y, c) = 1.0;
                }
            }
        }
        let on_edge = edge_aware_tv(&step_depth, &edge_image).unwrap();
        let on_flat = edge_aware_tv(&step_depth, &flat).unwrap();
        assert!(on_edge < 0.1 * on_flat, "{on_edge} vs {on_flat}");

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d = Image::from_data(6, 5, 1, (0..30).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            let i = Image::from_data(6, 5, 3, (0..90).map(|_| rng.random()).collect()).unwrap();
            assert!(edge_aware_tv(&d, &i).unwrap() >= 0.0);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = random_image(&mut rng);
        let mut render = render_of(random_image(&mut rng), 1.0);
        for v in render.depth.data.iter_mut() {
            *v = rng.random_range(1.0..3.0);
        }
        let beta = Image::from_data(12, 10, 1, (0..120).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
        let mask: Vec<f64> = (0..120).map(|_| rng.random_range(0.0..1.0)).collect();
        let weights = ReconWeights { ssim: 0.3, depth_tv: 0.2 };
        let eval = |r: &RenderOutput| loss_reconstruction_masked(&target, r, &beta, Some(&mask), weights).unwrap().value;
        let grads = loss_reconstruction_masked(&target, &render, &beta, Some(&mask), weights).unwrap().grads;
        let h = 1e-7;
        for k in (0..360).step_by(11) {
            let mut p = render.clone();
            p.color.data[k] += h;
            let mut m = render.clone();
            m.color.data[k] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            assert!((fd - grads.color.data[k]).abs() < 1e-5, "color {k}: {fd} vs {}", grads.color.data[k]);
        }
        for k in (0..120).step_by(7) {
            let mut p = render.clone();
            p.depth.data[k] += h;
            let mut m = render.clone();
            m.depth.data[k] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            assert!((fd - grads.depth.data[k]).abs() < 1e-5, "depth {k}");
        }
    }
}
