//! Per-pixel uncertainty β predicted by a small MLP over image features, and
//! the self-supervised loss that trains it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Produces an H×W×F feature map for an image.
pub trait FeatureProvider: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn features(&self, image: &Image) -> Image;
}

/// Six channels: local mean intensity, gradient magnitude at two scales, and
/// the RGB color.
#[derive(Debug, Clone, Copy, Default)]
pub struct HandcraftedFeatures;

fn box_mean(gray: &Image, radius: usize) -> Image {
    let (w, h) = (gray.width, gray.height);
    let mut out = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
            let mut sum = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    sum += gray.at(xx, yy, 0);
                }
            }
            *out.at_mut(x, y, 0) = sum / ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        }
    }
    out
}

fn gradient_magnitude(img: &Image, step: usize) -> Image {
    let (w, h) = (img.width, img.height);
    let mut out = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(step), (x + step).min(w - 1));
            let (yu, yd) = (y.saturating_sub(step), (y + step).min(h - 1));
            let gx = (img.at(xr, y, 0) - img.at(xl, y, 0)) / (xr - xl).max(1) as f64;
            let gy = (img.at(x, yd, 0) - img.at(x, yu, 0)) / (yd - yu).max(1) as f64;
            *out.at_mut(x, y, 0) = gx.hypot(gy);
        }
    }
    out
}

impl FeatureProvider for HandcraftedFeatures {
    fn name(&self) -> &'static str {
        "handcrafted"
    }

    fn dim(&self) -> usize {
        6
    }

    fn features(&self, image: &Image) -> Image {
        let gray = image.to_gray();
        let mean = box_mean(&gray, 2);
        let fine = gradient_magnitude(&gray, 1);
        let coarse = gradient_magnitude(&mean, 2);
        let mut out = Image::new(image.width, image.height, 6);
        for i in 0..image.pixel_count() {
            let f = &mut out.data[i * 6..i * 6 + 6];
            f[0] = mean.data[i];
            f[1] = fine.data[i];
            f[2] = coarse.data[i];
            for c in 0..3 {
                f[3 + c] = image.data[i * image.channels + c.min(image.channels - 1)];
            }
        }
        out
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `F → H → H → 1` MLP with tanh hidden activations; `β = softplus(out) + β_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub beta_min: f64,
    pub provider: String,
    /// `W1 (H×F), b1, W2 (H×H), b2, w3 (H), b3`, row-major.
    pub weights: Vec<f64>,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl UncertaintyModel {
    pub fn new(input_dim: usize, hidden: usize, beta_min: f64, provider: &str, seed: u64) -> Self {
        let mut model = Self {
            input_dim,
            hidden,
            beta_min,
            provider: provider.to_string(),
            weights: Vec::new(),
        };
        let l = model.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; l.len];
        let s1 = (1.0 / input_dim as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        for v in &mut w[l.w1..l.b1] {
            *v = rng.random_range(-s1..s1);
        }
        for v in &mut w[l.w2..l.b2] {
            *v = rng.random_range(-s2..s2);
        }
        for v in &mut w[l.w3..l.b3] {
            *v = 0.1 * rng.random_range(-s2..s2);
        }
        // β starts near 1.
        w[l.b3] = (1.0 - beta_min).exp_m1().ln();
        model.weights = w;
        model
    }

    fn layout(&self) -> Layout {
        let (f, h) = (self.input_dim, self.hidden);
        let w1 = 0;
        let b1 = w1 + h * f;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h;
        Layout { w1, b1, w2, b2, w3, b3, len: b3 + 1 }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().len
    }

    fn check(&self, features: &Image) -> Result<()> {
        if features.channels != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature channels for a {}-input model",
                features.channels, self.input_dim
            )));
        }
        Ok(())
    }

    /// Returns the pre-activation output and the two hidden activations.
    fn forward_pixel(&self, x: &[f64], h1: &mut [f64], h2: &mut [f64]) -> f64 {
        let l = self.layout();
        let (f, h) = (self.input_dim, self.hidden);
        let w = &self.weights;
        for j in 0..h {
            let row = &w[l.w1 + j * f..l.w1 + (j + 1) * f];
            h1[j] = (w[l.b1 + j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh();
        }
        for j in 0..h {
            let row = &w[l.w2 + j * h..l.w2 + (j + 1) * h];
            h2[j] = (w[l.b2 + j] + row.iter().zip(h1.iter()).map(|(a, b)| a * b).sum::<f64>()).tanh();
        }
        w[l.b3] + w[l.w3..l.b3].iter().zip(h2.iter()).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn forward(&self, features: &Image) -> Result<Image> {
        self.check(features)?;
        let mut beta = Image::new(features.width, features.height, 1);
        let (mut h1, mut h2) = (vec![0.0; self.hidden], vec![0.0; self.hidden]);
        for (i, x) in features.data.chunks(self.input_dim).enumerate() {
            beta.data[i] = softplus(self.forward_pixel(x, &mut h1, &mut h2)) + self.beta_min;
        }
        Ok(beta)
    }

    /// Gradient of `Σ_p d_beta(p)·β(p)` with respect to the weights.
    pub fn backward(&self, features: &Image, d_beta: &[f64]) -> Result<Vec<f64>> {
        self.check(features)?;
        let l = self.layout();
        let (f, h) = (self.input_dim, self.hidden);
        let w = &self.weights;
        let mut grad = vec![0.0; l.len];
        let (mut h1, mut h2) = (vec![0.0; h], vec![0.0; h]);
        let (mut d2, mut d1) = (vec![0.0; h], vec![0.0; h]);
        for (i, x) in features.data.chunks(f).enumerate() {
            if d_beta[i] == 0.0 {
                continue;
            }
            let out = self.forward_pixel(x, &mut h1, &mut h2);
            // softplus'(z) = sigmoid(z)
            let d_out = d_beta[i] / (1.0 + (-out).exp());
            grad[l.b3] += d_out;
            for j in 0..h {
                grad[l.w3 + j] += d_out * h2[j];
                d2[j] = d_out * w[l.w3 + j] * (1.0 - h2[j] * h2[j]);
            }
            d1.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..h {
                grad[l.b2 + j] += d2[j];
                for k in 0..h {
                    grad[l.w2 + j * h + k] += d2[j] * h1[k];
                    d1[k] += d2[j] * w[l.w2 + j * h + k];
                }
            }
            for k in 0..h {
                let dk = d1[k] * (1.0 - h1[k] * h1[k]);
                grad[l.b1 + k] += dk;
                for m in 0..f {
                    grad[l.w1 + k * f + m] += dk * x[m];
                }
            }
        }
        Ok(grad)
    }
}

/// Lloyd's k-means over feature vectors with k-means++ seeding. Returns the
/// cluster label of every pixel.
pub fn kmeans(features: &Image, k: usize, iterations: usize, seed: u64) -> Vec<usize> {
    let d = features.channels;
    let points: Vec<&[f64]> = features.data.chunks(d).collect();
    let n = points.len();
    let k = k.clamp(1, n.max(1));
    if n == 0 {
        return Vec::new();
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (i, &v) in nearest.iter().enumerate() {
            if target < v {
                pick = i;
                break;
            }
            target -= v;
        }
        centers.push(points[pick].to_vec());
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, centers.last().unwrap()));
        }
    }
    let mut labels = vec![0usize; n];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..centers.len())
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .unwrap();
            changed |= labels[i] != best;
            labels[i] = best;
        }
        let mut sums = vec![vec![0.0; d]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for (c, (s, &cnt)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if cnt > 0 {
                *c = s.iter().map(|v| v / cnt as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Uncertainty objective as a function of the β map, with its gradient:
/// `mean(L'/β²) + λ₃·mean((β − β̄_cluster)²) + λ₄·mean(log β)`.
pub fn uncertainty_objective(beta: &[f64], ssim_error: &[f64], clusters: &[usize], lambda3: f64, lambda4: f64) -> (f64, Vec<f64>) {
    let n = beta.len() as f64;
    let k = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (&b, &c) in beta.iter().zip(clusters) {
        sum[c] += b;
        count[c] += 1;
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; beta.len()];
    for i in 0..beta.len() {
        let (b, e, m) = (beta[i], ssim_error[i], mean[clusters[i]]);
        value += e / (b * b) + lambda3 * (b - m) * (b - m) + lambda4 * b.ln();
        grad[i] = (-2.0 * e / (b * b * b) + 2.0 * lambda3 * (b - m) + lambda4 / b) / n;
    }
    (value / n, grad)
}

#[derive(Debug, Clone)]
pub struct UncertaintyLoss {
    pub value: f64,
    pub grads: Vec<f64>,
    pub beta: Image,
}

/// Loss on the model weights given a detached per-pixel SSIM map. The error
/// term is `L' = (1 − SSIM)/2`.
pub fn loss_uncertainty(
    model: &UncertaintyModel,
    features: &Image,
    ssim_map: &Image,
    clusters: &[usize],
    lambda3: f64,
    lambda4: f64,
) -> Result<UncertaintyLoss> {
    let n = features.pixel_count();
    if ssim_map.pixel_count() != n || clusters.len() != n {
        return Err(Error::ShapeMismatch("uncertainty loss inputs differ in size".into()));
    }
    let beta = model.forward(features)?;
    let error: Vec<f64> = ssim_map.data.iter().map(|s| ((1.0 - s) / 2.0).max(0.0)).collect();
    let (value, d_beta) = uncertainty_objective(&beta.data, &error, clusters, lambda3, lambda4);
    let grads = model.backward(features, &d_beta)?;
    Ok(UncertaintyLoss { value, grads, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::optim::{Adam, AdamState};

    fn random_features(w: usize, h: usize, f: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, f, (0..w * h * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_constant_beta() {
        let mut model = UncertaintyModel::new(6, 8, 0.1, "handcrafted", 0);
        let b3 = model.weights.len() - 1;
        model.weights.iter_mut().for_each(|w| *w = 0.0);
        model.weights[b3] = 0.4;
        let beta = model.forward(&random_features(5, 4, 6, 1)).unwrap();
        let expected = softplus(0.4) + 0.1;
        assert!(beta.data.iter().all(|b| (b - expected).abs() < 1e-15));
    }

    #[test]
    fn beta_respects_floor() {
        for seed in 0..10 {
            let mut model = UncertaintyModel::new(6, 8, 0.1, "handcrafted", seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            model.weights.iter_mut().for_each(|w| *w = rng.random_range(-20.0..20.0));
            let beta = model.forward(&random_features(6, 6, 6, seed)).unwrap();
            assert!(beta.data.iter().all(|&b| b >= 0.1));
        }
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let model = UncertaintyModel::new(6, 8, 0.1, "handcrafted", 0);
        assert!(model.forward(&random_features(2, 2, 5, 0)).is_err());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let model = UncertaintyModel::new(6, 5, 0.1, "handcrafted", 3);
        let feats = random_features(4, 4, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let upstream: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |m: &UncertaintyModel| {
            m.forward(&feats).unwrap().data.iter().zip(&upstream).map(|(b, u)| b * u).sum::<f64>()
        };
        let grad = model.backward(&feats, &upstream).unwrap();
        let h = 1e-6;
        for i in 0..model.parameter_count() {
            let mut p = model.clone();
            p.weights[i] += h;
            let mut m = model.clone();
            m.weights[i] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-4, "weight {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let model = UncertaintyModel::new(6, 4, 0.1, "handcrafted", 8);
        let feats = random_features(4, 3, 6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ssim_map = Image::from_data(4, 3, 1, (0..12).map(|_| rng.random_range(-0.2..1.0)).collect()).unwrap();
        let clusters = kmeans(&feats, 3, 10, 0);
        let loss = loss_uncertainty(&model, &feats, &ssim_map, &clusters, 0.1, 0.01).unwrap();
        let h = 1e-6;
        for i in (0..model.parameter_count()).step_by(3) {
            let mut p = model.clone();
            p.weights[i] += h;
            let mut m = model.clone();
            m.weights[i] -= h;
            let f = |md: &UncertaintyModel| loss_uncertainty(md, &feats, &ssim_map, &clusters, 0.1, 0.01).unwrap().value;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - loss.grads[i]).abs() < 1e-4 * fd.abs().max(1e-3), "weight {i}");
        }
    }

    #[test]
    fn perfect_render_drives_beta_to_floor() {
        let mut model = UncertaintyModel::new(6, 4, 0.1, "handcrafted", 1);
        let feats = random_features(1, 1, 6, 2);
        let ssim_map = Image::filled(1, 1, 1, 1.0);
        let start = model.forward(&feats).unwrap().data[0];
        let mut state = AdamState::new(model.parameter_count());
        for _ in 0..3000 {
            let loss = loss_uncertainty(&model, &feats, &ssim_map, &[0], 0.0, 0.01).unwrap();
            state.step(&Adam::default(), &mut model.weights, &loss.grads, 0.01);
        }
        let end = model.forward(&feats).unwrap().data[0];
        assert!(end < start && end < 0.1 + 0.02, "{start} -> {end}");
    }

    #[test]
    fn constant_beta_minimizes_cluster_variance() {
        let clusters = vec![0; 9];
        let error = vec![0.0; 9];
        let (flat, _) = uncertainty_objective(&[0.7; 9], &error, &clusters, 1.0, 0.0);
        assert!(flat.abs() < 1e-28);
        let mut varied = [0.7; 9];
        varied[4] = 0.9;
        let (bumpy, _) = uncertainty_objective(&varied, &error, &clusters, 1.0, 0.0);
        assert!(bumpy > 0.0);
    }

    #[test]
    fn per_pixel_optimum_grows_with_error() {
        let lambda4 = 0.01;
        let errors = [0.01f64, 0.2];
        let optimum: Vec<f64> = errors.iter().map(|e| (2.0 * e / lambda4).sqrt()).collect();
        let (_, g) = uncertainty_objective(&optimum, &errors, &[0, 1], 0.0, lambda4);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        assert!(optimum[1] > optimum[0]);

        // The trained model reproduces the ordering for distinguishable features.
        let feats = Image::from_data(2, 1, 6, vec![-1.0, 0.0, 0.0, 0.2, 0.2, 0.2, 1.0, 0.5, 0.5, 0.8, 0.8, 0.8]).unwrap();
        let ssim_map = Image::from_data(2, 1, 1, errors.iter().map(|e| 1.0 - 2.0 * e).collect()).unwrap();
        let mut model = UncertaintyModel::new(6, 6, 0.1, "handcrafted", 4);
        let mut state = AdamState::new(model.parameter_count());
        for _ in 0..4000 {
            let loss = loss_uncertainty(&model, &feats, &ssim_map, &[0, 1], 0.0, lambda4).unwrap();
            state.step(&Adam::default(), &mut model.weights, &loss.grads, 0.005);
        }
        let beta = model.forward(&feats).unwrap();
        for (b, o) in beta.data.iter().zip(&optimum) {
            assert!((b - o).abs() < 0.05 * o, "{b} vs {o}");
        }
    }

    #[test]
    fn handcrafted_features_shape_and_flat_gradients() {
        let img = Image::filled(7, 5, 3, 0.4);
        let f = HandcraftedFeatures.features(&img);
        assert_eq!((f.width, f.height, f.channels), (7, 5, 6));
        for px in f.data.chunks(6) {
            assert!((px[0] - 0.4).abs() < 1e-12 && px[1].abs() < 1e-12 && px[2].abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_separates_obvious_groups() {
        let mut data = Vec::new();
        for i in 0..20 {
            let base = if i < 10 { 0.0 } else { 5.0 };
            data.extend_from_slice(&[base + 0.01 * i as f64, base]);
        }
        let feats = Image::from_data(20, 1, 2, data).unwrap();
        let labels = kmeans(&feats, 2, 20, 7);
        assert!(labels[..10].iter().all(|&l| l == labels[0]));
        assert!(labels[10..].iter().all(|&l| l == labels[10]));
        assert_ne!(labels[0], labels[10]);
    }
}
