//! Structural similarity with an 11×11 gaussian window (σ = 1.5) and its
//! gradient. Near the border the window is truncated and renormalized.

use crate::error::Result;
use crate::image::Image;

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Truncated correlation with the kernel along each row.
fn correlate_rows(src: &[f64], w: usize, k: &[f64; 2 * RADIUS + 1]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for (row, dst) in src.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
        for (p, d) in dst.iter_mut().enumerate() {
            if p >= RADIUS && p + RADIUS < w {
                let win: &[f64; 2 * RADIUS + 1] = row[p - RADIUS..=p + RADIUS].try_into().unwrap();
                *d = win.iter().zip(k).map(|(a, b)| a * b).sum();
            } else {
                let (lo, hi) = (p.saturating_sub(RADIUS), (p + RADIUS).min(w - 1));
                *d = (lo..=hi).map(|q| k[q + RADIUS - p] * row[q]).sum();
            }
        }
    }
    out
}

/// Truncated correlation with the kernel down each column.
fn correlate_columns(src: &[f64], w: usize, h: usize, k: &[f64; 2 * RADIUS + 1]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for (y, dst) in out.chunks_exact_mut(w).enumerate() {
        let (lo, hi) = (y.saturating_sub(RADIUS), (y + RADIUS).min(h - 1));
        for q in lo..=hi {
            let kv = k[q + RADIUS - y];
            for (d, s) in dst.iter_mut().zip(&src[q * w..(q + 1) * w]) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Kernel mass inside the image at each position along an axis of length `len`.
fn window_norm(len: usize, k: &[f64; 2 * RADIUS + 1]) -> Vec<f64> {
    (0..len)
        .map(|p| (p.saturating_sub(RADIUS)..=(p + RADIUS).min(len - 1)).map(|q| k[q + RADIUS - p]).sum())
        .collect()
}

fn scale_columns(v: &mut [f64], w: usize, norm: &[f64]) {
    for row in v.chunks_exact_mut(w) {
        row.iter_mut().zip(norm).for_each(|(x, n)| *x /= n);
    }
}

fn scale_rows(v: &mut [f64], w: usize, norm: &[f64]) {
    for (row, n) in v.chunks_exact_mut(w).zip(norm) {
        row.iter_mut().for_each(|x| *x /= n);
    }
}

/// Renormalized separable blur: rows, then columns.
fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let mut t = correlate_rows(src, w, &k);
    scale_columns(&mut t, w, &window_norm(w, &k));
    let mut out = correlate_columns(&t, w, h, &k);
    scale_rows(&mut out, w, &window_norm(h, &k));
    out
}

/// Transpose of [`blur`]; the kernel is symmetric so each correlation is its
/// own adjoint and only the order of the steps reverses.
fn blur_adjoint(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let mut t = src.to_vec();
    scale_rows(&mut t, w, &window_norm(h, &k));
    let mut t = correlate_columns(&t, w, h, &k);
    scale_columns(&mut t, w, &window_norm(w, &k));
    correlate_rows(&t, w, &k)
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

struct ChannelStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(a: &[f64], b: &[f64], w: usize, h: usize) -> ChannelStats {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = blur(a, w, h);
    let mu_b = blur(b, w, h);
    let e_aa = blur(&sq(a, a), w, h);
    let e_bb = blur(&sq(b, b), w, h);
    let e_ab = blur(&sq(a, b), w, h);
    let n = a.len();
    let mut var_a = vec![0.0; n];
    let mut var_b = vec![0.0; n];
    let mut cov = vec![0.0; n];
    for i in 0..n {
        var_a[i] = e_aa[i] - mu_a[i] * mu_a[i];
        var_b[i] = e_bb[i] - mu_b[i] * mu_b[i];
        cov[i] = e_ab[i] - mu_a[i] * mu_b[i];
    }
    ChannelStats { mu_a, mu_b, var_a, var_b, cov }
}

/// Mean SSIM and the channel-averaged per-pixel SSIM map.
pub fn ssim(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (mean, map, _) = ssim_impl(a, b, None)?;
    Ok((mean, map))
}

/// Gradient with respect to `b` of `Σ_p weights(p) · SSIM_map(p)`.
pub fn ssim_backward(a: &Image, b: &Image, weights: &[f64]) -> Result<Image> {
    Ok(ssim_with_grad(a, b, weights)?.2)
}

/// Mean, map and weighted gradient in one pass over the window statistics.
pub fn ssim_with_grad(a: &Image, b: &Image, weights: &[f64]) -> Result<(f64, Image, Image)> {
    let (mean, map, grad) = ssim_impl(a, b, Some(weights))?;
    Ok((mean, map, grad.expect("gradient requested")))
}

fn ssim_impl(a: &Image, b: &Image, weights: Option<&[f64]>) -> Result<(f64, Image, Option<Image>)> {
    a.check_shape(b)?;
    let (w, h) = (a.width, a.height);
    let n = w * h;
    if weights.is_some_and(|wt| wt.len() != n) {
        return Err(crate::error::Error::ShapeMismatch("SSIM weights do not match image".into()));
    }
    let inv_c = 1.0 / a.channels as f64;
    let mut map = Image::new(w, h, 1);
    let mut grad = weights.map(|_| Image::new(w, h, a.channels));
    for c in 0..a.channels {
        let ac = channel(a, c);
        let bc = channel(b, c);
        let s = stats(&ac, &bc, w, h);
        let mut d_mu = vec![0.0; n];
        let mut d_ebb = vec![0.0; n];
        let mut d_eab = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * s.cov[i] + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = s.var_a[i] + s.var_b[i] + C2;
            let val = a1 * a2 / (b1 * b2);
            map.data[i] += val * inv_c;
            if let Some(weights) = weights {
                let wgt = weights[i] * inv_c;
                d_mu[i] = wgt * (2.0 * ma * (a2 - a1) / (b1 * b2) - 2.0 * mb * val * (1.0 / b1 - 1.0 / b2));
                d_ebb[i] = wgt * (-val / b2);
                d_eab[i] = wgt * (2.0 * a1 / (b1 * b2));
            }
        }
        if let Some(grad) = grad.as_mut() {
            let g_mu = blur_adjoint(&d_mu, w, h);
            let g_bb = blur_adjoint(&d_ebb, w, h);
            let g_ab = blur_adjoint(&d_eab, w, h);
            for i in 0..n {
                grad.data[i * a.channels + c] = g_mu[i] + 2.0 * bc[i] * g_bb[i] + ac[i] * g_ab[i];
            }
        }
    }
    let mean = map.data.iter().sum::<f64>() / n as f64;
    Ok((mean, map, grad))
}
