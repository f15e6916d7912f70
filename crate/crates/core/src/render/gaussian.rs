use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const PARAMS_PER_GAUSSIAN: usize = 8;

/// Parameter layout of [`Gaussian3D::params`].
pub mod param {
    pub const MEAN: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const LOGIT_OPACITY: usize = 4;
    pub const COLOR: usize = 5;
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Isotropic 3D Gaussian. Scale and opacity are kept in unconstrained form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub log_scale: f64,
    pub logit_opacity: f64,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn new(mean: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        debug_assert!(scale > 0.0 && opacity > 0.0 && opacity < 1.0);
        Self {
            mean,
            log_scale: scale.ln(),
            logit_opacity: logit(opacity),
            color,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.logit_opacity)
    }

    pub fn params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let (m, c) = (self.mean, self.color);
        [m.x, m.y, m.z, self.log_scale, self.logit_opacity, c.x, c.y, c.z]
    }

    pub fn set_params(&mut self, p: &[f64; PARAMS_PER_GAUSSIAN]) {
        self.mean = Vector3::new(p[0], p[1], p[2]);
        self.log_scale = p[3];
        self.logit_opacity = p[4];
        self.color = Vector3::new(p[5], p[6], p[7]);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

/// Adam moments for one gaussian.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub first: [f64; PARAMS_PER_GAUSSIAN],
    pub second: [f64; PARAMS_PER_GAUSSIAN],
    pub steps: u64,
}

/// Growable set of gaussians with per-gaussian optimizer state and the ring in
/// which each gaussian was created.
#[derive(Debug, Clone, Default)]
pub struct SplatMap {
    pub gaussians: Vec<Gaussian3D>,
    pub moments: Vec<Moments>,
    pub ring_tags: Vec<usize>,
}

impl SplatMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gaussians(gaussians: Vec<Gaussian3D>) -> Self {
        let n = gaussians.len();
        Self {
            gaussians,
            moments: vec![Moments::default(); n],
            ring_tags: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn push(&mut self, g: Gaussian3D, ring: usize) {
        self.gaussians.push(g);
        self.moments.push(Moments::default());
        self.ring_tags.push(ring);
    }

    pub fn extend(&mut self, gs: impl IntoIterator<Item = Gaussian3D>, ring: usize) {
        for g in gs {
            self.push(g, ring);
        }
    }

    /// Keeps the gaussians for which `keep` returns true.
    pub fn retain_indices(&mut self, keep: impl Fn(usize) -> bool) {
        let mut i = 0;
        let mut write = 0;
        let n = self.len();
        while i < n {
            if keep(i) {
                self.gaussians.swap(write, i);
                self.moments.swap(write, i);
                self.ring_tags.swap(write, i);
                write += 1;
            }
            i += 1;
        }
        self.gaussians.truncate(write);
        self.moments.truncate(write);
        self.ring_tags.truncate(write);
    }

    pub fn is_valid(&self) -> bool {
        self.gaussians.iter().all(|g| g.is_finite() && g.scale() > 0.0)
            && self.moments.len() == self.len()
            && self.ring_tags.len() == self.len()
    }

    /// Binary little-endian PLY with activated `x y z scale opacity red green blue`.
    pub fn write_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&self.ply_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn ply_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(256 + self.len() * 32);
        let header = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n\
             property float scale\nproperty float opacity\n\
             property float red\nproperty float green\nproperty float blue\nend_header\n",
            self.len()
        );
        bytes.extend_from_slice(header.as_bytes());
        for g in &self.gaussians {
            let vals = [
                g.mean.x,
                g.mean.y,
                g.mean.z,
                g.scale(),
                g.opacity(),
                g.color.x,
                g.color.y,
                g.color.z,
            ];
            for v in vals {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        bytes
    }

    pub fn read_ply(path: impl AsRef<Path>) -> Result<SplatMap> {
        let path = path.as_ref();
        let mut reader = BufReader::new(File::open(path)?);
        let mut count = None;
        let mut props = Vec::new();
        let mut line_no = 0;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::parse(path, line_no, "missing end_header"));
            }
            line_no += 1;
            let line = line.trim();
            let mut words = line.split_whitespace();
            match words.next() {
                Some("ply") | Some("comment") | None => {}
                Some("format") => {
                    if words.next() != Some("binary_little_endian") {
                        return Err(Error::parse(path, line_no, "only binary_little_endian is supported"));
                    }
                }
                Some("element") => {
                    if words.next() == Some("vertex") {
                        let n = words.next().and_then(|s| s.parse::<usize>().ok());
                        count = Some(n.ok_or_else(|| Error::parse(path, line_no, "bad vertex count"))?);
                    }
                }
                Some("property") => {
                    if words.next() != Some("float") {
                        return Err(Error::parse(path, line_no, "only float properties are supported"));
                    }
                    props.push(words.next().unwrap_or_default().to_string());
                }
                Some("end_header") => break,
                Some(other) => return Err(Error::parse(path, line_no, format!("unexpected '{other}'"))),
            }
        }
        let expected = ["x", "y", "z", "scale", "opacity", "red", "green", "blue"];
        if props != expected {
            return Err(Error::parse(path, line_no, format!("unexpected properties {props:?}")));
        }
        let n = count.ok_or_else(|| Error::parse(path, line_no, "no vertex element"))?;
        let mut raw = vec![0u8; n * 32];
        reader.read_exact(&mut raw)?;
        let mut gaussians = Vec::with_capacity(n);
        for rec in raw.chunks_exact(32) {
            let f: Vec<f64> = rec
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            if f[3] <= 0.0 || f[4] <= 0.0 || f[4] >= 1.0 {
                return Err(Error::InvalidInput("PLY gaussian with invalid scale or opacity".into()));
            }
            gaussians.push(Gaussian3D::new(
                Vector3::new(f[0], f[1], f[2]),
                f[3],
                f[4],
                Vector3::new(f[5], f[6], f[7]),
            ));
        }
        Ok(SplatMap::from_gaussians(gaussians))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(n: usize, seed: u64) -> SplatMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SplatMap::from_gaussians(
            (0..n)
                .map(|_| {
                    Gaussian3D::new(
                        Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)),
                        rng.random_range(0.01..0.5),
                        rng.random_range(0.01..0.99),
                        Vector3::new(rng.random(), rng.random(), rng.random()),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn ply_round_trip_is_bit_stable() {
        let dir = tempfile::tempdir().unwrap();
        let map = random_map(100, 3);
        let a = dir.path().join("a.ply");
        map.write_ply(&a).unwrap();
        let back = SplatMap::read_ply(&a).unwrap();
        assert_eq!(back.len(), 100);
        assert_eq!(back.ply_bytes(), map.ply_bytes());
    }

    #[test]
    fn ply_rejects_foreign_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, "ply\nformat ascii 1.0\nend_header\n").unwrap();
        assert!(SplatMap::read_ply(&path).is_err());
    }

    #[test]
    fn retain_keeps_state_aligned() {
        let mut map = random_map(6, 1);
        map.ring_tags = vec![0, 1, 2, 3, 4, 5];
        let kept: Vec<_> = [1, 3, 4].iter().map(|&i| map.gaussians[i]).collect();
        map.retain_indices(|i| i == 1 || i == 3 || i == 4);
        assert_eq!(map.gaussians, kept);
        assert_eq!(map.ring_tags, vec![1, 3, 4]);
        assert!(map.is_valid());
    }
}
