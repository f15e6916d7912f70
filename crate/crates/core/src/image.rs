//! Dense floating-point images and their on-disk formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved `f64` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel-averaged intensity.
    pub fn to_gray(&self) -> Image {
        let c = self.channels as f64;
        let data = self.data.chunks(self.channels).map(|p| p.iter().sum::<f64>() / c).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Writes a 16-bit PNG (1 or 3 channels, values clamped to [0, 1]).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => {
                let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                    ImageBuffer::from_raw(w, h, self.data.iter().map(|&v| q(v)).collect())
                        .expect("buffer size matches");
                buf.save(path)?;
            }
            3 => {
                let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
                    ImageBuffer::from_raw(w, h, self.data.iter().map(|&v| q(v)).collect())
                        .expect("buffer size matches");
                buf.save(path)?;
            }
            c => return Err(Error::InvalidInput(format!("cannot write {c}-channel PNG"))),
        }
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let img = image::open(path)?;
        let rgb = img.to_rgb16();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
        Image::from_data(w as usize, h as usize, 3, data)
    }

    /// Writes a single-channel little-endian PFM (rows stored bottom to top).
    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::InvalidInput("PFM export expects one channel".into()));
        }
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "Pf\n{} {}\n-1.0\n", self.width, self.height)?;
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.write_all(&(self.at(x, y, 0) as f32).to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let mut reader = BufReader::new(File::open(path)?);
        let mut header = Vec::new();
        for n in 1..=3 {
            let mut line = String::new();
            reader.read_line(&mut line)?;
            if line.is_empty() {
                return Err(Error::parse(path, n, "truncated PFM header"));
            }
            header.push(line.trim().to_string());
        }
        if header[0] != "Pf" {
            return Err(Error::parse(path, 1, "expected single-channel 'Pf' magic"));
        }
        let dims: Vec<usize> = header[1]
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::parse(path, 2, "bad dimensions")))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::parse(path, 2, "bad dimensions"));
        }
        let scale: f64 = header[2].parse().map_err(|_| Error::parse(path, 3, "bad scale"))?;
        let little = scale < 0.0;
        let (w, h) = (dims[0], dims[1]);
        let mut raw = vec![0u8; w * h * 4];
        reader.read_exact(&mut raw)?;
        let mut img = Image::new(w, h, 1);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            let (x, row) = (i % w, i / w);
            *img.at_mut(x, h - 1 - row, 0) = v as f64;
        }
        Ok(img)
    }
}
