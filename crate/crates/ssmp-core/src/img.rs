//! In-memory image representation and PNG round trip.
//!
//! Pixels are `f64` in `[0, 1]`, quantized to 8-bit at the disk boundary.
//! Generated renders are quantized at creation time too, so a dataset held
//! in memory matches the same dataset written to disk and read back.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Channel-major layout `[c][y][x]`, values in `[0, 1]`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.height * self.width + y * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[c * self.height * self.width + y * self.width + x] = v;
    }

    pub fn is_finite_unit(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// Snaps every pixel onto the 8-bit grid.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = ((v.clamp(0.0, 1.0) * 255.0).round()) / 255.0;
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data.clone())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = (self.height as u32, self.width as u32);
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let result = match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                image::GrayImage::from_raw(w, h, buf)
                    .expect("buffer size matches dims")
                    .save(path)
            }
            3 => {
                let mut buf = Vec::with_capacity(self.data.len());
                for y in 0..self.height {
                    for x in 0..self.width {
                        for c in 0..3 {
                            buf.push(to_u8(self.at(c, y, x)));
                        }
                    }
                }
                image::RgbImage::from_raw(w, h, buf)
                    .expect("buffer size matches dims")
                    .save(path)
            }
            n => {
                return Err(Error::invalid(format!(
                    "png io supports 1 or 3 channels, got {n}"
                )))
            }
        };
        result.map_err(|e| Error::invalid(format!("png encode failed for {path:?}: {e}")))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::invalid(format!("png decode failed for {path:?}: {e}")))?;
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                let mut out = Image::zeros(h, w, 1);
                for (x, y, p) in g.enumerate_pixels() {
                    out.set(0, y as usize, x as usize, p.0[0] as f64 / 255.0);
                }
                Ok(out)
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                let mut out = Image::zeros(h, w, 3);
                for (x, y, p) in rgb.enumerate_pixels() {
                    for c in 0..3 {
                        out.set(c, y as usize, x as usize, p.0[c] as f64 / 255.0);
                    }
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_grayscale() {
        let dir = std::env::temp_dir().join("ssmp_img_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.png");
        let mut img = Image::zeros(8, 8, 1);
        for y in 0..8 {
            for x in 0..8 {
                img.set(0, y, x, ((y * 8 + x) as f64) / 63.0);
            }
        }
        img.quantize();
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(img, back);
    }
}
