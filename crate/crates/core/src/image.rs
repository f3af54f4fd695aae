//! Planar floating-point images with intensities in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};

/// `channels × height × width` intensities stored plane by plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Luma (Rec. 601 weights for three channels, plain mean otherwise).
    pub fn luma(&self) -> Vec<f64> {
        let n = self.width * self.height;
        match self.channels {
            1 => self.plane(0).to_vec(),
            3 => (0..n)
                .map(|k| {
                    0.299 * self.data[k] + 0.587 * self.data[n + k] + 0.114 * self.data[2 * n + k]
                })
                .collect(),
            c => (0..n)
                .map(|k| (0..c).map(|ch| self.data[ch * n + k]).sum::<f64>() / c as f64)
                .collect(),
        }
    }

    /// Converts to `channels` planes: luma for one channel, replicated luma
    /// when expanding a single plane.
    pub fn with_channels(&self, channels: usize) -> Image {
        if channels == self.channels {
            return self.clone();
        }
        let n = self.width * self.height;
        let luma = self.luma();
        let mut data = Vec::with_capacity(n * channels);
        if channels == 1 || self.channels == 1 {
            for _ in 0..channels {
                data.extend_from_slice(&luma);
            }
        } else {
            for c in 0..channels {
                if c < self.channels {
                    data.extend_from_slice(self.plane(c));
                } else {
                    data.extend_from_slice(&luma);
                }
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels,
            data,
        }
    }

    /// Bilinear sample of channel `c` at continuous position `(x, y)`.
    /// Returns `None` outside `[0, w-1] × [0, h-1]`.
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> Option<f64> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = x - x0 as f64;
        let ty = y - y0 as f64;
        let p = self.plane(c);
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        let top = p[row0 + x0] * (1.0 - tx) + p[row0 + x1] * tx;
        let bot = p[row1 + x0] * (1.0 - tx) + p[row1 + x1] * tx;
        Some(top * (1.0 - ty) + bot * ty)
    }

    /// Bilinear resize with pixel-centre alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mw = (self.width - 1) as f64;
        let mh = (self.height - 1) as f64;
        Image::from_fn(width, height, self.channels, |c, x, y| {
            let u = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, mw);
            let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, mh);
            self.sample_bilinear(c, u, v).unwrap_or(0.0)
        })
    }

    /// Loads PNG or PGM/PPM (binary or ASCII).
    pub fn load(path: &Path) -> Result<Image> {
        let dynimg = ::image::open(path).map_err(|e| Error::ImageFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let color = dynimg.color();
        if color.has_color() {
            let rgb = dynimg.to_rgb32f();
            let (w, h) = rgb.dimensions();
            let (w, h) = (w as usize, h as usize);
            let raw = rgb.into_raw();
            Ok(Image::from_fn(w, h, 3, |c, x, y| {
                f64::from(raw[(y * w + x) * 3 + c]).clamp(0.0, 1.0)
            }))
        } else {
            let gray = dynimg.to_luma32f();
            let (w, h) = gray.dimensions();
            let (w, h) = (w as usize, h as usize);
            let raw = gray.into_raw();
            Ok(Image::from_fn(w, h, 1, |_, x, y| {
                f64::from(raw[y * w + x]).clamp(0.0, 1.0)
            }))
        }
    }

    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let rgb = self.with_channels(3);
        ::image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (rgb.get(c, x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            ::image::Rgb([px(0), px(1), px(2)])
        })
    }

    /// Writes by extension: `.png`, `.ppm` or `.pgm`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let res = match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => {
                let luma = self.luma();
                ::image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
                    let v = luma[y as usize * self.width + x as usize];
                    ::image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
                })
                .save(path)
            }
            _ => self.to_rgb8().save(path),
        };
        res.map_err(|e| Error::ImageFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Largest multiple of four not exceeding `n` (at least 4).
pub fn floor_to_multiple_of_4(n: usize) -> usize {
    (n / 4).max(1) * 4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_grid_values_exactly() {
        let img = Image::from_fn(4, 3, 1, |_, x, y| (x + 10 * y) as f64 / 40.0);
        assert_eq!(img.sample_bilinear(0, 2.0, 1.0), Some(12.0 / 40.0));
        let mid = img.sample_bilinear(0, 1.5, 0.5).unwrap();
        assert!((mid - 6.5 / 40.0).abs() < 1e-15);
        assert_eq!(img.sample_bilinear(0, 3.01, 0.0), None);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = Image::from_fn(8, 8, 3, |c, x, y| ((c + x * y) % 7) as f64 / 7.0);
        assert_eq!(img.resize_bilinear(8, 8), img);
        let small = img.resize_bilinear(4, 4);
        assert_eq!((small.width(), small.height(), small.channels()), (4, 4, 3));
    }

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(6, 5, 1, |_, x, y| ((x + y) * 17 % 256) as f64 / 255.0);
        let path = dir.path().join("a.pgm");
        img.save(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert_eq!(back.channels(), 1);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn multiple_of_four() {
        assert_eq!(floor_to_multiple_of_4(63), 60);
        assert_eq!(floor_to_multiple_of_4(2), 4);
    }
}
