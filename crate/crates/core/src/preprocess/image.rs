use std::path::Path;

use crate::error::{Error, Result};

/// Planar (channel, row, column) image with `f32` samples.
///
/// Raw images carry intensities on the 0..=255 scale; after normalization the
/// range is unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} samples for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Decode an image file. Grayscale files stay single-channel.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        use image::ColorType::*;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color() {
            L8 | La8 | L16 | La16 => {
                let luma = img.to_luma32f();
                Self {
                    channels: 1,
                    height: h,
                    width: w,
                    data: luma.into_raw().into_iter().map(|v| v * 255.0).collect(),
                }
            }
            _ => {
                let rgb = img.to_rgb32f();
                let raw = rgb.into_raw();
                Self::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] * 255.0)
            }
        }
    }

    /// Encode as an 8-bit PNG (grayscale for one channel, RGB for three).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let q = |v: f32| v.round().clamp(0.0, 255.0) as u8;
        let result = match self.channels {
            1 => image::GrayImage::from_raw(w, h, self.data.iter().map(|&v| q(v)).collect())
                .expect("buffer size matches")
                .save(path),
            3 => {
                let mut buf = Vec::with_capacity(self.data.len());
                for y in 0..self.height {
                    for x in 0..self.width {
                        for c in 0..3 {
                            buf.push(q(self.get(c, y, x)));
                        }
                    }
                }
                image::RgbImage::from_raw(w, h, buf).expect("buffer size matches").save(path)
            }
            n => return Err(Error::Image(format!("cannot encode a {n}-channel image"))),
        };
        result.map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Replicate a single channel into three; three-channel images are returned unchanged.
    pub fn to_rgb(&self) -> Result<Self> {
        match self.channels {
            3 => Ok(self.clone()),
            1 => Ok(Self {
                channels: 3,
                height: self.height,
                width: self.width,
                data: self.data.repeat(3),
            }),
            n => Err(Error::Image(format!("expected 1 or 3 channels, got {n}"))),
        }
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let axis = |out: usize, input: usize| -> Vec<(usize, usize, f32)> {
            let scale = input as f32 / out as f32;
            (0..out)
                .map(|o| {
                    let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f32);
                    let lo = src.floor() as usize;
                    let hi = (lo + 1).min(input - 1);
                    (lo, hi, src - lo as f32)
                })
                .collect()
        };
        let ys = axis(height, self.height);
        let xs = axis(width, self.width);
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    data.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        Self {
            channels: self.channels,
            height,
            width,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.channels, self.height, self.width, |c, y, x| self.get(c, y, self.width - 1 - x))
    }

    /// Rescale by `factor` about the image center, keeping the canvas size:
    /// enlargements are center-cropped, reductions are zero-padded.
    pub fn zoom(&self, factor: f32) -> Self {
        let new_h = ((self.height as f32 * factor).round() as usize).max(1);
        let new_w = ((self.width as f32 * factor).round() as usize).max(1);
        if new_h == self.height && new_w == self.width {
            return self.clone();
        }
        let scaled = self.resize_bilinear(new_h, new_w);
        // Offset of the output canvas inside the scaled image (may be negative).
        let off_y = (new_h as isize - self.height as isize) / 2;
        let off_x = (new_w as isize - self.width as isize) / 2;
        Self::from_fn(self.channels, self.height, self.width, |c, y, x| {
            let sy = y as isize + off_y;
            let sx = x as isize + off_x;
            if sy >= 0 && sx >= 0 && (sy as usize) < new_h && (sx as usize) < new_w {
                scaled.get(c, sy as usize, sx as usize)
            } else {
                0.0
            }
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
