//! Planar RGB images with values in `[0, 1]`.

use std::path::Path;

use crate::error::{invalid, GpenError, Result};
use crate::tensor::Tensor;

/// A `(channels, height, width)` image stored row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return invalid(format!("empty image {channels}x{height}x{width}"));
        }
        if data.len() != channels * height * width {
            return invalid(format!(
                "image {}x{}x{} needs {} values, got {}",
                channels,
                height,
                width,
                channels * height * width,
                data.len()
            ));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.shape() != other.shape() {
            return invalid(format!("shape mismatch {:?} vs {:?}", self.shape(), other.shape()));
        }
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(s / self.data.len() as f64)
    }

    /// Network-domain tensor: values mapped from `[0,1]` to `[-1,1]`.
    pub fn to_signed_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.height, self.width], self.data.iter().map(|v| 2.0 * v - 1.0).collect())
            .expect("image dims are consistent")
    }

    /// Inverse of [`Image::to_signed_tensor`], clamped to `[0,1]`.
    pub fn from_signed_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return invalid(format!("expected a [C,H,W] tensor, got {s:?}"));
        }
        Image::new(s[0], s[1], s[2], t.data().iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect())
    }

    /// Loads any PNG/JPEG as 3-channel RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let img = ::image::open(path)
            .map_err(|e| GpenError::Image { path: path.to_path_buf(), message: e.to_string() })?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &::image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.as_raw();
        Image::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64 / 255.0)
    }

    /// Quantizes to 8-bit RGB; grayscale images are replicated across channels.
    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let (h, w) = (self.height, self.width);
        let mut buf = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let src = if self.channels == 3 { c } else { 0 };
                    buf.push(quantize(self.get(src, y, x)));
                }
            }
        }
        ::image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size matches")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, ::image::ImageFormat::Png)
            .map_err(|e| GpenError::Image { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid("resize target must be non-empty");
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let taps_y = bilinear_taps(self.height, height);
        let taps_x = bilinear_taps(self.width, width);
        let mut out = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            let p = self.plane(c);
            for &(y0, y1, fy) in &taps_y {
                for &(x0, x1, fx) in &taps_x {
                    let top = p[y0 * self.width + x0] * (1.0 - fx) + p[y0 * self.width + x1] * fx;
                    let bot = p[y1 * self.width + x0] * (1.0 - fx) + p[y1 * self.width + x1] * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Image::new(self.channels, height, width, out)
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
