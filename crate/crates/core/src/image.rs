//! RGB image storage.
//!
//! Images are stored row-major, channel-interleaved (`H × W × 3`) with values
//! in `[0, 1]`. Networks consume `N × 3 × H × W` tensors in `[-1, 1]`; the
//! conversions between the two encodings live here so nothing else has to
//! think about layout.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::dims(format!(
                "image buffer of {} values does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.height == 0 || self.width == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    /// Single channel as a dense `H × W` plane.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(CHANNELS).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions). Out-of-frame coordinates are clamped to the edge.
    pub fn sample_bilinear(&self, y: f32, x: f32) -> [f32; 3] {
        let max_y = (self.height - 1) as f32;
        let max_x = (self.width - 1) as f32;
        let y = y.clamp(0.0, max_y);
        let x = x.clamp(0.0, max_x);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let ty = y - y0 as f32;
        let tx = x - x0 as f32;
        let p00 = self.pixel(y0, x0);
        let p01 = self.pixel(y0, x1);
        let p10 = self.pixel(y1, x0);
        let p11 = self.pixel(y1, x1);
        let mut out = [0.0; 3];
        for c in 0..CHANNELS {
            // lerp form keeps constant regions exactly constant
            let top = p00[c] + (p01[c] - p00[c]) * tx;
            let bottom = p10[c] + (p11[c] - p10[c]) * tx;
            out[c] = top + (bottom - top) * ty;
        }
        out
    }

    /// Resample the window `[y0, y0 + h) × [x0, x0 + w)` (continuous bounds)
    /// onto an `out_h × out_w` grid with half-pixel alignment.
    pub fn resample_window(
        &self,
        y0: f32,
        x0: f32,
        h: f32,
        w: f32,
        out_h: usize,
        out_w: usize,
    ) -> Image {
        let sy = h / out_h as f32;
        let sx = w / out_w as f32;
        Image::from_fn(out_h, out_w, |y, x| {
            let src_y = y0 + (y as f32 + 0.5) * sy - 0.5;
            let src_x = x0 + (x as f32 + 0.5) * sx - 0.5;
            self.sample_bilinear(src_y, src_x)
        })
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Image {
        if (out_h, out_w) == self.dims() {
            return self.clone();
        }
        self.resample_window(0.0, 0.0, self.height as f32, self.width as f32, out_h, out_w)
    }

    /// Snap every value to the nearest 8-bit level.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image::new(h as usize, w as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length checked at construction")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Stack images into an `N × 3 × H × W` tensor in `[-1, 1]`.
pub fn images_to_tensor(images: &[Image], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::dims("cannot stack an empty image batch"))?;
    let (h, w) = first.dims();
    let mut buf = Vec::with_capacity(images.len() * CHANNELS * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::dims(format!(
                "batch mixes {h}x{w} and {}x{} images",
                img.height, img.width
            )));
        }
        for c in 0..CHANNELS {
            buf.extend(img.data.iter().skip(c).step_by(CHANNELS).map(|v| v * 2.0 - 1.0));
        }
    }
    let t = Tensor::from_vec(buf, (images.len(), CHANNELS, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Inverse of [`images_to_tensor`]; values are mapped back to `[0, 1]` and
/// clamped.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4()?;
    if c != CHANNELS {
        return Err(Error::dims(format!("expected 3 channels, got {c}")));
    }
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * CHANNELS * plane;
        let mut data = vec![0.0; plane * CHANNELS];
        for ch in 0..CHANNELS {
            for p in 0..plane {
                let v = flat[base + ch * plane + p];
                data[p * CHANNELS + ch] = ((v + 1.0) * 0.5).clamp(0.0, 1.0);
            }
        }
        out.push(Image::new(h, w, data)?);
    }
    Ok(out)
}
