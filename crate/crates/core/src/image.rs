//! Height × width × channel images with values in `[0, 1]`.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(contract(format!(
                "{} values do not fill a {height}×{width}×{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_size(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rectangular sub-image starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(contract(format!(
                "crop {height}×{width} at ({top}, {left}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, self.channels, |y, x, c| self.get(top + y, left + x, c)))
    }

    /// Copies the pixels into a `C×H×W` buffer.
    pub fn write_chw<T: Scalar>(&self, dst: &mut [T]) {
        let plane = self.height * self.width;
        for (i, px) in self.data.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                dst[c * plane + i] = T::of(v as f64);
            }
        }
    }

    /// Stacks same-sized images into a `B×C×H×W` tensor.
    pub fn batch<'a, T: Scalar>(images: impl IntoIterator<Item = &'a ImageTensor>) -> Result<Tensor<T>> {
        let images: Vec<&ImageTensor> = images.into_iter().collect();
        let first = images.first().ok_or_else(|| contract("cannot batch zero images"))?;
        let (h, w, c) = first.dims();
        let len = h * w * c;
        let mut data = vec![T::zero(); images.len() * len];
        for (k, img) in images.iter().enumerate() {
            if img.dims() != (h, w, c) {
                return Err(contract(format!("batch mixes {:?} and {:?} images", (h, w, c), img.dims())));
            }
            img.write_chw(&mut data[k * len..(k + 1) * len]);
        }
        Ok(Tensor::from_vec(&[images.len(), c, h, w], data))
    }

    /// Sample `index` of a `B×C×H×W` tensor as an image.
    pub fn from_chw<T: Scalar>(t: &Tensor<T>, index: usize) -> Self {
        let (_, c, h, w) = t.dims4();
        let s = t.sample(index);
        let plane = h * w;
        Self::from_fn(h, w, c, |y, x, ch| s[ch * plane + y * w + x].f64() as f32)
    }

    fn to_u8(v: f32) -> u8 {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    /// Writes RGB images as 8-bit RGB and single-channel images as 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            3 => {
                let raw = self.data.iter().map(|&v| Self::to_u8(v)).collect();
                let img: RgbImage = ImageBuffer::from_raw(w, h, raw).expect("buffer matches dimensions");
                img.save_with_format(path, image::ImageFormat::Png)?;
            }
            1 => {
                let raw = self.data.iter().map(|&v| Self::to_u8(v)).collect();
                let img: GrayImage = ImageBuffer::from_raw(w, h, raw).expect("buffer matches dimensions");
                img.save_with_format(path, image::ImageFormat::Png)?;
            }
            c => return Err(contract(format!("cannot encode a {c}-channel image"))),
        }
        Ok(())
    }

    pub fn load_rgb(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.pixels().flat_map(|Rgb(p)| p.map(|v| v as f32 / 255.0)).collect();
        Self::from_vec(h as usize, w as usize, 3, data)
    }

    pub fn load_gray(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|Luma([v])| *v as f32 / 255.0).collect();
        Self::from_vec(h as usize, w as usize, 1, data)
    }

    /// Side-by-side panels of equal height; single-channel panels are replicated to RGB.
    pub fn hconcat(panels: &[ImageTensor]) -> Result<Self> {
        let h = panels.first().map(|p| p.height).unwrap_or(0);
        if panels.iter().any(|p| p.height != h) {
            return Err(contract("panels must share a height"));
        }
        let w: usize = panels.iter().map(|p| p.width).sum();
        let mut out = Self::new(h, w, 3);
        let mut x0 = 0;
        for p in panels {
            for y in 0..h {
                for x in 0..p.width {
                    for c in 0..3 {
                        let v = p.get(y, x, if p.channels == 1 { 0 } else { c });
                        out.set(y, x0 + x, c, v);
                    }
                }
            }
            x0 += p.width;
        }
        Ok(out)
    }

    /// Stacks panels of equal width vertically.
    pub fn vconcat(rows: &[ImageTensor]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| contract("no rows to stack"))?;
        let (w, c) = (first.width, first.channels);
        if rows.iter().any(|r| r.width != w || r.channels != c) {
            return Err(contract("rows must share width and channel count"));
        }
        let mut data = Vec::new();
        let mut h = 0;
        for r in rows {
            data.extend_from_slice(&r.data);
            h += r.height;
        }
        Self::from_vec(h, w, c, data)
    }
}
