//! Planar C×H×W images with samples in `[0, 1]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Maps a `[0, 1]` sample to 8 bits: scale by 255, round half away from zero,
/// clamp to `[0, 255]`.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    let s = Float::round(v * 255.0);
    if s.is_nan() {
        0
    } else {
        s.clamp(0.0, 255.0) as u8
    }
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::input(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::input(format!(
                "{channels}x{height}x{width} image needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image::new(channels, height, width, vec![value; channels * height * width])
            .expect("positive dimensions")
    }

    /// Builds an image from 8-bit planar samples.
    pub fn from_u8_planar(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(
            channels,
            height,
            width,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    /// Accepts `[1, C, H, W]` tensors.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 {
            return Err(Error::input(format!("expected a single image, got batch {n}")));
        }
        Image::new(c, h, w, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec([1, self.channels, self.height, self.width], self.data.clone())
            .expect("consistent by construction")
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// 8-bit planar samples under [`quantize_u8`].
    pub fn to_u8_planar(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    /// The image after an 8-bit round trip.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| quantize_u8(v) as f32 / 255.0).collect(),
            ..self.clone()
        }
    }
}
