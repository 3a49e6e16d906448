//! Float RGB image buffer and 8-bit PNG/JPEG conversion.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb};

/// Row-major RGB image with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.data.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches dimensions")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, image::ImageError> {
        Ok(Self::from_rgb8(&image::open(path)?.to_rgb8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), image::ImageError> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)
    }
}

/// Rounds a [0, 1] value to an 8-bit level.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_gray_png(values: &[f32], width: usize, height: usize, path: impl AsRef<Path>) -> Result<(), image::ImageError> {
    let raw = values.iter().map(|&v| quantize(v)).collect();
    let img: GrayImage = ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(width as u32, height as u32, raw)
        .expect("buffer size matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
}
