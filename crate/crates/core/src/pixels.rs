//! Owned RGB8 raster shared by embedders, the generator hub and ingest.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PixelsError {
    #[error("invalid dimensions {width}x{height} for {len} bytes")]
    BadDimensions { width: u32, height: u32, len: usize },
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("encode failed: {0}")]
    Encode(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major RGB image, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct ImagePixels {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImagePixels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImagePixels")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImagePixels {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, PixelsError> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize * 3 {
            return Err(PixelsError::BadDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single colour.
    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// BT.601 luma in `[0, 255]`.
    pub fn luminance(&self, x: u32, y: u32) -> f64 {
        luma(self.pixel(x, y))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PixelsError> {
        let img = image::load_from_memory(bytes).map_err(|e| PixelsError::Decode(e.to_string()))?;
        let rgb = img.into_rgb8();
        let (width, height) = rgb.dimensions();
        Self::new(width, height, rgb.into_raw())
    }

    pub fn open(path: &Path) -> Result<Self, PixelsError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    pub fn to_png(&self) -> Result<Vec<u8>, PixelsError> {
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| PixelsError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), PixelsError> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }
}

pub fn luma([r, g, b]: [u8; 3]) -> f64 {
    0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_buffers() {
        assert!(ImagePixels::new(2, 2, vec![0; 11]).is_err());
        assert!(ImagePixels::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn png_round_trip() {
        let img = ImagePixels::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 80, 7]);
        let back = ImagePixels::decode(&img.to_png().unwrap()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn garbage_does_not_decode() {
        assert!(matches!(
            ImagePixels::decode(b"not an image"),
            Err(PixelsError::Decode(_))
        ));
    }
}
