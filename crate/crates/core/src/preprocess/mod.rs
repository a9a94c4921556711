//! Input conditioning: median denoising, water/reef threshold segmentation,
//! letterbox scaling with box transforms, four-image mosaic composition, and
//! 8-bit image file IO.

mod denoise;
mod io;
mod letterbox;
mod mosaic;
mod segment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use denoise::denoise;
pub use io::{decode_image, encode_pgm, encode_png, encode_ppm, read_image, write_image};
pub use letterbox::{letterbox, LetterboxTransform};
pub use mosaic::{mosaic, mosaic_with_center, MOSAIC_MIN_RETAINED};
pub use segment::{otsu_threshold, segment_water_boundary, to_gray, Segmentation};

/// 8-bit image, interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        let img = Image {
            width,
            height,
            channels,
            pixels,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Image::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::shape(format!("empty image {}x{}", self.width, self.height)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::shape(format!("unsupported channel count {}", self.channels)));
        }
        if self.pixels.len() != self.width * self.height * self.channels {
            return Err(Error::shape(format!(
                "{} pixel values for {}x{}x{}",
                self.pixels.len(),
                self.width,
                self.height,
                self.channels
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        let i = self.index(x, y, c);
        self.pixels[i] = v;
    }

    /// Copies `src` with its top-left corner at `(ox, oy)`, cropping at the edges.
    pub fn blit(&mut self, src: &Image, ox: usize, oy: usize) -> Result<()> {
        if src.channels != self.channels {
            return Err(Error::shape("blit channel mismatch"));
        }
        for y in 0..src.height.min(self.height.saturating_sub(oy)) {
            for x in 0..src.width.min(self.width.saturating_sub(ox)) {
                for c in 0..self.channels {
                    self.set(ox + x, oy + y, c, src.get(x, y, c));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image: Image,
    pub boxes: Vec<LabeledBox>,
}

impl LabeledImage {
    pub fn new(image: Image, boxes: Vec<LabeledBox>) -> Result<Self> {
        let item = LabeledImage { image, boxes };
        item.validate()?;
        Ok(item)
    }

    /// Image is well formed and every box overlaps the image rectangle.
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        let (w, h) = (self.image.width as f64, self.image.height as f64);
        for b in &self.boxes {
            let bb = b.bbox;
            if !bb.is_valid() || bb.x_max <= 0.0 || bb.y_max <= 0.0 || bb.x_min >= w || bb.y_min >= h {
                return Err(Error::shape(format!(
                    "box ({}, {}, {}, {}) does not intersect the {w}x{h} image",
                    bb.x_min, bb.y_min, bb.x_max, bb.y_max
                )));
            }
        }
        Ok(())
    }
}
