use serde::{Deserialize, Serialize};

use super::{Image, LabeledBox, LabeledImage};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Affine map from source to letterboxed coordinates: `x' = scale x + pad_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub content_w: usize,
    pub content_h: usize,
    pub target_w: usize,
    pub target_h: usize,
}

impl LetterboxTransform {
    pub fn new(src_w: usize, src_h: usize, target_w: usize, target_h: usize) -> Result<Self> {
        if src_w == 0 || src_h == 0 || target_w == 0 || target_h == 0 {
            return Err(Error::param("letterbox sizes must be positive"));
        }
        let scale = (target_w as f64 / src_w as f64).min(target_h as f64 / src_h as f64);
        let content_w = ((src_w as f64 * scale).round() as usize).clamp(1, target_w);
        let content_h = ((src_h as f64 * scale).round() as usize).clamp(1, target_h);
        Ok(LetterboxTransform {
            scale,
            pad_x: ((target_w - content_w) / 2) as f64,
            pad_y: ((target_h - content_h) / 2) as f64,
            content_w,
            content_h,
            target_w,
            target_h,
        })
    }

    pub fn forward(&self, b: &BBox) -> BBox {
        BBox {
            x_min: b.x_min * self.scale + self.pad_x,
            y_min: b.y_min * self.scale + self.pad_y,
            x_max: b.x_max * self.scale + self.pad_x,
            y_max: b.y_max * self.scale + self.pad_y,
        }
    }

    pub fn inverse(&self, b: &BBox) -> BBox {
        BBox {
            x_min: (b.x_min - self.pad_x) / self.scale,
            y_min: (b.y_min - self.pad_y) / self.scale,
            x_max: (b.x_max - self.pad_x) / self.scale,
            y_max: (b.y_max - self.pad_y) / self.scale,
        }
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub(crate) fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Image {
    let mut out = Image {
        width: out_w,
        height: out_h,
        channels: img.channels,
        pixels: vec![0; out_w * out_h * img.channels],
    };
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let axis = |d: usize, s: f64, n: usize| {
        let p = ((d as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        (i0, (i0 + 1).min(n - 1), p - i0 as f64)
    };
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for x in 0..out_w {
            let (x0, x1, fx) = axis(x, sx, img.width);
            for c in 0..img.channels {
                let top = f64::from(img.get(x0, y0, c)) * (1.0 - fx) + f64::from(img.get(x1, y0, c)) * fx;
                let bot = f64::from(img.get(x0, y1, c)) * (1.0 - fx) + f64::from(img.get(x1, y1, c)) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                out.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Aspect-preserving resize into `target_w x target_h` with centered padding.
/// Boxes follow the same affine map and are clipped to the target.
pub fn letterbox(
    item: &LabeledImage,
    target_w: usize,
    target_h: usize,
    pad_value: u8,
) -> Result<(LabeledImage, LetterboxTransform)> {
    item.validate()?;
    let img = &item.image;
    let t = LetterboxTransform::new(img.width, img.height, target_w, target_h)?;
    let content = resize_bilinear(img, t.content_w, t.content_h);
    let mut canvas = Image::filled(target_w, target_h, img.channels, pad_value)?;
    canvas.blit(&content, t.pad_x as usize, t.pad_y as usize)?;
    let boxes = item
        .boxes
        .iter()
        .map(|b| LabeledBox {
            bbox: t.forward(&b.bbox).clip(target_w as f64, target_h as f64),
            class_id: b.class_id,
        })
        .collect();
    Ok((LabeledImage { image: canvas, boxes }, t))
}
